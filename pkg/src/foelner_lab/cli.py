"""Batch runner: ``foelner-lab {defect,sequence,probe,classify,verify}``.

Every run resolves its configuration (config file, then flags), echoes it in
the output header and writes CSV or JSON.  Exit codes: 0 success, 2 invalid
input, 3 suite violations or a failed certified bound.

CSV columns
    defect    norm_kind,value,error_bound,exact,rank,ambient_size
    sequence  step,rank,hs_defect,op_defect,certified_bound,scheme
    probe     rank,best_value,restarts,converged,seed
    classify  rank,best_value,envelope,cell,ell_estimate
    verify    suite,trials,violations,worst_margin,seed
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from . import __version__, defect, opmodel, probe, projlib, schemes, verify
from .errors import CertificationError, LabError, ValidationError

TOOL = "foelner-lab"
SCHEMA_VERSION = 1

COLUMNS = {
    "defect": ["norm_kind", "value", "error_bound", "exact", "rank", "ambient_size"],
    "sequence": ["step", "rank", "hs_defect", "op_defect", "certified_bound", "scheme"],
    "probe": ["rank", "best_value", "restarts", "converged", "seed"],
    "classify": ["rank", "best_value", "envelope", "cell", "ell_estimate"],
    "verify": ["suite", "trials", "violations", "worst_margin", "seed"],
}

DEFAULTS = {
    "common": {"seed": 0, "format": "csv", "output": None},
    "defect": {"operator": None, "projection": None, "norm": "all"},
    "sequence": {"operator": None, "scheme": "interval", "ranks": None, "steps": None,
                 "epsilons": None, "extender": "interval", "with_op": True},
    "probe": {"operators": None, "ranks": None, "ambient": None, "ambient_depth": None,
              "restarts": 20, "iters": 200, "objective": "max", "echo_projection": False},
    "classify": {"operators": None, "max_rank": 16, "ambient": 256, "ambient_depth": None,
                 "tol": 1e-8, "restarts": 10, "iters": 200, "ranks": None},
    "verify": {"suite": "all", "trials": None, "dim": None, "s": None, "dims": None,
               "operator": None, "ranks": None},
}

SUITES = ("perturbation", "sum_projections", "tensor", "trace_hs")


def log(msg: str):
    print(f"[{TOOL}] {msg}", file=sys.stderr, flush=True)


# --- parsing helpers ------------------------------------------------------


def parse_ranks(text) -> list[int]:
    """``"1..4,8,16"`` -> [1, 2, 3, 4, 8, 16]; ``a..b`` is inclusive."""
    if isinstance(text, list):
        return [int(x) for x in text]
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                a, b = part.split("..", 1)
                a, b = int(a), int(b)
                if b < a:
                    raise ValueError
                out.extend(range(a, b + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ValidationError("ranks", f"cannot parse {part!r}") from None
    if not out:
        raise ValidationError("ranks", "empty rank list")
    return out


def parse_floats(text, field: str) -> list[float]:
    if isinstance(text, list):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ValidationError(field, f"cannot parse {text!r}") from None


def load_doc(value, field: str):
    """A JSON document given inline, as a file path, or already parsed."""
    if value is None:
        raise ValidationError(field, "required")
    if not isinstance(value, str):
        return value
    text = value.strip()
    if not text.startswith(("{", "[")):
        try:
            text = Path(value).read_text()
        except OSError as exc:
            raise ValidationError(field, f"cannot read {value!r}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(field, f"malformed JSON: {exc.msg} at line {exc.lineno}") from None


def resolve(args) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[args.command])
    if args.config:
        doc = load_doc(args.config, "config")
        if not isinstance(doc, dict):
            raise ValidationError("config", "expected a JSON object")
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise ValidationError("config.schema_version", f"must be {SCHEMA_VERSION}")
        if doc.get("subcommand", args.command) != args.command:
            raise ValidationError("config.subcommand", f"config is for {doc['subcommand']!r}")
        for key, val in doc.items():
            if key in ("schema_version", "subcommand"):
                continue
            key = key.replace("-", "_")
            if key not in cfg:
                raise ValidationError(f"config.{key}", "unknown key")
            cfg[key] = val
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("operator", "operators", "projection"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = load_doc(cfg[key], key)
    cfg["subcommand"] = args.command
    cfg["schema_version"] = SCHEMA_VERSION
    return cfg


# --- output ----------------------------------------------------------------


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def render(cfg: dict, rows: list[dict], extra: dict | None = None) -> str:
    cols = COLUMNS[cfg["subcommand"]]
    shown = {k: v for k, v in cfg.items() if k != "output"}
    if cfg["format"] == "json":
        doc = {"tool": TOOL, "version": __version__, "config": shown,
               "records": [{c: _jsonable(r.get(c)) for c in cols} for r in rows]}
        if extra:
            doc.update(extra)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    buf.write(f"# {TOOL} {__version__}\n")
    buf.write("# config: " + json.dumps(shown, sort_keys=True, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def emit(cfg, text: str):
    if cfg["output"]:
        Path(cfg["output"]).write_text(text)
        log(f"wrote {cfg['output']}")
    else:
        sys.stdout.write(text)


# --- subcommands ----------------------------------------------------------


def _words_window(ops, depth):
    sort = ops[0].sort
    if not (isinstance(sort, tuple) and sort[0] == "word"):
        raise ValidationError("ambient_depth", "only meaningful for word (Cuntz) operators")
    if depth < 2:
        raise ValidationError("ambient_depth", "must be at least 2")
    # supports stay one level below the model depth so images remain in the model
    return opmodel.word_window(sort[1], depth - 1)


def _family(cfg, ambient_key="ambient"):
    doc = cfg["operators"]
    depth = cfg.get("ambient_depth")
    if depth is not None and isinstance(doc, dict) and doc.get("type") == "cuntz" and "depth" not in doc:
        doc = dict(doc, depth=depth)
    ops = opmodel.build_family(doc)
    if depth is not None:
        return ops, _words_window(ops, int(depth))
    amb = cfg.get(ambient_key)
    if amb is None:
        raise ValidationError("ambient", "give --ambient or --ambient-depth")
    return ops, int(amb)


def run_defect(cfg):
    op = opmodel.build_operator(cfg["operator"])
    P = projlib.projection_from_json(cfg["projection"])
    kinds = list(defect.DEFECTS) if cfg["norm"] == "all" else [cfg["norm"]]
    rows = []
    for kind in kinds:
        if kind not in defect.DEFECTS:
            raise ValidationError("norm", f"unknown norm {kind!r}")
        rep = defect.DEFECTS[kind](op, P)
        rows.append({"norm_kind": rep.norm_kind, "value": rep.value, "error_bound": rep.error_bound,
                     "exact": rep.exact, "rank": rep.rank, "ambient_size": rep.ambient_size})
    return rows, None, 0


def _seq_rows(records):
    return [{"step": r.step, "rank": r.rank, "hs_defect": r.hs_defect, "op_defect": r.op_defect,
             "certified_bound": r.certified_bound, "scheme": r.scheme} for r in records]


def run_sequence(cfg):
    scheme = cfg["scheme"]
    doc = cfg["operator"]
    with_op = bool(cfg["with_op"])
    if scheme == "greedy":
        ops = opmodel.build_family(doc)
        steps = cfg["steps"]
        eps = parse_floats(cfg["epsilons"], "epsilons") if cfg["epsilons"] is not None else None
        if steps is None and eps is None:
            raise ValidationError("steps", "greedy needs --steps or --epsilons")
        ext = {"interval": schemes.IntervalExtender, "trivial": schemes.TrivialExtender,
               "optimizer": lambda: probe.OptimizerExtender(seed=cfg["seed"])}.get(cfg["extender"])
        if ext is None:
            raise ValidationError("extender", f"unknown extender {cfg['extender']!r}")
        records = schemes.greedy_proper_sequence(ops, ext(), eps, None,
                                                 None if steps is None else int(steps))
        rows = _seq_rows(records)
        for row, rec in zip(rows, records):
            if rec.failed:
                row["scheme"] += ":failed"
        return rows, None, 0
    ranks = parse_ranks(cfg["ranks"]) if cfg["ranks"] is not None else None
    if ranks is None:
        raise ValidationError("ranks", "required for this scheme")
    op = opmodel.build_operator(doc)
    if scheme == "interval":
        records = schemes.interval_sequence(op, ranks, with_op)
    elif scheme == "tensor":
        if not isinstance(op, opmodel.TensorProduct):
            raise ValidationError("operator", "tensor scheme needs a tensor operator")
        left = schemes.interval_sequence(op.left, ranks, False)
        right = schemes.interval_sequence(op.right, ranks, False)
        records = schemes.tensor_sequence(op, left, right, with_op)
    elif scheme in ("lift-left", "lift-right"):
        if not isinstance(op, opmodel.DirectSum):
            raise ValidationError("operator", "lift schemes need a direct_sum operator")
        side = scheme.split("-")[1]
        part = op.left if side == "left" else op.right
        records = schemes.lift_direct_sum(op, schemes.interval_sequence(part, ranks, False), side, with_op)
    else:
        raise ValidationError("scheme", f"unknown scheme {scheme!r}")
    return _seq_rows(records), None, 0


def run_probe(cfg):
    ops, ambient = _family(cfg)
    if cfg["ranks"] is None:
        raise ValidationError("ranks", "required")
    ranks = parse_ranks(cfg["ranks"])
    log(f"probing {len(ops)} operator(s), ranks {ranks[0]}..{ranks[-1]}, "
        f"{cfg['restarts']} restarts x {cfg['iters']} iters")
    curve = probe.epsilon_curve(ops, ranks, ambient, int(cfg["restarts"]), int(cfg["iters"]),
                                int(cfg["seed"]), cfg["objective"])
    rows = [{"rank": r.rank, "best_value": r.best_value, "restarts": r.restarts,
             "converged": r.converged, "seed": r.seed} for r in curve]
    extra = None
    if cfg["echo_projection"]:
        extra = {"best_projections": [projlib.projection_to_json(r.best_projection) for r in curve]}
    return rows, extra, 0


def run_classify(cfg):
    ops, ambient = _family(cfg)
    params = probe.ClassifyParams(max_rank=int(cfg["max_rank"]), ambient=ambient, tol=float(cfg["tol"]),
                                  restarts=int(cfg["restarts"]), iters=int(cfg["iters"]),
                                  seed=int(cfg["seed"]),
                                  ranks=parse_ranks(cfg["ranks"]) if cfg["ranks"] is not None else None)
    rep = probe.classify(ops, params)
    log(f"cell {rep.cell}")
    env, cur = [], math.inf
    for _, v in rep.epsilon_curve:
        cur = min(cur, v)
        env.append(cur)
    rows = [{"rank": r, "best_value": v, "envelope": e, "cell": rep.cell, "ell_estimate": rep.ell_estimate}
            for (r, v), e in zip(rep.epsilon_curve, env)]
    extra = {"cell": rep.cell, "ell_estimate": rep.ell_estimate, "evidence": rep.evidence}
    return rows, extra, 0


def run_verify(cfg):
    suites = SUITES if cfg["suite"] == "all" else (cfg["suite"],)
    seed = int(cfg["seed"])
    reports = []
    for name in suites:
        log(f"suite {name}")
        if name == "perturbation":
            rep = verify.check_perturbation_bound(int(cfg["trials"] or 1000), int(cfg["dim"] or 24), seed)
        elif name == "sum_projections":
            rep = verify.check_sum_projections(int(cfg["trials"] or 500), int(cfg["dim"] or 32),
                                               int(cfg["s"] or 2), seed)
        elif name == "tensor":
            dims = tuple(int(x) for x in parse_floats(cfg["dims"], "dims")) if cfg["dims"] else (8, 8)
            if len(dims) != 2:
                raise ValidationError("dims", "need two dimensions")
            rep = verify.check_tensor_bound(int(cfg["trials"] or 500), dims, seed)
        elif name == "trace_hs":
            op = opmodel.build_operator(cfg["operator"] if cfg["operator"] is not None
                                        else {"type": "unilateral_shift"})
            ranks = parse_ranks(cfg["ranks"]) if cfg["ranks"] is not None else [16, 64, 256, 1024]
            rep = verify.check_trace_hs_equivalence(op, ranks)
        else:
            raise ValidationError("suite", f"unknown suite {name!r}")
        if rep.starved:
            log(f"suite {name}: sampling starved after {rep.attempts} attempts")
        reports.append(rep)
    rows = [r.to_json() for r in reports]
    bad = sum(r.violations for r in reports)
    return rows, None, 3 if bad else 0


RUNNERS = {"defect": run_defect, "sequence": run_sequence, "probe": run_probe,
           "classify": run_classify, "verify": run_verify}


# --- argparse ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with \"schema_version\": 1")
    common.add_argument("-o", "--output", help="output path (default stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--seed", type=int)

    p = argparse.ArgumentParser(prog=TOOL, description="Følner defect laboratory")
    p.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("defect", parents=[common], help="defect of one operator against one projection")
    d.add_argument("--operator", help="operator spec (file or inline JSON)")
    d.add_argument("--projection", help="projection spec (file or inline JSON)")
    d.add_argument("--norm", choices=("hs", "trace", "op", "all"))

    s = sub.add_parser("sequence", parents=[common], help="build a Følner sequence")
    s.add_argument("--operator", help="operator spec (a list for greedy families)")
    s.add_argument("--scheme", choices=("interval", "tensor", "lift-left", "lift-right", "greedy"))
    s.add_argument("--ranks", help="block sizes, e.g. 4,16,64 or 1..8")
    s.add_argument("--steps", type=int, help="greedy: number of steps")
    s.add_argument("--epsilons", help="greedy: comma-separated targets")
    s.add_argument("--extender", choices=("interval", "trivial", "optimizer"))
    s.add_argument("--no-op", dest="with_op", action="store_const", const=False,
                   help="skip the operator-norm column")

    def family_flags(q):
        q.add_argument("--operators", "--operator", dest="operators", help="operator family spec")
        q.add_argument("--ambient", type=int, help="ambient window size")
        q.add_argument("--ambient-depth", type=int, help="word model depth L (supports of depth <= L-1)")
        q.add_argument("--restarts", type=int)
        q.add_argument("--iters", type=int)
        q.add_argument("--ranks", help="ranks, e.g. 1..32")

    pr = sub.add_parser("probe", parents=[common], help="epsilon curve by defect minimization")
    family_flags(pr)
    pr.add_argument("--objective", choices=probe.OBJECTIVES)
    pr.add_argument("--echo-projection", action="store_const", const=True,
                    help="include best projections (json format)")

    c = sub.add_parser("classify", parents=[common], help="heuristic classification cell")
    family_flags(c)
    c.add_argument("--max-rank", type=int)
    c.add_argument("--tol", type=float)

    v = sub.add_parser("verify", parents=[common], help="randomized inequality suites")
    v.add_argument("--suite", choices=SUITES + ("all",))
    v.add_argument("--trials", type=int)
    v.add_argument("--dim", type=int)
    v.add_argument("--s", type=int)
    v.add_argument("--dims", help="tensor suite dimensions, e.g. 8,8")
    v.add_argument("--operator", help="trace_hs suite operator")
    v.add_argument("--ranks", help="trace_hs suite block sizes")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        if cfg["format"] not in ("csv", "json"):
            raise ValidationError("format", "must be csv or json")
        rows, extra, code = RUNNERS[args.command](cfg)
    except CertificationError as exc:
        log(f"certification failed: {exc}")
        return 3
    except LabError as exc:
        log(f"error: {exc}")
        return 2
    emit(cfg, render(cfg, rows, extra))
    if code == 3:
        log("violations detected")
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
