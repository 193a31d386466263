"""Command line entry point: ``vpflow <subcommand> --config run.yaml``.

Numerics come from the YAML config; flags only override paths, the
diagnostics cadence and the worker count.  Every subcommand writes
``report.json`` (with the resolved config and a build id) into the output
directory; flows also stream ``diagnostics.jsonl``.

Exit codes: 0 success, 2 invalid input, 3 numerical abort, 4 no convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from . import cfc
from . import checks
from . import flow as fl
from .config import parse_config, validate
from .errors import NoConvergence, ValidationError, VPFlowError, _jsonable
from .grid import load_field, save_field

SUBCOMMANDS = ("flow", "cfc", "foliate", "stability", "recover", "check", "oracle")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_NO_CONVERGENCE = 0, 2, 3, 4


def build_id():
    """Package version plus a digest of the installed sources."""
    h = hashlib.sha256()
    for path in sorted(Path(__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


class JsonlSink:
    def __init__(self, path):
        self.fh = open(path, "w", encoding="utf-8")

    def __call__(self, record):
        self.fh.write(record.to_json() + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


def _need(section, key, sub):
    value = section.get(key)
    if value is None:
        raise ValidationError([f"subcommand {sub!r} needs {key!r} in its config section"])
    return value


def _cfc_start(rc, args):
    if args.field:
        u, _ = load_field(args.field)
        return u
    return rc.initial_field()


def cmd_flow(rc, args, out):
    sink = JsonlSink(out / "diagnostics.jsonl")
    try:
        _, state, report = fl.run(rc.flow, rc.initial_field(), sink=sink)
    finally:
        sink.close()
    save_field(state.u, out / "final.vpf", meta={"t": state.t})
    status = EXIT_OK if report.status == "converged" else EXIT_NO_CONVERGENCE
    return status, {"report": report.to_dict()}


def cmd_cfc(rc, args, out):
    c = float(_need(rc.sections["cfc"], "c", "cfc"))
    sink = JsonlSink(out / "diagnostics.jsonl")
    try:
        res = cfc.solve_cfc(c, _cfc_start(rc, args), rc.flow, sink=sink)
    finally:
        sink.close()
    save_field(res.u_c, out / "cfc.vpf", meta={"c": c})
    return EXIT_OK, {"cfc": res.to_dict()}


def cmd_foliate(rc, args, out):
    sec = rc.sections["foliate"]
    c1, c2 = float(_need(sec, "c1", "foliate")), float(_need(sec, "c2", "foliate"))
    if not c1 < c2:
        raise ValidationError(["foliate: need c1 < c2"])
    res = cfc.foliate(c1, c2, int(sec["m"]), rc.flow, _cfc_start(rc, args))
    cfc.save_foliation(res, out / "foliation")
    return EXIT_OK, {"foliation": res.manifest()}


def cmd_stability(rc, args, out):
    if args.field:
        u, _ = load_field(args.field)
        residual = None
    else:
        c = float(_need(rc.sections["cfc"], "c", "stability"))
        res = cfc.solve_cfc(c, rc.initial_field(), rc.flow)
        u, residual = res.u_c, res.residual
    rep = cfc.stability_report(u, rc.flow)
    return EXIT_OK, {"stability": rep.to_dict(), "cfc_residual": residual}


def cmd_recover(rc, args, out):
    sec = rc.sections["recover"]
    c = float(_need(sec, "c", "recover"))
    base = cfc.solve_cfc(c, rc.initial_field(), rc.flow)
    sink = JsonlSink(out / "diagnostics.jsonl")
    try:
        rep = cfc.recover_cfc(base.u_c, float(sec["amplitude"]), int(sec["k"]), rc.flow,
                              mode=int(sec["mode"]), sink=sink)
    finally:
        sink.close()
    save_field(rep.pop("u_final"), out / "recovered.vpf")
    report = rep.pop("report")
    rep["flow_report"] = None if report is None else report.to_dict()
    status = EXIT_OK if rep["status"] == "converged" else EXIT_NO_CONVERGENCE
    return status, {"recover": rep, "cfc_residual": base.residual}


def _suite_status(results):
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_check(rc, args, out):
    sec = rc.sections["check"]
    results = checks.run_property_suites(int(sec["samples"]), int(sec["euler_samples"]),
                                         int(sec["seed"]))
    return _suite_status(results), {"suites": [r.to_dict() for r in results]}


def cmd_oracle(rc, args, out):
    results = checks.run_oracle_suites(tuple(rc.sections["oracle"]["points"]))
    return _suite_status(results), {"suites": [r.to_dict() for r in results]}


COMMANDS = {"flow": cmd_flow, "cfc": cmd_cfc, "foliate": cmd_foliate, "stability": cmd_stability,
            "recover": cmd_recover, "check": cmd_check, "oracle": cmd_oracle}

# check and oracle run without a config file
STANDALONE = {"ambient": {"preset": "minkowski-torus", "n": 1}, "grid": {"points": [32]}}


def build_parser():
    p = argparse.ArgumentParser(prog="vpflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"vpflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", "-c", required=name not in ("check", "oracle"),
                       help="YAML run configuration")
        s.add_argument("--out", "-o", help="output directory (overrides output.dir)")
        s.add_argument("--cadence", type=int, help="diagnostics every this many steps")
        s.add_argument("--workers", type=int, help="threads for per-node geometry")
        if name in ("cfc", "foliate", "stability"):
            s.add_argument("--field", help="start from (or analyse) this field file")
    return p


def _apply_flags(rc, args):
    changes = {}
    if args.cadence is not None:
        changes["cadence"] = args.cadence
    if args.workers is not None:
        changes["workers"] = args.workers
    if changes:
        rc.flow = dataclasses.replace(rc.flow, **changes)
        rc.resolved["output"]["cadence"] = rc.flow.cadence
        rc.resolved["workers"] = rc.flow.workers
    if args.out:
        rc.resolved["output"]["dir"] = args.out
    return rc


def _write_report(out, doc):
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(_jsonable(doc), indent=2), encoding="utf-8")


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    doc = {"command": args.command, "build": build_id(), "config": None}
    try:
        rc = parse_config(args.config) if args.config else validate(STANDALONE, "defaults")
        rc = _apply_flags(rc, args)
        out = rc.output_dir
        out.mkdir(parents=True, exist_ok=True)
        doc["config"] = rc.resolved
        status, result = COMMANDS[args.command](rc, args, out)
        doc.update(result)
        doc["status"] = {EXIT_OK: "ok", EXIT_NUMERICAL: "failed",
                         EXIT_NO_CONVERGENCE: "no-convergence"}[status]
    except VPFlowError as exc:
        status = EXIT_NO_CONVERGENCE if isinstance(exc, NoConvergence) else exc.exit_code
        doc["status"] = "error"
        doc["error"] = exc.to_dict()
        print(json.dumps(_jsonable(exc.to_dict())), file=sys.stderr)
    doc["exit_code"] = status
    if out is not None:
        _write_report(out, doc)
    print(json.dumps({"command": args.command, "status": doc["status"], "exit_code": status,
                      "report": None if out is None else str(out / "report.json")}))
    return status


if __name__ == "__main__":
    sys.exit(main())
