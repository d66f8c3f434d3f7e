"""Command-line entry point: run, sweep, check, constants."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from .driver import RunConfig, SweepSpec, compute_constants, run, sweep
from .errors import DomainError

EXIT_OK = 0
EXIT_VALIDATION = 2

MASS_RTOL = 1e-10


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def check_run(run_dir) -> list[tuple[str, bool, str]]:
    """Re-validate the invariants of a finished run from its files alone."""
    run_dir = Path(run_dir)
    cfg = RunConfig.load(run_dir / "config.json")
    results = []

    def record(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    energy = _read_csv(run_dir / "energy.csv")
    dissip = ("viscous", "penalization", "diffusion")
    worst = min((float(r[k]) for r in energy for k in dissip), default=0.0)
    record("dissipation_nonnegative", worst >= 0.0, f"min entry {worst:.3e}")

    traj = _read_csv(run_dir / "trajectory.csv")
    kappa = cfg.params.kappa_b
    surf_err = max((abs(float(e["surface"]) - 2 * math.pi / 3 * kappa * float(t["R_b"]) ** 2)
                    for e, t in zip(energy, traj)), default=0.0)
    record("surface_closed_form", surf_err <= 1e-12, f"max error {surf_err:.3e}")

    radius_ok = all(float(t["R_b"]) >= cfg.R0 / 2 for t in traj)
    record("radius_above_half", radius_ok)

    cont = _read_csv(run_dir / "continuity.csv")
    bounds_ok = all(r["within_bounds"] == "1" for r in cont)
    record("density_envelope", bounds_ok)
    mass0 = float(cont[0]["mass"]) if cont else 1.0
    steps = max(1, int(cont[-1]["step"])) if cont else 1
    drift = max((abs(float(r["mass"]) - mass0) / mass0 for r in cont), default=0.0)
    record("mass_conservation", drift <= MASS_RTOL * steps, f"relative drift {drift:.3e} over {steps} steps")

    compat = _read_csv(run_dir / "compatibility.csv")
    margin_ok = all(float(r["distance_margin"]) >= float(r["sigma"]) for r in compat)
    record("distance_margin", margin_ok)

    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        aborted = (run_dir / "abort.json").exists()
        record("status_consistent", (summary["status"] == "aborted") == aborted, summary["status"])
    else:
        record("status_consistent", False, "summary.json missing")
    return results


def _cmd_run(args) -> int:
    cfg = RunConfig.load(args.config)
    if args.allow_unsafe_horizon:
        cfg.allow_unsafe_horizon = True
    out = Path(args.out) if args.out else Path(args.config).with_suffix("")
    result = run(cfg, out)
    print(json.dumps({"out_dir": str(result.out_dir), "exit_code": result.exit_code, "cause": result.cause}))
    return result.exit_code


def _cmd_sweep(args) -> int:
    spec_data = json.loads(Path(args.spec).read_text())
    base = spec_data["base"]
    if isinstance(base, str):
        base_cfg = RunConfig.load(Path(args.spec).parent / base)
    else:
        base_cfg = RunConfig.from_dict(base)
    kwargs = {k: spec_data[k] for k in ("metrics", "workers") if k in spec_data}
    spec = SweepSpec(spec_data["axis"], list(spec_data["values"]), **kwargs)
    out = Path(args.out) if args.out else Path(args.spec).with_suffix("")
    result = sweep(spec, base_cfg, out)
    print(json.dumps({"out_dir": str(out), "slopes": result["slopes"],
                      "failed": [r["value"] for r in result["rows"] if r["exit_code"] != 0]}))
    return EXIT_OK


def _cmd_check(args) -> int:
    results = check_run(args.run_dir)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_VALIDATION


def _cmd_constants(args) -> int:
    cfg = RunConfig.load(args.config)
    print(json.dumps(compute_constants(cfg), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bubblesim", description="Single-bubble compressible flow simulator")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (default: config path without suffix)")
    p_run.add_argument("--allow-unsafe-horizon", action="store_true",
                       help="continue past the continuation horizon bound")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a one-parameter sweep")
    p_sweep.add_argument("spec")
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_check = sub.add_parser("check", help="re-validate invariants of a run directory")
    p_check.add_argument("run_dir")
    p_check.set_defaults(func=_cmd_check)

    p_const = sub.add_parser("constants", help="print continuation constants and the safe time")
    p_const.add_argument("config")
    p_const.set_defaults(func=_cmd_constants)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DomainError, KeyError, json.JSONDecodeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
