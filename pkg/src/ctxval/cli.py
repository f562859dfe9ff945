"""Command-line entry point: ``ctxval {validate,oracle,sweep,compare} --config FILE``.

Exit codes: 0 validated (or success for verbs without a verdict),
2 not validated, 3 inconclusive, 1 any error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .certify import Verdict
from .config import ConfigError, load_config
from .core import UsageError
from .runner import WORKERS_ENV, compare, grid_oracle, run_experiment, sweep_dimensionality

EXIT_CODES = {Verdict.VALIDATED: 0, Verdict.NOT_VALIDATED: 2, Verdict.INCONCLUSIVE: 3}
METHODS = ("custom", "sc", "sd")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ctxval", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)

    def verb(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--output-dir", help="override the config's output_dir")
        return p

    verb("validate", "run the configured campaign and certify against the threshold")
    p = verb("oracle", "exhaustive grid maximum of the distance")
    p.add_argument("--resolution", type=int, help="points per task dimension (default: config)")
    p.add_argument("--dump", type=Path, help="write every grid value to this CSV")
    verb("sweep", "median samples to within tolerance of the true maximum, per state dimension")
    p = verb("compare", "run several methods with a shared initial design")
    p.add_argument("--methods", default="custom,sc,sd")
    ap.epilog = f"Set {WORKERS_ENV}=N to evaluate oracle cells and sweep trials in N processes."
    return ap


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in METHODS]
    if bad or not methods:
        raise UsageError(f"--methods: expected a comma list of {', '.join(METHODS)}, got {text!r}")
    return methods


def _run(args) -> int:
    cfg = load_config(args.config)
    if args.output_dir:
        cfg = cfg.model_copy(update={"output_dir": args.output_dir})

    if args.verb == "validate":
        if cfg.method != "variant-sweep" and cfg.threshold is None:
            raise UsageError("validate needs a 'threshold' in the config")
        report = run_experiment(cfg)
        summary = {"method": report.method, "best": {"p": report.best_p.tolist(), "distance": report.best_d},
                   "estimate": report.estimate, "output_dir": cfg.output_dir}
        if report.certificate is not None:
            summary["certificate"] = report.certificate.to_dict()
        print(json.dumps(summary, indent=2))
        return 0 if report.certificate is None else EXIT_CODES[report.certificate.verdict]

    if args.verb == "oracle":
        res = grid_oracle(cfg, args.resolution, dump=args.dump)
        out = {"d_star": res.d_star, "argmax": res.argmax.tolist(), "grid_points": len(res.values)}
        Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.output_dir) / "oracle.json").write_text(json.dumps(out, indent=2))
        print(json.dumps(out, indent=2))
        return 0

    if args.verb == "sweep":
        for row in sweep_dimensionality(cfg):
            print(f"n={row['state_dim']} task_dim={row['task_dim']} {row['method']:>6}: "
                  f"median {row['median_samples']:g} ({row['reached']}/{row['trials']} reached)")
        return 0

    result = compare(cfg, _methods(args.methods))
    result.pop("_traces")
    print(json.dumps(result, indent=2))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
    except (UsageError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
