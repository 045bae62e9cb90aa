"""Command-line entry point: ``blochdamp {run,preset,fit,check}``.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 a
``check`` threshold failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import __version__
from .analysis import fit_depletion, fit_diffusion, fit_envelope_decay
from .config import ConfigError, apply_overrides, load_config
from .experiments import PRESETS, check_preset, preset_configs, run_experiment, run_preset
from .io import read_series_csv
from .stochastic import EdgeProximityError, TrajectoryAbort

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4

log = logging.getLogger("blochdamp")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blochdamp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment from a YAML config")
    p.add_argument("config")
    p.add_argument("--out", default=None, help="output directory (default: output.dir or '.')")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. run.n_traj=500 (repeatable)")

    names = sorted(PRESETS)
    for verb, text in (("preset", "run a named preset"), ("check", "run a preset and test its thresholds")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("name", choices=names)
        p.add_argument("--out", default=None)
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a field in every config of the preset")
        if verb == "check":
            p.add_argument("--quick", action="store_true", help="table1 only: M=50, ordering checks")

    p = sub.add_parser("fit", help="fit a series CSV written by run/preset")
    p.add_argument("csv")
    p.add_argument("--kind", required=True, choices=("decay", "diffusion", "depletion"))
    p.add_argument("--window", nargs=2, type=float, default=None, metavar=("T0", "T1"))
    p.add_argument("--gamma", type=float, default=None, help="emission rate (diffusion; default from header)")
    p.add_argument("--bloch-period", type=float, default=None, help="default from header")
    return ap


def _configs(name, overrides):
    return [apply_overrides(c, overrides) for c in preset_configs(name)]


def _header_config(meta):
    try:
        return json.loads(meta.get("config", "{}"))
    except json.JSONDecodeError:
        return {}


def _header_period(cfg):
    from .config import ExperimentConfig

    if not cfg:
        return None
    ec = ExperimentConfig.from_dict(cfg)
    if ec.model == "continuum":
        return ec.continuum_params().bloch_period
    return ec.tb_params().bloch_period


def _cmd_fit(args) -> dict:
    cols, meta = read_series_csv(args.csv)
    cfg = _header_config(meta)
    t = cols["t"]
    window = tuple(args.window) if args.window else None
    if args.kind == "diffusion":
        gamma = args.gamma if args.gamma is not None else cfg.get("params", {}).get("gamma")
        if gamma is None:
            raise ConfigError("diffusion fit needs --gamma (not found in the file header)")
        err = cols["disp_err"] if np.any(cols["disp_err"] > 0) else None
        fit = fit_diffusion(t, cols["disp"], float(gamma), window, err)
    else:
        period = args.bloch_period if args.bloch_period is not None else _header_period(cfg)
        if period is None:
            raise ConfigError("fit needs --bloch-period (not found in the file header)")
        if args.kind == "decay":
            err = cols["v_mean_err"] if np.any(cols["v_mean_err"] > 0) else None
            lo, hi = window if window else (0.0, None)
            fit = fit_envelope_decay(t, cols["v_mean"], period, err, t_min=lo, t_max=hi)
        else:
            if window:
                fit = fit_depletion(t, cols["P"], 1.0, first=window[0], last=window[1])
            else:
                fit = fit_depletion(t, cols["P"], period)
    return {"kind": args.kind, "csv": args.csv, **fit.as_dict()}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            cfg = apply_overrides(load_config(args.config), args.overrides)
            out = args.out or cfg.output.get("dir") or "."
            res = run_experiment(cfg, out)
            print(json.dumps(res.summary["fits"], indent=2, sort_keys=True))
            for f in res.files:
                print(f"wrote {f}")
        elif args.command == "fit":
            print(json.dumps(_cmd_fit(args), indent=2, sort_keys=True))
        else:
            name = args.name
            if getattr(args, "quick", False):
                if name != "table1":
                    raise ConfigError("--quick only applies to table1")
                name = "table1-quick"
            out = args.out or (f"out/{name}" if args.command == "preset" else None)
            results = run_preset(name, out, configs=_configs(name, args.overrides))
            if args.command == "preset":
                for r in results.values():
                    for f in r.files:
                        print(f"wrote {f}")
            else:
                checks = check_preset(name, results)
                for c in checks:
                    print(c.line())
                if not all(c.passed for c in checks):
                    return EXIT_CHECK
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, TrajectoryAbort, EdgeProximityError, np.linalg.LinAlgError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # fitting and parameter preconditions raised past validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
