"""Command-line entry point: ``wvadelay {simulate,reproduce,analyze,calibrate,cfi}``.

Configuration precedence: built-in defaults, then (for ``reproduce``) the
figure's preset, then ``--config FILE``, then ``--set section.key=value``
overrides in the order given, then the dedicated shortcut flags
(``--frames``, ``--seed``, ``--n-r``).

Exit status: 0 on success, 2 on usage errors, 1 on runtime errors.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .errors import UsageError, WvaError
from .experiment import (
    FIGURES,
    ExperimentConfig,
    Simulator,
    figure_config,
    parse_override,
    run_analyze,
    run_reproduce,
    run_simulate,
    write_json,
)
from .metrology import calibrate


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_args(p):
    p.add_argument("--config", type=Path, help="TOML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config value, e.g. run.n_r=1e4 (repeatable)")
    p.add_argument("--frames", type=int, help="shortcut for run.frames")
    p.add_argument("--seed", type=int, help="shortcut for run.seed")
    p.add_argument("--n-r", type=float, dest="n_r", help="shortcut for run.n_r")


def load_config(args, base=None):
    cfg = base or ExperimentConfig()
    if getattr(args, "config", None):
        cfg = ExperimentConfig.load(args.config, base=cfg)
    overrides = dict(parse_override(o) for o in args.overrides)
    for flag, key in (("frames", "run.frames"), ("seed", "run.seed"), ("n_r", "run.n_r")):
        if getattr(args, flag, None) is not None:
            overrides[key] = getattr(args, flag)
    return cfg.replace(**overrides) if overrides else cfg


def build_parser():
    parser = _Parser(prog="wvadelay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"wvadelay {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run the full pipeline and write a run directory")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("reproduce", help="desk-scale data for one figure")
    p.add_argument("figure", help=", ".join(FIGURES))
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("analyze", help="Allan/PSD/slope analysis of a two-column CSV series")
    p.add_argument("series", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--commands", default="allan,psd,slope", help="comma list of allan, psd, slope")
    p.add_argument("--allan-band", nargs=2, type=float, metavar=("T_LO", "T_HI"))
    p.add_argument("--psd-band", nargs=2, type=float, metavar=("F_LO", "F_HI"))

    p = sub.add_parser("calibrate", help="fit a calibration line")
    _add_config_args(p)
    p.add_argument("--points", type=Path, help="CSV of tau_as,shift_px; default: model calibration")
    p.add_argument("--out", type=Path, help="write calibration.json here")

    p = sub.add_parser("cfi", help="Fisher information and Cramer-Rao bound at the operating delay")
    _add_config_args(p)
    p.add_argument("--tau", type=float, help="operating delay in as (default from config)")
    p.add_argument("--out", type=Path, help="write cfi.json here")
    return parser


def _read_points(path):
    pts = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                pts.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                if pts:
                    raise UsageError(f"bad calibration row {row!r}") from None
    return pts


def _cmd_simulate(args):
    res = run_simulate(load_config(args), args.out)
    print(f"wrote {args.out}  var/crb = {res.crb_ratio:.3f}")


def _cmd_reproduce(args):
    run_reproduce(args.figure, load_config(args, base=figure_config(args.figure)), args.out)
    print(f"wrote {args.out / (args.figure + '.csv')}")


def _cmd_analyze(args):
    commands = tuple(c.strip() for c in args.commands.split(",") if c.strip())
    bad = set(commands) - {"allan", "psd", "slope"}
    if bad:
        raise UsageError(f"unknown analyze command(s): {', '.join(sorted(bad))}")
    res = run_analyze(args.series, args.out, commands, args.allan_band, args.psd_band)
    if "slopes" in res:
        print(json.dumps(res["slopes"], sort_keys=True))


def _cmd_calibrate(args):
    if args.points:
        line = calibrate(_read_points(args.points))
    else:
        sim = Simulator(load_config(args))
        line = sim.calibration(sim.reference())
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        line.to_json(args.out)
    print(json.dumps(line.to_dict(), sort_keys=True))


def _cmd_cfi(args):
    sim = Simulator(load_config(args))
    tau = sim.operating_tau() if args.tau is None else args.tau
    res = sim.fisher(tau)
    payload = {
        "tau0_as": tau,
        "cfi_per_as2": res.cfi,
        "crb_as2": res.crb,
        "n_r": res.n_r,
        "delta_tau_as": res.delta_tau,
        "fd_relative_change": res.fd_change,
    }
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        write_json(args.out, payload)
    print(json.dumps(payload, sort_keys=True))


_COMMANDS = {
    "simulate": _cmd_simulate,
    "reproduce": _cmd_reproduce,
    "analyze": _cmd_analyze,
    "calibrate": _cmd_calibrate,
    "cfi": _cmd_cfi,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"wvadelay: usage error: {exc}", file=sys.stderr)
        return 2
    except (WvaError, OSError, ValueError) as exc:
        print(f"wvadelay: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else is still a runtime failure
        print(f"wvadelay: internal error: {exc!r}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
