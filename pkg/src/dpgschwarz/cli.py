"""Command line entry point: ``dpgschwarz {table1,table2,convergence,norms,spectra}``."""
import argparse
import sys

from .experiments import ExperimentConfig, run
from .mesh import MeshError
from .schwarz import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2
SUBCOMMANDS = {"table1": "table1", "table2": "table2", "convergence": "convergence",
               "norms": "norm_equivalence", "spectra": "spectra"}
_TRUE, _FALSE = {"1", "true", "yes", "on"}, {"0", "false", "no", "off"}
_KEYS = ("levels", "H", "delta", "tol", "max_iter", "max_iter_unpre", "seed", "samples",
         "convention", "unpre", "timing", "out", "format", "mtx_dir")


def parse_levels(text):
    """``"2..5"`` -> (2, 3, 4, 5); ``"3,5"`` -> (3, 5)."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = (int(t) for t in text.split(".."))
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigurationError(f"bad levels {text!r}; use e.g. 2..5 or 3,4") from None


def _bool(text):
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigurationError(f"expected a boolean, got {text!r}")


def read_config_file(path):
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _coerce(key, value):
    if value is None:
        return None
    try:
        if key == "levels":
            return parse_levels(value)
        if key == "H":
            return tuple(t.strip() for t in str(value).split(",") if t.strip())
        if key == "tol":
            return float(value)
        if key in ("max_iter", "max_iter_unpre", "seed", "samples"):
            return int(value)
        if key in ("unpre", "timing"):
            return value if isinstance(value, bool) else _bool(value)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {value!r}") from None
    return str(value)


def build_parser():
    p = argparse.ArgumentParser(prog="dpgschwarz", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="key=value file; flags override it")
        s.add_argument("--levels", help="mesh levels, h = 2^-level, e.g. 2..5")
        s.add_argument("--H", help="subdomain size(s), comma separated dyadics")
        s.add_argument("--delta", help="overlap: 'table', 'H/2' or comma separated dyadics")
        s.add_argument("--tol", help="relative residual reduction (default 1e-10)")
        s.add_argument("--max-iter", dest="max_iter")
        s.add_argument("--max-iter-unpre", dest="max_iter_unpre")
        s.add_argument("--seed")
        s.add_argument("--samples", help="random samples per size (norms)")
        s.add_argument("--convention", choices=("element", "nodal"))
        s.add_argument("--no-unpre", dest="unpre", action="store_const", const=False,
                       help="skip the unpreconditioned solves")
        s.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                       help="write wall_time_s as null for byte-identical output")
        s.add_argument("--mtx-dir", dest="mtx_dir", help="export each assembled matrix here")
        s.add_argument("--out", help="output file (default: stdout)")
        s.add_argument("--format", choices=("csv", "json"))
    return p


def config_from_args(args):
    values = read_config_file(args.config) if args.config else {}
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    kwargs = {k: _coerce(k, v) for k, v in values.items()}
    kwargs = {k: v for k, v in kwargs.items() if v is not None}
    return ExperimentConfig(mode=SUBCOMMANDS[args.command], **kwargs)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        config.configurations() if config.mode not in ("convergence", "norm_equivalence") else None
        report = run(config)
    except (ConfigurationError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if config.out:
        for path in report.write(config.out, config.format):
            print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(report.to_json() if config.format == "json" else report.to_csv())
    if not report.converged:
        print("warning: at least one solve did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
