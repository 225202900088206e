"""Iteration-count tables, convergence and norm-equivalence studies as row reports."""
import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import __version__, kernels
from .dpg_core import (
    assemble,
    energy_norm_components,
    equivalence_bounds,
    l2_errors,
    manufactured_problem,
)
from .mesh import CONVENTIONS, MeshError, build_mesh, build_subdomains, parse_dyadic
from .schwarz import ConfigurationError, build_dof_sets, build_preconditioner, pcg, spectral_bounds
from .trace_norms import equivalence_sweep

MODES = ("table1", "table2", "convergence", "norm_equivalence", "spectra")
TABLE_COLUMNS = ("h", "H", "delta", "N", "iter_unpre", "iter_pre", "lambda_min",
                 "lambda_max", "kappa", "l2_error_u", "wall_time_s")
NORM_COLUMNS = ("norm_kind", "h", "min_ratio", "max_ratio", "samples")

DEFAULT_LEVELS = {"table1": (2, 3, 4, 5), "table2": (5,), "convergence": (3, 4, 5),
                  "norm_equivalence": (0, 2, 4), "spectra": (2, 3)}
DEFAULT_H = {"table1": ("1/2",), "table2": ("1/2", "1/4", "1/8", "1/16"),
             "spectra": ("1/2",)}
DEFAULT_DELTA = {"table1": "table", "table2": "H/2", "spectra": "table"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines a report. Dyadic sizes are kept as strings."""

    mode: str
    levels: tuple = None
    H: tuple = None
    delta: str = None              # "table", "H/2" or a comma list of dyadics
    tol: float = 1e-10
    max_iter: int = 5000
    max_iter_unpre: int = 50000
    seed: int = 0
    samples: int = None
    convention: str = "nodal"
    unpre: bool = True
    timing: bool = True
    out: str = None
    format: str = "csv"
    mtx_dir: str = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.convention not in CONVENTIONS:
            raise ConfigurationError(f"convention must be one of {CONVENTIONS}")
        if self.format not in ("csv", "json"):
            raise ConfigurationError("format must be csv or json")
        if not 0 < self.tol < 1:
            raise ConfigurationError("tol must lie in (0, 1)")
        if self.max_iter < 1 or self.max_iter_unpre < 1:
            raise ConfigurationError("max_iter must be positive")
        if self.levels is None:
            object.__setattr__(self, "levels", DEFAULT_LEVELS[self.mode])
        if self.H is None and self.mode in DEFAULT_H:
            object.__setattr__(self, "H", DEFAULT_H[self.mode])
        if self.delta is None and self.mode in DEFAULT_DELTA:
            object.__setattr__(self, "delta", DEFAULT_DELTA[self.mode])
        if self.samples is None:
            object.__setattr__(self, "samples", 200)
        if any(int(l) != l or l < 0 or l > 10 for l in self.levels):
            raise ConfigurationError("levels must be integers in 0..10")
        if self.samples < 1:
            raise ConfigurationError("samples must be positive")

    def configurations(self):
        """(n, H, delta) triples as Fractions, validated against the mesh rules."""
        out = []
        for level in self.levels:
            n = 2 ** level
            h = Fraction(1, n)
            for H_text in self.H:
                H = parse_dyadic(H_text)
                for delta in self._deltas(h, H):
                    out.append((n, H, delta))
        if not out:
            raise ConfigurationError("configuration yields no runs")
        for n, H, delta in out:
            try:
                build_subdomains(build_mesh(n), H, delta, self.convention)
            except MeshError as exc:
                raise ConfigurationError(f"h=1/{n}, H={H}, delta={delta}: {exc}") from exc
        return out

    def _deltas(self, h, H):
        rule = self.delta.strip()
        if rule == "table":
            return [d for d in (h, 2 * h, 4 * h) if d <= Fraction(1, 4) and d <= H]
        if rule.replace(" ", "") == "H/2":
            return [H / 2]
        return [parse_dyadic(t) for t in rule.split(",") if t.strip()]


@dataclass
class ExperimentReport:
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)
    null_reasons: list = field(default_factory=list)   # one {column: reason} per row

    @property
    def converged(self):
        return not any("nonconverged" in r.values() for r in self.null_reasons)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def sidecar(self):
        meta = dict(self.metadata)
        meta["columns"] = list(self.columns)
        meta["null_reasons"] = [{"row": i, **r} for i, r in enumerate(self.null_reasons) if r]
        return meta

    def to_json(self):
        rows = [{c: _json_value(row[c]) for c in self.columns} for row in self.rows]
        return json.dumps({"rows": rows, "metadata": self.sidecar()}, indent=2, sort_keys=True) + "\n"

    def write(self, out, fmt="csv"):
        """Write the report; CSV output gets a ``<out>.json`` metadata sidecar."""
        if fmt == "json":
            with open(out, "w") as fh:
                fh.write(self.to_json())
            return [out]
        with open(out, "w", newline="") as fh:
            fh.write(self.to_csv())
        side = str(out) + ".json"
        with open(side, "w") as fh:
            fh.write(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return [out, side]


def _fmt(v):
    if v is None:
        return "null"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".12g")
    return str(v)


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def _metadata(config, **extra):
    cfg = asdict(config)
    cfg.pop("out", None)
    meta = {"config": cfg, "version": __version__, "kernel_backend": kernels.BACKEND}
    meta.update(extra)
    return meta


def _table_row(n, H, delta):
    row = dict.fromkeys(TABLE_COLUMNS)
    row.update(h=1.0 / n, H=float(H), delta=float(delta))
    return row


def _sort_rows(rows, reasons):
    order = sorted(range(len(rows)), key=lambda i: (-rows[i]["h"], -rows[i]["H"], rows[i]["delta"]))
    return [rows[i] for i in order], [reasons[i] for i in order]


def _maybe_export(config, system):
    if config.mtx_dir:
        os.makedirs(config.mtx_dir, exist_ok=True)
        system.export_matrix_market(os.path.join(config.mtx_dir, f"dpg_poisson_n{system.mesh.n}.mtx"))


class _SystemCache:
    """One assembly and at most one unpreconditioned solve per mesh size."""

    def __init__(self, config):
        self.config = config
        self.systems = {}
        self.unpre = {}
        _, _, self.f = manufactured_problem()

    def system(self, n):
        if n not in self.systems:
            s = assemble(build_mesh(n), f=self.f)
            self.systems[n] = s
            _maybe_export(self.config, s)
        return self.systems[n]

    def unpreconditioned(self, n):
        if n not in self.unpre:
            s = self.system(n)
            self.unpre[n] = pcg(s, tol=self.config.tol, max_iter=self.config.max_iter_unpre)
        return self.unpre[n]


def _iteration_table(config, with_spectra_dense=False):
    configs = config.configurations()
    cache = _SystemCache(config)
    u_exact, _, _ = manufactured_problem()
    rows, reasons = [], []
    for n, H, delta in configs:
        t0 = time.perf_counter()
        row, why = _table_row(n, H, delta), {}
        system = cache.system(n)
        row["N"] = system.N
        if config.unpre:
            res = cache.unpreconditioned(n)
            if res.converged:
                row["iter_unpre"] = res.iterations
            else:
                why["iter_unpre"] = "nonconverged"
        else:
            why["iter_unpre"] = "skipped"
        layout = build_subdomains(system.mesh, H, delta, config.convention)
        precond = build_preconditioner(system, build_dof_sets(system.mesh, layout, system.dofmap))
        res = pcg(system, precond=precond, tol=config.tol, max_iter=config.max_iter)
        if res.converged:
            row["iter_pre"] = res.iterations
            row["l2_error_u"] = l2_errors(system, res.x, u_exact)
        else:
            why["iter_pre"] = why["l2_error_u"] = "nonconverged"
        if with_spectra_dense:
            sb = spectral_bounds(system, precond, seed=config.seed)
            lmin, lmax, ok = sb.lambda_min, sb.lambda_max, sb.converged
        else:
            lmin, lmax, ok = res.ritz_min, res.ritz_max, res.converged
        if ok:
            row.update(lambda_min=lmin, lambda_max=lmax, kappa=lmax / lmin)
        else:
            why.update(lambda_min="nonconverged", lambda_max="nonconverged", kappa="nonconverged")
        if config.timing:
            row["wall_time_s"] = time.perf_counter() - t0
        else:
            why["wall_time_s"] = "timing_disabled"
        rows.append(row)
        reasons.append(why)
    return _sort_rows(rows, reasons)


def run_table1(config):
    """Unpreconditioned and Schwarz-preconditioned CG counts for H = 1/2 and several overlaps."""
    if config.mode != "table1":
        config = replace(config, mode="table1")
    rows, reasons = _iteration_table(config)
    meta = _metadata(config, extensions=["lambda_min", "lambda_max", "kappa"],
                     spectra_source="extreme Ritz values of the preconditioned CG run",
                     wall_time_note="includes assembly on first use of each mesh")
    return ExperimentReport(TABLE_COLUMNS, rows, meta, reasons)


def run_table2(config):
    """Preconditioned counts at fixed h for shrinking subdomains with delta = H/2."""
    if config.mode != "table2":
        config = replace(config, mode="table2")
    rows, reasons = _iteration_table(config)
    pre = [r["iter_pre"] for r in rows]
    ratios = [b / a if a and b else None for a, b in zip(pre, pre[1:])]
    meta = _metadata(config, extensions=["lambda_min", "lambda_max", "kappa"],
                     spectra_source="extreme Ritz values of the preconditioned CG run",
                     successive_ratios=ratios)
    return ExperimentReport(TABLE_COLUMNS, rows, meta, reasons)


def run_spectra(config):
    """Extreme eigenvalues of the preconditioned operator (dense when small, Ritz otherwise)."""
    if config.mode != "spectra":
        config = replace(config, mode="spectra")
    rows, reasons = _iteration_table(config, with_spectra_dense=True)
    meta = _metadata(config, spectra_source="dense eigensolve for N <= 4000, else Ritz values")
    return ExperimentReport(TABLE_COLUMNS, rows, meta, reasons)


def run_convergence(config, f=None):
    """Errors of the DPG solution against the manufactured solution, by direct solve."""
    if config.mode != "convergence":
        config = replace(config, mode="convergence")
    u_exact, s_exact, f_default = manufactured_problem()
    zero_data = f is not None
    f = f_default if f is None else f
    rows, reasons, sig_err = [], [], []
    for level in config.levels:
        n = 2 ** level
        t0 = time.perf_counter()
        system = assemble(build_mesh(n), f=f)
        _maybe_export(config, system)
        x = system.solve()
        if zero_data:
            eu, es = l2_errors(system, x, lambda a, b: 0 * a, lambda a, b: (0 * a, 0 * a))
        else:
            eu, es = l2_errors(system, x, u_exact, s_exact)
        row = dict.fromkeys(TABLE_COLUMNS)
        row.update(h=1.0 / n, N=system.N, l2_error_u=eu)
        why = {c: "not_applicable" for c in ("H", "delta", "iter_unpre", "iter_pre",
                                             "lambda_min", "lambda_max", "kappa")}
        if config.timing:
            row["wall_time_s"] = time.perf_counter() - t0
        else:
            why["wall_time_s"] = "timing_disabled"
        rows.append(row)
        reasons.append(why)
        sig_err.append(es)
    rates = [_rate(a, b) for a, b in zip([r["l2_error_u"] for r in rows],
                                          [r["l2_error_u"] for r in rows[1:]])]
    meta = _metadata(config, solver="sparse direct", l2_error_sigma=sig_err,
                     rates_u=rates, rates_sigma=[_rate(a, b) for a, b in zip(sig_err, sig_err[1:])])
    return ExperimentReport(TABLE_COLUMNS, rows, meta, reasons)


def _rate(a, b):
    return math.log2(a / b) if a > 0 and b > 0 else None


def fundamental_sweep(ns=(2, 4, 8), samples=100, seed=0):
    """Ratios a_h(U,U) / (component norm sum) over random nonzero trial vectors."""
    rows = []
    for n in ns:
        system = assemble(build_mesh(n))
        rng = np.random.default_rng(seed)
        ratios = []
        while len(ratios) < samples:
            x = rng.standard_normal(system.N)
            if not np.any(x):
                continue
            comp = energy_norm_components(system, x)
            ratios.append(comp.energy / comp.norm_sum)
        ratios = np.array(ratios)
        rows.append(dict(norm_kind="fundamental", h=1.0 / n, min_ratio=float(ratios.min()),
                         max_ratio=float(ratios.max()), samples=int(samples)))
    return rows


def fundamental_bounds(ns=(2, 4, 8)):
    """Sharp equivalence constants from a dense generalized eigensolve (samples = N)."""
    rows = []
    for n in ns:
        system = assemble(build_mesh(n))
        lo, hi = equivalence_bounds(system)
        rows.append(dict(norm_kind="fundamental_eig", h=1.0 / n, min_ratio=lo, max_ratio=hi,
                         samples=system.N))
    return rows


def run_norm_equivalence(config):
    """Formula-versus-oracle trace norm ratios and the energy equivalence ratios.

    ``levels`` give the element sizes 2^-level for the trace norms; the energy
    sweep uses meshes 2^(level+1) with the same count of levels.
    """
    if config.mode != "norm_equivalence":
        config = replace(config, mode="norm_equivalence")
    hs = [2.0 ** -l for l in config.levels]
    rows = []
    for kind in ("h_half", "h_minus_half"):
        rows += equivalence_sweep(kind, hs=hs, samples=config.samples, seed=config.seed)
    ns = tuple(2 ** (k + 1) for k in range(len(config.levels)))
    rows += fundamental_sweep(ns, samples=max(1, config.samples // 2), seed=config.seed)
    rows += fundamental_bounds(tuple(n for n in ns if n <= 8))
    meta = _metadata(config, ratio="formula / oracle for traces, energy / norm sum for fundamental",
                     fundamental_eig="exact extreme generalized eigenvalues; samples column holds N")
    return ExperimentReport(NORM_COLUMNS, rows, meta, [{} for _ in rows])


RUNNERS = {"table1": run_table1, "table2": run_table2, "convergence": run_convergence,
           "norm_equivalence": run_norm_equivalence, "spectra": run_spectra}


def run(config):
    return RUNNERS[config.mode](config)
