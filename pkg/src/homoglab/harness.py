"""Experiment configuration, Monte Carlo studies and plot-data emission.

Every study is deterministic in its configuration: realization ``r`` at
ladder position ``i`` draws from the seed sequence ``(master, i, r)``, jobs
may run on a thread pool but results are collected in ``(eps, r)`` order,
and CSV values are printed with round-trip precision.  Wall-clock timings
go to a separate JSON sidecar so the CSVs stay byte-identical across runs.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fields, homog
from .errors import ConvergenceError, FormatError, HomoglabError, ValidationError
from .solver import ParabolicProblem, heat_kernel, solve_potential
from .stats import fit_loglog, jackknife

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# determinism helpers


def realization_seed(master, eps_index, realization):
    """64-bit seed derived from ``(master, eps_index, realization)``."""
    state = np.random.SeedSequence([int(master), int(eps_index), int(realization)]).generate_state(2)
    return int(state[0]) << 32 | int(state[1])


def default_threads():
    try:
        return max(1, int(os.environ.get("HOMOGLAB_THREADS", "1")))
    except ValueError as exc:
        raise ValidationError("HOMOGLAB_THREADS must be an integer") from exc


def map_ordered(fn, items, threads=1):
    """``[fn(i) for i in items]``, optionally on a thread pool; order is preserved."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        return header, [row for row in reader if row]


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of a study; see ``configs/*.toml`` for the file layout."""

    model: dict = field(default_factory=lambda: {"kind": "separable"})
    alpha: float = 1.0
    eps_ladder: tuple = (0.25, 0.125, 0.0625, 0.03125)
    T: float = 1.0
    window: tuple = (2.0, 0.1, 1.0)
    n_realizations: int = 50
    master_seed: int = 1234
    L: float = 14.0
    resolution: int = 8
    max_h: float = 1 / 16
    max_dt: float = 1 / 64
    scheme: str = "mild-duhamel"
    times: tuple = (1.0, 2.0, 4.0)
    vbar_method: str = "quadrature"
    moment_time: float = 1.0
    moment_L: float = 5.0
    out_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        ladder = tuple(float(e) for e in self.eps_ladder)
        object.__setattr__(self, "eps_ladder", ladder)
        object.__setattr__(self, "window", tuple(float(w) for w in self.window))
        object.__setattr__(self, "times", tuple(float(t) for t in self.times))
        if not ladder or any(not 0 < e <= 1 for e in ladder):
            raise ValidationError("eps ladder entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(ladder, ladder[1:])):
            raise ValidationError("eps ladder must be strictly decreasing")
        if self.n_realizations < 1:
            raise ValidationError("need at least one realization")
        xw, t0, t1 = self.window
        if not (0 < xw <= self.L and 0 <= t0 <= t1 <= self.T):
            raise ValidationError("observation window must lie inside the solver domain")
        if self.alpha <= 0 or self.T <= 0:
            raise ValidationError("alpha and T must be positive")
        if self.vbar_method not in ("quadrature", "monte-carlo"):
            raise ValidationError(f"unknown vbar method {self.vbar_method!r}")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")

    @property
    def covariance(self):
        return fields.model_from_spec(self.model)

    @classmethod
    def from_mapping(cls, data, **overrides):
        exp = dict(data.get("experiment", {}))
        sol = dict(data.get("solver", {}))
        out = dict(data.get("output", {}))
        kw = {}
        names = {"alpha": "alpha", "eps": "eps_ladder", "T": "T", "window": "window",
                 "realizations": "n_realizations", "seed": "master_seed", "times": "times",
                 "vbar_method": "vbar_method", "moment_time": "moment_time", "moment_L": "moment_L",
                 "threads": "threads"}
        for key, val in exp.items():
            if key not in names:
                raise FormatError(f"unknown [experiment] key {key!r}")
            kw[names[key]] = val
        for key, val in sol.items():
            if key not in ("L", "resolution", "max_h", "max_dt", "scheme"):
                raise FormatError(f"unknown [solver] key {key!r}")
            kw[key] = val
        if "dir" in out:
            kw["out_dir"] = out["dir"]
        if "model" in data:
            kw["model"] = dict(data["model"])
        kw.setdefault("threads", default_threads())
        kw.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**kw)
        except TypeError as exc:
            raise FormatError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path, **overrides):
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc
        return cls.from_mapping(data, **overrides)


# ---------------------------------------------------------------------------
# convergence study


@dataclass(frozen=True)
class ConvergenceRecord:
    eps: float
    realization: int
    seed: int
    u_error: float
    sup_Y: float
    sup_Z: float
    status: str = "ok"
    wall_time: float = 0.0


CONVERGENCE_HEADER = ["eps", "realization", "seed", "u_error", "sup_Y", "sup_Z", "status"]
SUMMARY_HEADER = ["eps", "n_ok", "median_u_error", "q1_u_error", "q3_u_error",
                  "median_sup_Y", "q1_sup_Y", "q3_sup_Y", "median_sup_Z", "q1_sup_Z", "q3_sup_Z"]
QUANTITIES = ("u_error", "sup_Y", "sup_Z")


@dataclass(frozen=True)
class StudyResult:
    records: list
    summary: list
    fits: dict
    paths: dict


def _window_masks(config, x, t):
    xw, t0, t1 = config.window
    tol = 1e-12
    return np.abs(x) <= xw + tol, (t >= t0 - tol) & (t <= t1 + tol)


def summarize_convergence(records, eps_ladder):
    """Per-eps medians and quartiles over successful records, plus log-log fits."""
    rows = []
    for eps in eps_ladder:
        ok = [r for r in records if r.eps == eps and r.status == "ok"]
        row = [eps, len(ok)]
        for q in QUANTITIES:
            vals = np.array([getattr(r, q) for r in ok], dtype=float)
            if vals.size:
                row += [float(np.median(vals)), float(np.quantile(vals, 0.25)),
                        float(np.quantile(vals, 0.75))]
            else:
                row += [math.nan] * 3
        rows.append(row)
    fits = {}
    for j, q in enumerate(QUANTITIES):
        eps = np.array([r[0] for r in rows])
        med = np.array([r[2 + 3 * j] for r in rows])
        good = np.isfinite(med) & (med > 0)
        if good.sum() >= 2:
            fits[q] = fit_loglog(eps[good], med[good])
    return rows, fits


def _fit_rows(fits):
    return [[name, f.slope, f.intercept, f.slope_stderr] for name, f in fits.items()]


def run_convergence_study(config, out_dir=None):
    """Solve the eps-problem per realization and compare with the homogenized limit.

    Writes ``convergence.csv`` (one row per realization),
    ``convergence_summary.csv``, ``convergence_fit.csv`` and a timing
    sidecar.  A failing realization is recorded with its error message; the
    study aborts only if every realization of some eps fails.
    """
    out = Path(out_dir or config.out_dir)
    model = config.covariance
    vbar = homog.vbar(model, config.alpha)
    records = []
    for ei, eps in enumerate(config.eps_ladder):
        setup = homog.multiscale_setup(model, eps, config.alpha, config.L, config.T,
                                       resolution=config.resolution, max_h=config.max_h,
                                       max_dt=config.max_dt)
        cfg_u = replace(setup.config, scheme=config.scheme)
        x, times = setup.config.x, setup.times
        mx, mt = _window_masks(config, x, times)
        u0 = setup.config.grid_function(heat_kernel(x, 1.0))
        limit = np.array([homog.homogenized_solution(u0, vbar, t).values for t in times[mt]])
        curve = None if model.is_zero else homog.vbar_eps_curve(model, eps, config.alpha, config.T)

        def one(r, ei=ei, eps=eps, setup=setup, curve=curve):
            seed = realization_seed(config.master_seed, ei, r)
            start = time.perf_counter()
            try:
                pair, V = homog.correctors(model, setup, seed, curve=curve or _zero_curve(config.T))
                u = solve_potential(ParabolicProblem(u0, config.T, G=V), cfg_u)
                err = float(np.max(np.abs(u.values[mt][:, mx] - limit[:, mx])))
                sy = float(np.max(np.abs(pair.Y.values[mt][:, mx])))
                sz = float(np.max(np.abs(pair.Z.values[mt][:, mx])))
                status = "ok"
            except (HomoglabError, FloatingPointError) as exc:
                log.warning("eps=%g realization %d failed: %s", eps, r, exc)
                err = sy = sz = math.nan
                status = f"failed: {type(exc).__name__}"
            return ConvergenceRecord(eps, r, seed, err, sy, sz, status, time.perf_counter() - start)

        batch = map_ordered(one, range(config.n_realizations), config.threads)
        if all(r.status != "ok" for r in batch):
            raise ConvergenceError(f"every realization failed at eps={eps}")
        records.extend(batch)
    summary, fits = summarize_convergence(records, config.eps_ladder)
    paths = {
        "records": _write_csv(out / "convergence.csv", CONVERGENCE_HEADER,
                              [[r.eps, r.realization, r.seed, r.u_error, r.sup_Y, r.sup_Z, r.status]
                               for r in records]),
        "summary": _write_csv(out / "convergence_summary.csv", SUMMARY_HEADER, summary),
        "fit": _write_csv(out / "convergence_fit.csv", ["quantity", "slope", "intercept",
                                                        "slope_stderr"], _fit_rows(fits)),
    }
    _write_timings(out / "convergence_timings.json", records)
    return StudyResult(records, summary, fits, paths)


def _zero_curve(T):
    ts = np.array([0.0, T])
    return ts, np.zeros(2), lambda t: np.zeros_like(np.asarray(t, dtype=float))


def _write_timings(path, records):
    data = [{"eps": r.eps, "realization": r.realization, "wall_time_s": r.wall_time}
            for r in records]
    Path(path).write_text(json.dumps(data, indent=1) + "\n")


# ---------------------------------------------------------------------------
# moment study

MOMENTS = ("Y2", "dY2", "d2Y2", "Z2")


def moment_samples(model, eps, alpha, t, n, master, eps_index, L=5.0, threads=1,
                   resolution=8, with_Z=True):
    """Per-realization ``|Y|^2``, ``|d_x Y|^2``, ``|d_x^2 Y|^2`` and ``|Z|^2`` at ``(0, t)``."""
    setup = homog.multiscale_setup(model, eps, alpha, L, t, resolution=resolution)
    i0 = int(np.argmin(np.abs(setup.config.x)))
    h = setup.config.h
    curve = None
    if with_Z:
        curve = _zero_curve(t) if model.is_zero else homog.vbar_eps_curve(model, eps, alpha, t)

    def one(r):
        seed = realization_seed(master, eps_index, r)
        _, V = homog.sample_potential(model, setup, seed)
        Y = homog.corrector_Y(V, setup.config)
        y = Y.values[-1]
        row = [y[i0] ** 2, homog.spectral_dx(y, h)[i0] ** 2, homog.spectral_dx(y, h, 2)[i0] ** 2]
        if with_Z:
            Z = homog.corrector_Z(Y, curve[2], setup.config)
            row.append(Z.values[-1][i0] ** 2)
        else:
            row.append(math.nan)
        return seed, row

    return map_ordered(one, range(n), threads)


def summarize_moments(raw_rows, eps_ladder):
    """Jackknife means per (eps, moment) and log-log slopes against eps."""
    table, fits = [], {}
    for eps in eps_ladder:
        rows = [r for r in raw_rows if r[0] == eps]
        for j, name in enumerate(MOMENTS):
            vals = np.array([r[3 + j] for r in rows], dtype=float)
            if vals.size >= 2 and np.all(np.isfinite(vals)):
                est, se = jackknife(vals)
                table.append([eps, name, float(est), float(se)])
    for name in MOMENTS:
        sel = [r for r in table if r[1] == name]
        eps = np.array([r[0] for r in sel])
        est = np.array([r[2] for r in sel])
        se = np.array([r[3] for r in sel])
        if len(sel) >= 2 and np.all(est > 0):
            fits[name] = fit_loglog(eps, est, se)
    return table, fits


def run_moment_study(config, out_dir=None, with_Z=True):
    """Moments of the correctors at ``(0, moment_time)`` along the eps ladder."""
    out = Path(out_dir or config.out_dir)
    model = config.covariance
    raw = []
    for ei, eps in enumerate(config.eps_ladder):
        res = moment_samples(model, eps, config.alpha, config.moment_time, config.n_realizations,
                             config.master_seed, ei, L=config.moment_L, threads=config.threads,
                             resolution=config.resolution, with_Z=with_Z)
        raw += [[eps, r, seed] + row for r, (seed, row) in enumerate(res)]
    table, fits = summarize_moments(raw, config.eps_ladder)
    paths = {
        "raw": _write_csv(out / "moments_raw.csv", ["eps", "realization", "seed"] + list(MOMENTS), raw),
        "summary": _write_csv(out / "moments.csv", ["eps", "moment", "estimate", "stderr"], table),
        "fit": _write_csv(out / "moments_fit.csv", ["quantity", "slope", "intercept",
                                                    "slope_stderr"], _fit_rows(fits)),
    }
    return StudyResult(raw, table, fits, paths)


# ---------------------------------------------------------------------------
# Vbar_eps study


def run_vbar_study(config, out_dir=None):
    """``Vbar_eps(t)`` over the eps ladder and ``config.times`` against the limit constant."""
    out = Path(out_dir or config.out_dir)
    model = config.covariance
    target = homog.vbar_slow(model)
    rows = []
    for ei, eps in enumerate(config.eps_ladder):
        for ti, t in enumerate(config.times):
            if config.vbar_method == "quadrature":
                val, se = homog.vbar_eps_quadrature(model, eps, config.alpha, t), 0.0
            else:
                val, se = homog.vbar_eps(model, eps, config.alpha, t, "monte-carlo",
                                         n=config.n_realizations,
                                         seed=realization_seed(config.master_seed, ei, ti),
                                         L=config.moment_L, threads=config.threads)
            rel = (val - target) / target if target != 0 else 0.0
            rows.append([eps, t, val, se, rel])
    path = _write_csv(out / "vbar_study.csv", ["eps", "t", "vbar_eps", "stderr", "rel_error"], rows)
    return StudyResult(rows, rows, {}, {"summary": path})


# ---------------------------------------------------------------------------
# plot data


def _series_from(header, rows):
    """Map a known CSV schema onto named ``(x, y, yerr)`` series."""
    if header is None:
        return {}, {}, "eps", ""
    if header == CONVERGENCE_HEADER:
        data = [ConvergenceRecord(float(r[0]), int(r[1]), int(r[2]), float(r[3]), float(r[4]),
                                  float(r[5]), r[6]) for r in rows]
        eps = sorted({d.eps for d in data}, reverse=True)
        summary, fits = summarize_convergence(data, eps)
        out = {}
        for j, q in enumerate(QUANTITIES):
            out[q] = [(s[0], s[2 + 3 * j], 0.5 * (s[4 + 3 * j] - s[3 + 3 * j])) for s in summary
                      if s[1] > 0]
        out = {k: v for k, v in out.items() if v}
        return out, fits, "eps", "median over realizations"
    if header == ["eps", "moment", "estimate", "stderr"]:
        table = [[float(r[0]), r[1], float(r[2]), float(r[3])] for r in rows]
        out = {name: [(r[0], r[2], r[3]) for r in table if r[1] == name] for name in MOMENTS}
        out = {k: v for k, v in out.items() if v}
        fits = {}
        for k, v in out.items():
            arr = np.array(v)
            if len(v) >= 2 and np.all(arr[:, 1] > 0):
                fits[k] = fit_loglog(arr[:, 0], arr[:, 1], arr[:, 2])
        return out, fits, "eps", "moment at (0, t)"
    if header == ["eps", "t", "vbar_eps", "stderr", "rel_error"]:
        out = {}
        for r in rows:
            out.setdefault(f"t={float(r[1]):g}", []).append((float(r[0]), abs(float(r[4])), float(r[3])))
        fits = {}
        for k, v in out.items():
            arr = np.array(v)
            if len(v) >= 2 and np.all(arr[:, 1] > 0):
                fits[k] = fit_loglog(arr[:, 0], arr[:, 1])
        return out, fits, "eps", "relative error of Vbar_eps"
    raise FormatError(f"unrecognised CSV schema {header}")


def emit_plot_data(csv_path, out_dir=None, svg=True):
    """Write whitespace-separated ``x y yerr`` series and a log-log SVG.

    Returns ``(series_paths, fits)``; the slopes in the SVG legend come from
    the same fitting routine as the study summaries.
    """
    csv_path = Path(csv_path)
    out = Path(out_dir) if out_dir else csv_path.parent / (csv_path.stem + "_plot")
    out.mkdir(parents=True, exist_ok=True)
    header, rows = _read_csv(csv_path)
    series, fits, xlabel, ylabel = _series_from(header, rows)
    paths = {}
    for name, pts in series.items():
        p = out / f"{name.replace('=', '_')}.dat"
        with open(p, "w") as fh:
            fh.write("# x y yerr\n")
            for x, y, e in pts:
                fh.write(f"{x!r} {y!r} {e!r}\n")
        paths[name] = p
    if svg and series:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5.5, 4))
        for name, pts in series.items():
            arr = np.array([p for p in pts if p[1] > 0])
            if arr.size == 0:
                continue
            label = name
            if name in fits:
                label += f"  slope {fits[name].slope:.3f}"
            ax.errorbar(arr[:, 0], arr[:, 1], yerr=arr[:, 2], marker="o", capsize=3, label=label)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out / f"{csv_path.stem}.svg", metadata={"Date": None})
        plt.close(fig)
        paths["svg"] = out / f"{csv_path.stem}.svg"
    return paths, fits
