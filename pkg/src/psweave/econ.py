"""Cost-effectiveness outputs: marginal means, increments, ICER, CEP, CEAC.

Marginal component means are Monte Carlo integrals: at every retained
posterior draw a fresh synthetic cohort is simulated jointly through the
hurdle chain and each outcome column is averaged, zeros included, so a
hurdle component's mean is the empirical (1 - pi) times its positive-part
mean.  Each draw gets its own derived RNG stream, which makes the loop
order irrelevant to the result and reruns bit-identical.

Arms are fit independently; increment draws pair the two arms' retained
draws by index.  The ICER divides the posterior means of the increments
rather than averaging per-draw ratios, which are unstable near zero QAS
gain.  The cost-effectiveness plane and acceptability curve share one
predicate: a draw is sustainable at willingness-to-pay k when
k * delta_e - delta_c > 0.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._svg import PALETTE, Figure, Panel
from ._util import STREAM_ECON, fmt_float, rng_stream
from .assess import simulate_outcomes
from .diagnostics import hpd

__all__ = [
    "ArmMeans", "EconSummary", "marginal_means", "aggregate_and_increment",
    "icer", "cep", "ceac", "default_k_grid", "summarize", "write_econ_csv",
    "write_ceac_csv", "cep_plot", "ceac_plot", "DEFAULT_WTP",
]

DEFAULT_WTP = 55000.0

ECON_HEADER = ("quantity", "mean", "median", "sd", "hpd95_lo", "hpd95_hi")


@dataclass(frozen=True)
class ArmMeans:
    """Per-draw Monte Carlo means of each outcome component for one arm."""

    arm: int
    n_mc: int
    e_pfs: np.ndarray
    e_pps: np.ndarray
    c_drug: np.ndarray
    c_hos: np.ndarray
    c_ae: np.ndarray

    @property
    def mu_e(self):
        return self.e_pfs + self.e_pps

    @property
    def mu_c(self):
        return self.c_drug + self.c_hos + self.c_ae

    @property
    def n_draws(self):
        return self.e_pfs.shape[0]


@dataclass(frozen=True)
class EconSummary:
    """Incremental analysis of two arms at a willingness-to-pay threshold."""

    arm1: ArmMeans
    arm2: ArmMeans
    delta_e: np.ndarray
    delta_c: np.ndarray
    icer: float
    k: float
    k_grid: np.ndarray
    ceac: np.ndarray

    @property
    def sustainable(self):
        """Proportion of draws below the k-line through the origin."""
        return float(np.mean(self.k * self.delta_e - self.delta_c > 0.0))


def marginal_means(m, draws, n_mc=1000, seed=0):
    """Per-draw component means for one arm by joint forward simulation.

    Covariate models integrate over the fitted covariate rows by
    resampling them; without covariates the cohort is exchangeable.
    """
    if n_mc < 100:
        raise ValueError("n_mc must be >= 100")
    if list(draws.names) != list(m.param_names):
        raise ValueError("draws do not match the model's parameter layout")
    x = draws.stacked()
    S = x.shape[0]
    cols = {v: np.empty(S) for v in ("e_pfs", "e_pps", "c_drug", "c_hos",
                                     "c_ae")}
    cov = m.covariates
    # extreme draws can push a lognormal simulation to inf; keep those
    # means as inf rather than warning
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(S):
            rng = rng_stream(seed, STREAM_ECON, s)
            if cov is not None:
                rows = cov[rng.integers(0, cov.shape[0], size=n_mc)]
                sim = simulate_outcomes(m, x[s], rng, n_rows=n_mc,
                                        covariates=rows)
            else:
                sim = simulate_outcomes(m, x[s], rng, n_rows=n_mc,
                                        covariates=None)
            for v in cols:
                cols[v][s] = float(np.mean(sim[v]))
    return ArmMeans(arm=m.arm, n_mc=n_mc, **cols)


def aggregate_and_increment(arm1, arm2):
    """(delta_e, delta_c) per draw, arms paired draw-index to draw-index."""
    if arm1.n_draws != arm2.n_draws:
        raise ValueError("arms have different retained draw counts")
    return arm2.mu_e - arm1.mu_e, arm2.mu_c - arm1.mu_c


def icer(delta_e_mean, delta_c_mean):
    """Cost per QAS gained from the posterior means of the increments.

    Zero QAS gain has no defined ratio and comes back as NaN.
    """
    if delta_e_mean == 0.0:
        return math.nan
    return delta_c_mean / delta_e_mean


def cep(delta_e, delta_c, k=DEFAULT_WTP, path=None):
    """Cost-effectiveness plane: ((delta_e, delta_c) points, sustainable
    proportion at k).  Writes a scatter SVG with the origin line when a
    path is given."""
    de = np.asarray(delta_e, dtype=float)
    dc = np.asarray(delta_c, dtype=float)
    if de.shape != dc.shape or de.ndim != 1 or de.size == 0:
        raise ValueError("need matching non-empty increment vectors")
    points = np.column_stack([de, dc])
    proportion = float(np.mean(k * de - dc > 0.0))
    if path is not None:
        cep_plot(path, de, dc, k, proportion)
    return points, proportion


def default_k_grid():
    return np.arange(0.0, 200001.0, 1000.0)


def ceac(delta_e, delta_c, k_grid=None):
    """Acceptability curve: share of sustainable draws at each threshold."""
    de = np.asarray(delta_e, dtype=float)
    dc = np.asarray(delta_c, dtype=float)
    if de.shape != dc.shape or de.ndim != 1 or de.size == 0:
        raise ValueError("need matching non-empty increment vectors")
    grid = default_k_grid() if k_grid is None else \
        np.asarray(k_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("k grid must be a non-empty vector")
    if np.any(grid < 0):
        raise ValueError("k grid must be non-negative")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("k grid must be strictly ascending")
    return np.array([float(np.mean(k * de - dc > 0.0)) for k in grid])


def summarize(arm1, arm2, k=DEFAULT_WTP, k_grid=None):
    """EconSummary from two arms' marginal means."""
    de, dc = aggregate_and_increment(arm1, arm2)
    grid = default_k_grid() if k_grid is None else np.asarray(k_grid, float)
    return EconSummary(arm1=arm1, arm2=arm2, delta_e=de, delta_c=dc,
                       icer=icer(float(np.mean(de)), float(np.mean(dc))),
                       k=float(k), k_grid=grid, ceac=ceac(de, dc, grid))


# -- tabular and graphical output -------------------------------------------------


def _stat_row(name, v):
    with np.errstate(over="ignore", invalid="ignore"):
        lo, hi = hpd(v, 0.95)
        return [name, fmt_float(float(np.mean(v))),
                fmt_float(float(np.median(v))),
                fmt_float(float(np.std(v, ddof=1))),
                fmt_float(lo), fmt_float(hi)]


def write_econ_csv(path, summary):
    """Posterior location/spread per quantity, ICER as a single value row."""
    rows = [("mu_e1", summary.arm1.mu_e), ("mu_c1", summary.arm1.mu_c),
            ("mu_e2", summary.arm2.mu_e), ("mu_c2", summary.arm2.mu_c),
            ("delta_e", summary.delta_e), ("delta_c", summary.delta_c)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ECON_HEADER)
        for name, v in rows:
            writer.writerow(_stat_row(name, v))
        writer.writerow(["icer", fmt_float(summary.icer), "", "", "", ""])


def write_ceac_csv(path, k_grid, values):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "probability"])
        for k, p in zip(k_grid, values):
            writer.writerow([fmt_float(float(k)), fmt_float(float(p))])


_MAX_POINTS = 4000


def cep_plot(path, delta_e, delta_c, k, proportion):
    de = np.asarray(delta_e, dtype=float)
    dc = np.asarray(delta_c, dtype=float)
    if de.size > _MAX_POINTS:
        idx = np.linspace(0, de.size - 1, _MAX_POINTS).astype(int)
        de, dc = de[idx], dc[idx]
    fig = Figure(460, 340)
    xpad = 0.05 * (float(np.ptp(de)) or 1.0)
    ypad = 0.05 * (float(np.ptp(dc)) or 1.0)
    xlim = (min(float(de.min()), 0.0) - xpad, float(de.max()) + xpad)
    ylim = (min(float(dc.min()), 0.0) - ypad,
            max(float(dc.max()), k * xlim[1]) + ypad)
    p = Panel(fig, 60, 30, 360, 250, xlim, ylim,
              title="cost-effectiveness plane (k=%s, sustainable %.3f)"
                    % (fmt_float(float(k)), proportion),
              xlabel="delta QAS", ylabel="delta cost")
    p.frame()
    for x, y in zip(de, dc):
        p.circle(float(x), float(y), 1.6, PALETTE[0], opacity=0.35)
    xs = np.array(xlim)
    p.polyline(xs, k * xs, PALETTE[1], width=1.4)
    fig.write(path)


def ceac_plot(path, k_grid, values):
    fig = Figure(460, 320)
    p = Panel(fig, 60, 30, 360, 230, (float(k_grid[0]), float(k_grid[-1])),
              (0.0, 1.0), title="cost-effectiveness acceptability curve",
              xlabel="willingness-to-pay k", ylabel="P(sustainable)")
    p.frame()
    p.polyline(np.asarray(k_grid, float), np.asarray(values, float),
               PALETTE[0], width=1.6)
    fig.write(path)
