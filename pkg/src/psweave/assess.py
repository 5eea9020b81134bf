"""Predictive-accuracy assessment and posterior predictive checks.

WAIC and PSIS-LOO are computed from a pointwise log-likelihood matrix with
one column per observed (patient, variable) cell: missing cells contribute
no term, and the hurdle density is evaluated on the branch the data actually
took (log pi for a structural zero, log(1 - pi) plus the positive-part
density otherwise).  When an upstream regressor of a unit is missing, the
draw-specific latent from the fitted chains stands in for it, so every
matrix entry is conditioned the same way the model was fit.

Matrix construction is vectorised across draws with a plain Python loop
over units; all reductions run in a fixed order, so repeated calls give
bit-identical results.

PSIS follows the smoothed importance sampling recipe: the largest
importance ratios are replaced by expected order statistics of a
generalized Pareto distribution fitted to them by profile likelihood
(method-of-moments start), then the weights are truncated by the 3/4-power
rule.  Tail shapes above ``KHAT_FLAG`` mark a unit as unreliable.

Posterior predictive replication draws whole synthetic outcome tables at
retained draws, including hurdle zeros, and renders density, empirical-CDF
and mean-histogram overlays against the observed data.
"""

import math
import os
import csv
from dataclasses import dataclass

import numpy as np
import scipy.special as sp
from scipy.optimize import minimize_scalar

from . import families
from ._svg import PALETTE, Figure, Panel, kde, safe_name
from ._util import STREAM_PPC, fmt_float, rng_stream
from .data import OUTCOME_VARS, ZERO_TOL, is_missing
from .model import HURDLE_STAGES, STAGE_REGRESSORS, _SHORT

__all__ = [
    "LogLikMatrix", "VariableAssessment", "FitAssessment", "PpcSummary",
    "pointwise_loglik", "waic", "psis_loo", "gpd_fit", "assess_fit",
    "write_assessment_csv", "ppc_replicate", "simulate_outcomes",
    "KHAT_FLAG",
]

KHAT_FLAG = 0.7


@dataclass(frozen=True)
class LogLikMatrix:
    """Pointwise log-likelihood, draws by observed units, for one variable."""

    variable: str
    values: np.ndarray        # (S, N)
    ids: tuple                # record id per unit, length N


@dataclass(frozen=True)
class VariableAssessment:
    variable: str
    family: str
    n_units: int
    waic: float
    waic_p_d: float
    looic: float
    loo_p_d: float
    khats: np.ndarray
    ids: tuple

    @property
    def n_flagged(self):
        k = np.asarray(self.khats, dtype=float)
        return int(np.count_nonzero(np.isnan(k) | (k > KHAT_FLAG)))


@dataclass(frozen=True)
class FitAssessment:
    """Per-variable WAIC/LOOIC rows plus their totals."""

    rows: tuple

    @property
    def total_waic(self):
        return float(sum(r.waic for r in self.rows))

    @property
    def total_waic_p_d(self):
        return float(sum(r.waic_p_d for r in self.rows))

    @property
    def total_looic(self):
        return float(sum(r.looic for r in self.rows))

    @property
    def total_loo_p_d(self):
        return float(sum(r.loo_p_d for r in self.rows))

    @property
    def n_flagged(self):
        return int(sum(r.n_flagged for r in self.rows))


# -- draw-resolved views of the fitted model ------------------------------------


class _DrawView:
    """Constrained draw columns aligned with one arm model's layout."""

    def __init__(self, m, draws):
        if list(draws.names) != list(m.param_names):
            raise ValueError("draws do not match the model's parameter layout")
        self.m = m
        self.x = draws.stacked()
        self.n_draws = self.x.shape[0]

    def col(self, name):
        return self.x[:, self.m.name_index(name)]

    def block(self, key):
        return self.x[:, self.m.layout.blocks[key]]

    def raw_value(self, pos, stage):
        """Raw-scale stage value for a record: scalar if observed, else the
        per-draw latent column (hurdle latents live on the log scale)."""
        v = getattr(self.m.records[pos], stage)
        if not is_missing(v):
            return float(v)
        lat = self.x[:, self.m.layout.latent_idx[stage][pos]]
        return lat if stage == "e_pfs" else np.exp(lat)

    def log_value(self, pos, stage):
        """log-or-zero of a cost regressor; the latent already is the log."""
        v = getattr(self.m.records[pos], stage)
        if not is_missing(v):
            return math.log(v) if v > ZERO_TOL else 0.0
        return self.x[:, self.m.layout.latent_idx[stage][pos]]

    def regressors(self, pos, stage):
        out = []
        for rn in STAGE_REGRESSORS[stage]:
            if rn.startswith("log_"):
                out.append(self.log_value(pos, rn[4:]))
            else:
                out.append(self.raw_value(pos, rn))
        return out


def _linear(coef, first_slope, regs, cov_row, shifts=None):
    """coef[0] + slopes . regs + covariate tail, per draw."""
    pred = coef[:, 0].copy()
    for j, r in enumerate(regs):
        x = r if shifts is None else r - shifts[j]
        pred += coef[:, first_slope + j] * x
    k = first_slope + len(regs)
    for c in range(coef.shape[1] - k):
        pred += coef[:, k + c] * cov_row[c]
    return pred


def pointwise_loglik(m, draws, variable):
    """Log density of each observed value of `variable`, per retained draw.

    Zero cells take the hurdle's zero branch, positive cells the continuous
    branch; missing upstream regressors resolve to that draw's latent.
    """
    if variable not in OUTCOME_VARS:
        raise ValueError("unknown outcome variable %r" % (variable,))
    view = _DrawView(m, draws)
    spec = m.spec
    cov = m.covariates

    cols, ids = [], []
    with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                     under="ignore"):
        if variable == "e_pfs":
            B = view.block("mean_e_pfs")
            sigma = view.col("sigma_pfs")
            for pos, rec in enumerate(m.records):
                if is_missing(rec.e_pfs):
                    continue
                row = cov[pos] if cov is not None else ()
                pred = _linear(B, 1, [], row)
                cols.append(families.family_lpdf(spec.family_e_pfs,
                                                 float(rec.e_pfs), pred, sigma))
                ids.append(rec.id)
        else:
            stage = variable
            fam_name = spec.stage_family(stage)
            link = spec.stage_link(stage)
            anc_name = spec.stage_ancillary(stage)
            anc = view.col("%s_%s" % (anc_name, _SHORT[stage])) if anc_name else None
            G = view.block("logit_%s" % stage)
            B = view.block("mean_%s" % stage)
            shifts = m._plan["centers"][stage]
            for pos, rec in enumerate(m.records):
                v = getattr(rec, stage)
                if is_missing(v):
                    continue
                regs = view.regressors(pos, stage)
                row = cov[pos] if cov is not None else ()
                logit = _linear(G, 1, regs, row, shifts)
                if abs(v) < ZERO_TOL:
                    ll = -np.logaddexp(0.0, -logit)
                else:
                    pred = _linear(B, 1, regs, row)
                    loc = np.exp(pred) if link == "log" else pred
                    ll = -np.logaddexp(0.0, logit) \
                        + families.family_lpdf(fam_name, float(v), loc, anc)
                cols.append(np.asarray(ll, dtype=float))
                ids.append(rec.id)

    if cols:
        values = np.column_stack(cols)
    else:
        values = np.zeros((view.n_draws, 0))
    return LogLikMatrix(variable, values, tuple(ids))


# -- information criteria ---------------------------------------------------------


def _as_matrix(ll):
    v = np.asarray(getattr(ll, "values", ll), dtype=float)
    if v.ndim != 2:
        raise ValueError("expected a draws-by-units matrix")
    return v


def _lppd_terms(v):
    mx = np.max(v, axis=0)
    return mx + np.log(np.mean(np.exp(v - mx), axis=0))


def waic(ll):
    """(waic, p_d): -2(lppd - p_d), lppd by stable log-mean-exp, p_d by
    the per-unit sample variance of the log likelihood."""
    v = _as_matrix(ll)
    if v.shape[0] < 2:
        raise ValueError("need at least 2 draws")
    lppd = float(np.sum(_lppd_terms(v)))
    p_d = float(np.sum(np.var(v, axis=0, ddof=1)))
    return -2.0 * (lppd - p_d), p_d


def gpd_fit(tail):
    """Generalized Pareto (shape k, scale sigma) for positive exceedances.

    Profile likelihood in b = k/sigma, started from the method-of-moments
    estimate and polished over a bracketing grid; k has the heavy-tail sign
    convention (k > 0 means polynomial tail).
    """
    x = np.asarray(tail, dtype=float).ravel()
    if x.size < 5:
        raise ValueError("need at least 5 exceedances")
    if not np.all(x > 0):
        raise ValueError("exceedances must be positive")
    if float(np.ptp(x)) == 0.0:
        raise ValueError("tail values are all equal")

    n = x.size
    xm = float(np.mean(x))
    xq = float(np.quantile(x, 0.25))
    xmax = float(np.max(x))
    lo = -(1.0 - 1e-9) / xmax

    def profile(b):
        if b <= lo:
            return -math.inf
        if b == 0.0:
            return -n * (1.0 + math.log(xm))
        k = float(np.mean(np.log1p(b * x)))
        if k == 0.0:
            return -n * (1.0 + math.log(xm))
        return n * (math.log(b / k) - k - 1.0)

    r = xm * xm / float(np.var(x, ddof=1))
    k_mom = 0.5 * (1.0 - r)
    s_mom = 0.5 * xm * (r + 1.0)
    cand = [0.0, k_mom / s_mom if s_mom > 0 else 0.0]
    # bracketing grid in the spirit of quantile-spaced profile evaluation
    m_grid = 30 + int(math.sqrt(n))
    for j in range(1, m_grid + 1):
        cand.append(1.0 / xmax + (1.0 - math.sqrt(m_grid / (j - 0.5)))
                    / (3.0 * xq))
    cand = sorted(b for b in cand if b > lo)
    vals = [profile(b) for b in cand]
    i = int(np.argmax(vals))
    b_lo = cand[i - 1] if i > 0 else max(lo * (1.0 - 1e-9), cand[i] - 1.0)
    b_hi = cand[i + 1] if i + 1 < len(cand) else cand[i] + 1.0

    res = minimize_scalar(lambda b: -profile(b), bounds=(b_lo, b_hi),
                          method="bounded",
                          options={"xatol": 1e-12 * max(1.0, abs(cand[i]))})
    b = float(res.x) if -res.fun >= vals[i] else cand[i]
    if b == 0.0:
        return 0.0, xm
    k = float(np.mean(np.log1p(b * x)))
    return k, k / b


def _gpd_quantiles(p, k, sigma):
    p = np.asarray(p, dtype=float)
    if abs(k) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma / k * (np.power(1.0 - p, -k) - 1.0)


def _psis_smooth(lw):
    """Smooth centered log weights; returns (new log weights, khat).

    khat is NaN when the tail cannot be fitted (ties or degenerate spread).
    """
    S = lw.size
    M = min(int(math.ceil(0.2 * S)), int(math.ceil(3.0 * math.sqrt(S))))
    order = np.argsort(lw, kind="stable")
    tail = order[S - M:]
    cut = float(lw[order[S - M - 1]])
    exceed = np.exp(lw[tail]) - math.exp(cut)
    if not np.all(exceed > 0) or float(np.ptp(exceed)) == 0.0:
        return lw, math.nan
    try:
        k, sigma = gpd_fit(exceed)
    except ValueError:
        return lw, math.nan
    p = (np.arange(1, M + 1) - 0.5) / M
    smoothed = math.exp(cut) + _gpd_quantiles(p, k, sigma)
    out = lw.copy()
    out[tail] = np.log(smoothed)
    # 3/4-power truncation guard on the smoothed weights
    cap = math.log(float(np.mean(np.exp(out)))) + 0.75 * math.log(S)
    np.minimum(out, cap, out=out)
    return out, k


def psis_loo(ll):
    """(looic, p_d, khats) by Pareto-smoothed importance sampling.

    Per unit the raw weights are exp(-loglik) centered at their max; the
    tail is smoothed by a fitted generalized Pareto and the unit's khat is
    reported (NaN for a degenerate constant column, which is flagged).
    """
    v = _as_matrix(ll)
    S, N = v.shape
    if S < 25:
        raise ValueError("need at least 25 draws for smoothed importance sampling")
    khats = np.full(N, math.nan)
    elpd = np.empty(N)
    lppd_terms = _lppd_terms(v)
    for i in range(N):
        col = v[:, i]
        if float(np.ptp(col)) == 0.0:
            elpd[i] = col[0]
            continue
        lw = -col
        lw = lw - np.max(lw)
        lw, khats[i] = _psis_smooth(lw)
        elpd[i] = sp.logsumexp(lw + col) - sp.logsumexp(lw)
    looic = -2.0 * float(np.sum(elpd))
    p_d = float(np.sum(lppd_terms - elpd))
    return looic, p_d, khats


def assess_fit(m, draws):
    """WAIC and PSIS-LOO rows for every outcome variable of one arm model."""
    rows = []
    for var in OUTCOME_VARS:
        ll = pointwise_loglik(m, draws, var)
        if ll.values.shape[1] == 0:
            continue
        w, w_pd = waic(ll)
        looic, l_pd, khats = psis_loo(ll)
        rows.append(VariableAssessment(
            variable=var, family=m.spec.stage_family(var),
            n_units=len(ll.ids), waic=w, waic_p_d=w_pd,
            looic=looic, loo_p_d=l_pd, khats=khats, ids=ll.ids))
    return FitAssessment(tuple(rows))


ASSESSMENT_HEADER = ("variable", "family", "n_units", "waic", "waic_p_d",
                     "looic", "loo_p_d", "khat_flagged")


def write_assessment_csv(path, assessment):
    """Per-variable criteria rows with a final total row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ASSESSMENT_HEADER)
        for r in assessment.rows:
            writer.writerow([r.variable, r.family, r.n_units,
                             fmt_float(r.waic), fmt_float(r.waic_p_d),
                             fmt_float(r.looic), fmt_float(r.loo_p_d),
                             r.n_flagged])
        writer.writerow(["total", "", sum(r.n_units for r in assessment.rows),
                         fmt_float(assessment.total_waic),
                         fmt_float(assessment.total_waic_p_d),
                         fmt_float(assessment.total_looic),
                         fmt_float(assessment.total_loo_p_d),
                         assessment.n_flagged])


# -- posterior predictive replication ----------------------------------------------


_FITTED = object()


def simulate_outcomes(m, xrow, rng, n_rows=None, covariates=_FITTED):
    """One replicated outcome table at a single constrained parameter vector.

    Returns {variable: (n,) array}.  Hurdle zeros are drawn explicitly and
    downstream regressors use the simulated values, so the rows are joint
    samples.  `covariates` defaults to the model's centered rows; pass None
    to drop covariate terms (a patient at the covariate mean).
    """
    lay, spec = m.layout, m.spec
    cov = m.covariates if covariates is _FITTED else covariates
    if n_rows is None:
        n_rows = cov.shape[0] if cov is not None else len(m.records)
    if cov is not None and cov.shape[0] != n_rows:
        raise ValueError("covariate rows do not match n_rows")
    xrow = np.asarray(xrow, dtype=float)

    def tail(coef, nreg):
        return cov @ coef[1 + nreg:] if cov is not None and coef.size > 1 + nreg \
            else 0.0

    b = xrow[lay.blocks["mean_e_pfs"]]
    pred = b[0] + tail(b, 0)
    sigma_pfs = float(xrow[lay.blocks["anc_e_pfs"][0]])
    sim = {"e_pfs": families.sample_nat(spec.family_e_pfs, rng,
                                        np.broadcast_to(pred, (n_rows,)).copy(),
                                        sigma_pfs, size=n_rows)}
    for stage in HURDLE_STAGES:
        names = STAGE_REGRESSORS[stage]
        regs = np.column_stack([
            _log_or_zero_col(sim[rn[4:]]) if rn.startswith("log_") else sim[rn]
            for rn in names])
        G = xrow[lay.blocks["logit_%s" % stage]]
        B = xrow[lay.blocks["mean_%s" % stage]]
        shifts = np.asarray(m._plan["centers"][stage], dtype=float)
        nreg = len(names)
        logit = G[0] + (regs - shifts) @ G[1:1 + nreg] + tail(G, nreg)
        pi = sp.expit(logit)
        zero = rng.random(n_rows) < pi
        pred = B[0] + regs @ B[1:1 + nreg] + tail(B, nreg)
        loc = np.exp(pred) if spec.stage_link(stage) == "log" else pred
        anc_name = spec.stage_ancillary(stage)
        anc = float(xrow[lay.blocks["anc_%s" % stage][0]]) if anc_name else None
        pos = families.sample_nat(spec.stage_family(stage), rng, loc, anc,
                                  size=n_rows)
        sim[stage] = np.where(zero, 0.0, pos)
    return sim


def _log_or_zero_col(c):
    out = np.zeros_like(c)
    pos = c > ZERO_TOL
    out[pos] = np.log(c[pos])
    return out


@dataclass(frozen=True)
class PpcSummary:
    """Replicate-vs-observed summaries for one outcome variable."""

    variable: str
    observed_mean: float
    observed_zero_fraction: float
    replicate_means: np.ndarray
    replicate_zero_fractions: np.ndarray
    replicate_min: np.ndarray
    replicate_max: np.ndarray


def ppc_replicate(m, draws, n_rep, seed=0, out_dir=None):
    """Replicate whole outcome tables at evenly spaced retained draws.

    Returns {variable: PpcSummary}; when `out_dir` is given, writes density,
    ECDF and replicate-mean overlays per variable as SVG files.
    """
    if n_rep < 1:
        raise ValueError("n_rep must be >= 1")
    view = _DrawView(m, draws)
    S = view.n_draws
    reps = []
    for j in range(n_rep):
        rng = rng_stream(seed, STREAM_PPC, j)
        reps.append(simulate_outcomes(m, view.x[(j * S) // n_rep], rng))

    out = {}
    for var in OUTCOME_VARS:
        obs = np.array([getattr(r, var) for r in m.records
                        if not is_missing(getattr(r, var))], dtype=float)
        rep_vals = [r[var] for r in reps]
        means = np.array([float(np.mean(v)) for v in rep_vals])
        zfrac = np.array([float(np.mean(np.abs(v) < ZERO_TOL)) for v in rep_vals])
        out[var] = PpcSummary(
            variable=var,
            observed_mean=float(np.mean(obs)) if obs.size else math.nan,
            observed_zero_fraction=float(np.mean(np.abs(obs) < ZERO_TOL))
            if obs.size else math.nan,
            replicate_means=means,
            replicate_zero_fractions=zfrac,
            replicate_min=np.array([float(np.min(v)) for v in rep_vals]),
            replicate_max=np.array([float(np.max(v)) for v in rep_vals]))
        if out_dir is not None:
            _ppc_plots(out_dir, var, obs, rep_vals, out[var])
    return out


def _finite_span(arrays):
    lo = min(float(np.min(a)) for a in arrays if a.size)
    hi = max(float(np.max(a)) for a in arrays if a.size)
    if not (lo < hi):
        lo, hi = lo - 1.0, hi + 1.0
    return lo, hi


def _ppc_plots(out_dir, var, obs, rep_vals, summary):
    tag = safe_name(var)
    hurdle = var in HURDLE_STAGES
    max_curves = 30

    def positives(v):
        return v[np.abs(v) > ZERO_TOL] if hurdle else v

    # density overlay (positive part for hurdle variables)
    curves = []
    for v in rep_vals[:max_curves]:
        c = kde(positives(v))
        if c is not None:
            curves.append(c)
    obs_curve = kde(positives(obs)) if obs.size else None
    fig = Figure(440, 300)
    spans = [c[0] for c in curves] + ([obs_curve[0]] if obs_curve else [])
    dens = [c[1] for c in curves] + ([obs_curve[1]] if obs_curve else [])
    if spans:
        xlim = _finite_span(spans)
        ylim = (0.0, max(float(np.max(d)) for d in dens) * 1.05)
        p = Panel(fig, 50, 30, 360, 230, xlim, ylim,
                  title="replicated density: %s" % var, xlabel=var,
                  ylabel="density")
        p.frame()
        for gx, gy in curves:
            p.polyline(gx, gy, PALETTE[0], width=0.8, opacity=0.3)
        if obs_curve is not None:
            p.polyline(obs_curve[0], obs_curve[1], PALETTE[1], width=1.8)
    fig.write(os.path.join(out_dir, "ppc_density_%s.svg" % tag))

    # empirical CDF overlay (all values, zeros included)
    fig = Figure(440, 300)
    xlim = _finite_span(rep_vals[:max_curves] + ([obs] if obs.size else []))
    p = Panel(fig, 50, 30, 360, 230, xlim, (0.0, 1.0),
              title="replicated ECDF: %s" % var, xlabel=var, ylabel="F")
    p.frame()
    for v in rep_vals[:max_curves]:
        s = np.sort(v)
        p.polyline(s, np.arange(1, s.size + 1) / s.size, PALETTE[0],
                   width=0.8, opacity=0.3)
    if obs.size:
        s = np.sort(obs)
        p.polyline(s, np.arange(1, s.size + 1) / s.size, PALETTE[1], width=1.8)
    fig.write(os.path.join(out_dir, "ppc_ecdf_%s.svg" % tag))

    # replicate means against the observed mean
    fig = Figure(440, 300)
    means = summary.replicate_means
    lo, hi = _finite_span([means] + ([np.array([summary.observed_mean])]
                                     if obs.size else []))
    pad = 0.05 * (hi - lo)
    counts, edges = np.histogram(means, bins=min(20, max(5, means.size // 5)))
    p = Panel(fig, 50, 30, 360, 230, (lo - pad, hi + pad),
              (0.0, float(np.max(counts)) * 1.05 if counts.size else 1.0),
              title="replicate means: %s" % var, xlabel="mean", ylabel="count")
    p.frame()
    for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
        p.vbar(e0, e1, float(c), PALETTE[0], opacity=0.55)
    if obs.size:
        p.vline(summary.observed_mean, PALETTE[1], width=1.8)
    fig.write(os.path.join(out_dir, "ppc_means_%s.svg" % tag))
