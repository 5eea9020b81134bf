"""Convergence checks and posterior interval summaries.

split_rhat and ess operate on split half-chains: each chain is cut in two
(dropping the middle draw of an odd-length chain) so that within-chain drift
shows up as between-half disagreement. R-hat is the classic variance-ratio
form, not the rank-normalized variant. ESS combines autocorrelations across
the half-chains and truncates the series by Geyer's initial monotone
positive sequence; super-efficient (ESS > S) results are reported as-is.
"""

import csv
import math

import numpy as np

from . import _svg
from ._util import fmt_float

__all__ = ["split_rhat", "ess", "hpd", "summary_rows", "write_summary_csv",
           "trace_density_export"]


def _chain_rows(chains, param):
    if hasattr(chains, "matrix"):
        return np.asarray(chains.matrix(param), dtype=float)
    mat = np.atleast_2d(np.asarray(chains, dtype=float))
    return mat


def _split_halves(rows):
    halves = []
    for row in rows:
        n2 = row.size // 2
        halves.append(row[:n2])
        halves.append(row[row.size - n2:])
    return halves


def _check_halves(halves):
    if len(halves) < 2:
        raise ValueError("need at least 2 split half-chains")
    if any(h.size < 4 for h in halves):
        raise ValueError("each split half-chain needs at least 4 draws")


def split_rhat(chains, param=None):
    """Classic split R-hat; NaN when the draws have no variance."""
    rows = _chain_rows(chains, param)
    halves = _split_halves(rows)
    _check_halves(halves)
    n = halves[0].size
    means = np.array([h.mean() for h in halves])
    variances = np.array([h.var(ddof=1) for h in halves])
    w = float(variances.mean())
    if not math.isfinite(w) or w <= 0.0:
        return math.nan
    b = n * float(means.var(ddof=1))
    var_plus = w * (n - 1) / n + b / n
    return math.sqrt(var_plus / w)


def _autocov(x):
    """Autocovariance sequence with 1/n normalization, FFT-based."""
    n = x.size
    xc = x - x.mean()
    size = 1
    while size < 2 * n:
        size <<= 1
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def ess(chains, param=None):
    """Effective sample size across split half-chains; NaN if degenerate."""
    rows = _chain_rows(chains, param)
    halves = _split_halves(rows)
    _check_halves(halves)
    m = len(halves)
    n = halves[0].size
    acovs = np.stack([_autocov(h) for h in halves])
    variances = acovs[:, 0] * n / (n - 1)
    w = float(variances.mean())
    if not math.isfinite(w) or w <= 0.0:
        return math.nan
    means = np.array([h.mean() for h in halves])
    var_plus = w * (n - 1) / n + float(means.var(ddof=1))
    if var_plus <= 0.0:
        return math.nan

    mean_acov = acovs.mean(axis=0)
    rho = 1.0 - (w - mean_acov) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive-lag pairs while positive, enforcing that the
    # pair sums never increase
    total = 0.0
    prev = math.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        k += 1
    tau = max(-1.0 + 2.0 * total, 1e-12)
    return m * n / tau


def hpd(samples, mass):
    """Shortest contiguous interval holding ceil(mass*S) sorted samples.

    Ties break toward the lowest lower bound. mass = 1 returns the full
    range.
    """
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size < 20:
        raise ValueError("need at least 20 samples")
    if not 0.0 < mass <= 1.0:
        raise ValueError("mass must be in (0, 1]")
    k = int(math.ceil(mass * s.size))
    if k >= s.size:
        return float(s[0]), float(s[-1])
    widths = s[k - 1:] - s[:s.size - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


SUMMARY_HEADER = ("param", "rhat", "ess_bulk", "mean", "sd",
                  "hpd50_lo", "hpd50_hi", "hpd95_lo", "hpd95_hi")


def summary_rows(chains, params=None):
    """Per-parameter diagnostics over the pooled post-warmup draws."""
    names = list(params) if params is not None else list(chains.names)
    rows = []
    for name in names:
        mat = chains.matrix(name)
        pooled = mat.ravel()
        h50 = hpd(pooled, 0.50)
        h95 = hpd(pooled, 0.95)
        rows.append({
            "param": name,
            "rhat": split_rhat(chains, name),
            "ess_bulk": ess(chains, name),
            "mean": float(pooled.mean()),
            "sd": float(pooled.std(ddof=1)),
            "hpd50_lo": h50[0], "hpd50_hi": h50[1],
            "hpd95_lo": h95[0], "hpd95_hi": h95[1],
        })
    return rows


def write_summary_csv(path, chains, params=None):
    rows = summary_rows(chains, params)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for r in rows:
            writer.writerow([r["param"]]
                            + [fmt_float(r[k]) for k in SUMMARY_HEADER[1:]])
    return rows


def _trace_density_figure(name, per_chain):
    fig = _svg.Figure(760, 280)
    lo = min(float(c.min()) for c in per_chain)
    hi = max(float(c.max()) for c in per_chain)
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    ylim = (lo - pad, hi + pad)
    n = max(c.size for c in per_chain)

    trace = _svg.Panel(fig, 60, 30, 360, 200, (0, n), ylim,
                       title="%s trace" % name, xlabel="iteration")
    trace.frame()
    for i, c in enumerate(per_chain):
        color = _svg.PALETTE[i % len(_svg.PALETTE)]
        idx = np.arange(c.size)
        if c.size > 1200:
            keep = np.linspace(0, c.size - 1, 1200).astype(int)
            idx, c = idx[keep], c[keep]
        trace.polyline(idx, c, color, width=0.8, opacity=0.85)

    dens_panels = []
    for c in per_chain:
        dens_panels.append(_svg.kde(c))
    ymax = 1.0
    finite = [d for d in dens_panels if d is not None]
    if finite:
        ymax = max(float(d[1].max()) for d in finite)
    dens = _svg.Panel(fig, 500, 30, 220, 200, ylim, (0, 1.1 * ymax),
                      title="%s density" % name, xlabel="value")
    dens.frame()
    for i, d in enumerate(dens_panels):
        color = _svg.PALETTE[i % len(_svg.PALETTE)]
        if d is None:
            dens.vline(float(per_chain[i][0]), color, width=1.5)
        else:
            dens.polyline(d[0], d[1], color, width=1.2, opacity=0.9)
    return fig


def trace_density_export(chains, out_dir, params=None):
    """One SVG per parameter: trace and density panels, chains overlaid."""
    import os
    names = list(params) if params is not None else list(chains.names)
    paths = []
    for name in names:
        mat = chains.matrix(name)
        fig = _trace_density_figure(name, [mat[i] for i in range(mat.shape[0])])
        path = os.path.join(out_dir, "trace_%s.svg" % _svg.safe_name(name))
        fig.write(path)
        paths.append(path)
    return paths
