import math

import numpy as np
import pytest

from psweave import diagnostics as dg
from psweave import sampler


def _chains_from(rows):
    rows = np.asarray(rows, dtype=float)
    return sampler.Chains(
        names=("x",),
        constrained=tuple(r.reshape(-1, 1) for r in rows),
        unconstrained=None,
        divergent=tuple(np.zeros(r.size, dtype=bool) for r in rows),
        energy=tuple(np.zeros(r.size) for r in rows),
        accept_stat=None, step_size=None, metric=None, warmup=0,
    )


# -- split R-hat ------------------------------------------------------------------


def test_rhat_same_distribution_near_one():
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((2, 2000))
    r = dg.split_rhat(rows)
    assert 1.0 <= r <= 1.01


def test_rhat_separated_chains_large():
    rng = np.random.default_rng(1)
    rows = np.stack([rng.standard_normal(500), rng.standard_normal(500) + 10])
    r = dg.split_rhat(rows)
    assert r > 1.1
    # brute-force duplicate of the formula
    halves = []
    for row in rows:
        halves.append(row[:250])
        halves.append(row[250:])
    n = 250
    means = np.array([h.mean() for h in halves])
    w = float(np.mean([h.var(ddof=1) for h in halves]))
    b = n * float(means.var(ddof=1))
    expected = math.sqrt((w * (n - 1) / n + b / n) / w)
    assert abs(r - expected) < 1e-12


def test_rhat_identical_halves_near_one():
    rng = np.random.default_rng(2)
    half = rng.standard_normal(400)
    row = np.concatenate([half, half])
    r = dg.split_rhat(row.reshape(1, -1))
    assert abs(r - 1.0) < 0.01


def test_rhat_zero_variance_undefined():
    assert math.isnan(dg.split_rhat(np.ones((2, 100))))


def test_rhat_affine_invariant():
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((2, 500))
    assert abs(dg.split_rhat(rows) - dg.split_rhat(3.7 * rows - 11.0)) < 1e-12


def test_rhat_preconditions():
    with pytest.raises(ValueError):
        dg.split_rhat(np.ones((1, 6)))    # halves of length 3 are too short
    r = dg.split_rhat(np.random.default_rng(0).standard_normal((1, 8)))
    assert math.isfinite(r)


def test_rhat_works_on_chains_object():
    rng = np.random.default_rng(4)
    ch = _chains_from(rng.standard_normal((2, 800)))
    assert 0.99 < dg.split_rhat(ch, "x") < 1.02


# -- effective sample size ------------------------------------------------------------


def test_ess_independent_draws():
    rng = np.random.default_rng(42)
    rows = rng.standard_normal((2, 4000))
    e = dg.ess(rows)
    assert abs(e - rows.size) < 0.10 * rows.size


def _ar1(rho, n, m, seed):
    rng = np.random.default_rng(seed)
    out = np.empty((m, n))
    for i in range(m):
        eps = rng.standard_normal(n)
        x = np.empty(n)
        x[0] = eps[0] / math.sqrt(1 - rho * rho)
        for t in range(1, n):
            x[t] = rho * x[t - 1] + eps[t]
        out[i] = x
    return out


def test_ess_ar1_matches_analytic_factor():
    rows = _ar1(0.9, 8000, 2, seed=2)
    e = dg.ess(rows)
    target = rows.size * (1 - 0.9) / (1 + 0.9)
    assert abs(e - target) < 0.25 * target


def test_ess_antithetic_super_efficiency_reported():
    rng = np.random.default_rng(6)
    n = 2000
    base = np.tile([1.0, -1.0], n // 2)
    rows = np.stack([base + 0.01 * rng.standard_normal(n) for _ in range(2)])
    e = dg.ess(rows)
    assert e > rows.size    # reported as-is, no cap


def test_ess_zero_variance_undefined():
    assert math.isnan(dg.ess(np.full((2, 100), 3.5)))


def test_ess_affine_invariant():
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((2, 500))
    assert abs(dg.ess(rows) - dg.ess(3.7 * rows - 11.0)) < 1e-6


# -- HPD ----------------------------------------------------------------------


def test_hpd_integer_ramp():
    assert dg.hpd(np.arange(1.0, 101.0), 0.95) == (1.0, 95.0)


def test_hpd_mass_one_full_range():
    assert dg.hpd(np.arange(1.0, 101.0), 1.0) == (1.0, 100.0)


def test_hpd_symmetric_normal_close_to_equal_tailed():
    rng = np.random.default_rng(7)
    s = rng.standard_normal(20000)
    lo, hi = dg.hpd(s, 0.95)
    qlo, qhi = np.quantile(s, [0.025, 0.975])
    assert abs(lo - qlo) < 0.1
    assert abs(hi - qhi) < 0.1


def test_hpd_is_shortest_window():
    rng = np.random.default_rng(8)
    s = rng.gamma(2.0, 1.5, size=500)
    for mass in (0.5, 0.8, 0.95):
        lo, hi = dg.hpd(s, mass)
        srt = np.sort(s)
        k = math.ceil(mass * s.size)
        widths = srt[k - 1:] - srt[:s.size - k + 1]
        i = int(np.argmin(widths))
        assert lo == srt[i] and hi == srt[i + k - 1]
        inside = np.count_nonzero((s >= lo) & (s <= hi))
        assert inside >= k


def test_hpd_input_validation():
    with pytest.raises(ValueError):
        dg.hpd(np.arange(10.0), 0.9)        # too few samples
    with pytest.raises(ValueError):
        dg.hpd(np.arange(100.0), 0.0)
    with pytest.raises(ValueError):
        dg.hpd(np.arange(100.0), 1.2)


# -- summary table and plots ---------------------------------------------------------


def _small_chains():
    rng = np.random.default_rng(15)
    draws = rng.standard_normal((2, 300, 2)) * [1.0, 4.0] + [0.5, -2.0]
    return sampler.Chains(
        names=("alpha", "beta"),
        constrained=tuple(draws[i] for i in range(2)),
        unconstrained=None,
        divergent=tuple(np.zeros(300, dtype=bool) for _ in range(2)),
        energy=tuple(np.zeros(300) for _ in range(2)),
        accept_stat=None, step_size=None, metric=None, warmup=100,
    )


def test_summary_csv_layout(tmp_path):
    ch = _small_chains()
    path = tmp_path / "summary.csv"
    rows = dg.write_summary_csv(path, ch)
    lines = path.read_text().splitlines()
    assert lines[0] == "param,rhat,ess_bulk,mean,sd,hpd50_lo,hpd50_hi,hpd95_lo,hpd95_hi"
    assert len(lines) == 3
    assert lines[1].startswith("alpha,")
    assert lines[2].startswith("beta,")
    assert rows[0]["hpd95_lo"] < rows[0]["mean"] < rows[0]["hpd95_hi"]
    # deterministic re-emission
    first = path.read_bytes()
    dg.write_summary_csv(path, ch)
    assert path.read_bytes() == first


def test_trace_density_export(tmp_path):
    ch = _small_chains()
    paths = dg.trace_density_export(ch, tmp_path)
    assert len(paths) == 2
    for p in paths:
        body = open(p).read()
        assert body.startswith("<svg")
        assert body.count("<polyline") >= 4    # 2 chains x trace+density
        assert "#3366aa" in body and "#cc4444" in body
    again = dg.trace_density_export(ch, tmp_path)
    assert open(again[0]).read() == open(paths[0]).read()


def test_trace_density_constant_chain(tmp_path):
    ch = sampler.Chains(
        names=("c",),
        constrained=(np.full((50, 1), 2.0), np.full((50, 1), 2.0)),
        unconstrained=None,
        divergent=(np.zeros(50, dtype=bool),) * 2,
        energy=(np.zeros(50),) * 2,
        accept_stat=None, step_size=None, metric=None, warmup=0,
    )
    paths = dg.trace_density_export(ch, tmp_path)
    body = open(paths[0]).read()
    assert body.startswith("<svg")
    assert "<line" in body    # density collapses to a spike
