import csv
import math

import numpy as np
import pytest

from psweave import assess
from psweave.assess import (FitAssessment, VariableAssessment, assess_fit,
                            gpd_fit, pointwise_loglik, ppc_replicate, psis_loo,
                            simulate_outcomes, waic, write_assessment_csv)
from psweave.data import PatientRecord
from psweave.model import (ModelSpec, build_model, family_lpdf,
                           hurdle_logit_prob)
from psweave.sampler import Chains
from psweave.synth import default_truth, generate


def _rec(rid, **kw):
    base = dict(arm=1, e_pfs=1.0, e_pps=2.0, c_drug=100.0, c_hos=50.0,
                c_ae=10.0, covariates=())
    base.update(kw)
    return PatientRecord(id=rid, **base)


def _chains(m, rows):
    rows = np.asarray(rows, dtype=float)
    return Chains(names=tuple(m.param_names), constrained=(rows,),
                  unconstrained=None,
                  divergent=(np.zeros(rows.shape[0], dtype=bool),),
                  energy=(np.zeros(rows.shape[0]),), accept_stat=None,
                  step_size=None, metric=None, warmup=0)


def _xrow(m, **vals):
    x = np.zeros(m.dim)
    for name in ("sigma_pfs", "sigma_drug", "sigma_hos", "sigma_ae"):
        x[m.name_index(name)] = 1.0
    for name, v in vals.items():
        x[m.name_index(name)] = v
    return x


def _truth_row(m, truth):
    x = np.zeros(m.dim)
    for i in range(m.n_params):
        x[i] = truth[m.param_names[i]]
    return x


# -- pointwise log likelihood -------------------------------------------------


def test_zero_branch_is_log_pi():
    recs = [_rec("a", c_drug=0.0), _rec("b", c_drug=80.0)]
    m = build_model(ModelSpec.original(), recs)
    x = _xrow(m, delta_drug_0=math.log(0.25 / 0.75))
    ll = pointwise_loglik(m, _chains(m, [x]), "c_drug")
    assert ll.ids == ("a", "b")
    assert ll.values[0, 0] == pytest.approx(math.log(0.25), abs=1e-12)


def test_e_pfs_entry_is_family_lpdf():
    recs = [_rec("a", e_pfs=1.7)]
    m = build_model(ModelSpec.original(), recs)
    x = _xrow(m, alpha_pfs_0=0.9, sigma_pfs=0.4)
    ll = pointwise_loglik(m, _chains(m, [x]), "e_pfs")
    expect = family_lpdf("gumbel", 1.7, 0.9, 0.4)
    assert ll.values[0, 0] == pytest.approx(expect, abs=1e-12)


def test_tiny_case_matches_scalar_oracle():
    recs = [_rec("a", c_drug=0.0), _rec("b", c_drug=120.0),
            _rec("c", c_drug=300.0, e_pfs=0.5, e_pps=4.0)]
    m = build_model(ModelSpec.original(), recs)
    x1 = _xrow(m, delta_drug_0=-0.3, delta_drug_1=0.2, delta_drug_2=-0.1,
               beta_drug_0=4.0, beta_drug_1=0.3, beta_drug_2=0.1,
               sigma_drug=0.7)
    x2 = _xrow(m, delta_drug_0=0.4, delta_drug_1=-0.5, delta_drug_2=0.25,
               beta_drug_0=5.0, beta_drug_1=-0.2, beta_drug_2=0.05,
               sigma_drug=1.3)
    ll = pointwise_loglik(m, _chains(m, [x1, x2]), "c_drug")
    assert ll.values.shape == (2, 3)
    for s, x in enumerate((x1, x2)):
        d0 = x[m.name_index("delta_drug_0")]
        d = [x[m.name_index("delta_drug_1")], x[m.name_index("delta_drug_2")]]
        b0 = x[m.name_index("beta_drug_0")]
        b = [x[m.name_index("beta_drug_1")], x[m.name_index("beta_drug_2")]]
        sd = x[m.name_index("sigma_drug")]
        for u, r in enumerate(recs):
            regs = [r.e_pfs, r.e_pps]
            pi = hurdle_logit_prob([d0] + d, [1.0] + regs)
            if r.c_drug == 0.0:
                expect = math.log(pi)
            else:
                pred = b0 + b[0] * regs[0] + b[1] * regs[1]
                expect = math.log1p(-pi) + family_lpdf("lognormal", r.c_drug,
                                                       pred, sd)
            assert ll.values[s, u] == pytest.approx(expect, abs=1e-12)


def test_missing_upstream_uses_draw_latents():
    recs = [_rec("a", e_pfs=None, e_pps=float("nan"), c_drug=None,
                 c_hos=200.0)]
    m = build_model(ModelSpec.original(), recs)
    x = _xrow(m, delta_hos_0=-0.6, delta_hos_1=0.3, delta_hos_2=-0.2,
              delta_hos_3=0.1, beta_hos_0=4.5, beta_hos_1=0.2,
              beta_hos_2=0.05, beta_hos_3=-0.1, sigma_hos=0.8)
    z, y_pps, y_drug = 1.4, 0.9, 4.2
    x[m.name_index("z_pfs[a]")] = z
    x[m.name_index("y_pps[a]")] = y_pps
    x[m.name_index("y_drug[a]")] = y_drug
    ll = pointwise_loglik(m, _chains(m, [x]), "c_hos")
    regs = [z, math.exp(y_pps), y_drug]
    pi = hurdle_logit_prob([-0.6, 0.3, -0.2, 0.1], [1.0] + regs)
    pred = 4.5 + 0.2 * regs[0] + 0.05 * regs[1] - 0.1 * regs[2]
    expect = math.log1p(-pi) + family_lpdf("lognormal", 200.0, pred, 0.8)
    assert ll.values[0, 0] == pytest.approx(expect, abs=1e-12)


def test_missing_cells_contribute_no_units():
    recs = [_rec("a"), _rec("b", c_drug=None), _rec("c", c_drug=np.nan),
            _rec("d", c_drug=55.0)]
    m = build_model(ModelSpec.original(), recs)
    ll = pointwise_loglik(m, _chains(m, [_xrow(m)]), "c_drug")
    assert ll.ids == ("a", "d")
    assert ll.values.shape == (1, 2)


def test_pointwise_rejects_unknown_variable_and_mismatched_draws():
    recs = [_rec("a")]
    m = build_model(ModelSpec.original(), recs)
    ch = _chains(m, [_xrow(m)])
    with pytest.raises(ValueError):
        pointwise_loglik(m, ch, "qaly")
    m2 = build_model(ModelSpec.alternative(), recs)
    with pytest.raises(ValueError):
        pointwise_loglik(m2, ch, "c_drug")


# -- waic ----------------------------------------------------------------------


def test_waic_constant_matrix():
    c = -1.37
    w, p_d = waic(np.full((50, 7), c))
    assert p_d == pytest.approx(0.0, abs=1e-20)
    assert w == pytest.approx(-2.0 * 7 * c, abs=1e-12)


def test_waic_matches_brute_force():
    rng = np.random.default_rng(3)
    ll = rng.normal(-1.0, 0.6, size=(100, 10))
    w, p_d = waic(ll)

    lppd = 0.0
    pd2 = 0.0
    S = ll.shape[0]
    for i in range(ll.shape[1]):
        col = [float(v) for v in ll[:, i]]
        lppd += math.log(sum(math.exp(v) for v in col) / S)
        mean = sum(col) / S
        pd2 += sum((v - mean) ** 2 for v in col) / (S - 1)
    assert w == pytest.approx(-2.0 * (lppd - pd2), abs=1e-10)
    assert p_d == pytest.approx(pd2, abs=1e-10)


def test_waic_log_sum_exp_shift_invariance():
    rng = np.random.default_rng(4)
    ll = rng.normal(0.0, 1.0, size=(60, 5))
    shift = 700.0
    w0, p0 = waic(ll)
    w1, p1 = waic(ll + shift)
    assert np.isfinite(w1)
    assert p1 == pytest.approx(p0, abs=1e-9)
    assert w1 == pytest.approx(w0 - 2.0 * ll.shape[1] * shift, rel=1e-12)


def test_waic_needs_two_draws():
    with pytest.raises(ValueError):
        waic(np.zeros((1, 4)))


# -- psis loo -------------------------------------------------------------------


def test_psis_identical_draws_reduce_to_lppd():
    col = np.array([-0.5, -1.5, -2.5])
    ll = np.tile(col, (40, 1))
    looic, p_d, khats = psis_loo(ll)
    assert looic == pytest.approx(-2.0 * float(col.sum()), abs=1e-12)
    assert p_d == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isnan(khats))


def test_psis_close_to_waic_when_well_behaved():
    rng = np.random.default_rng(8)
    theta = rng.normal(0.0, 0.1, 2000)
    y = rng.normal(0.0, 1.0, 40)
    ll = -0.5 * math.log(2 * math.pi) - 0.5 * (y[None, :] - theta[:, None]) ** 2
    w, _ = waic(ll)
    looic, p_d, khats = psis_loo(ll)
    assert np.nanmax(khats) < 0.7
    assert abs(looic - w) < 0.1
    assert p_d > 0.0


def test_psis_khat_recovers_tail_shape():
    # log weights ~ Exp(mean k) gives importance weights with a GPD(k) tail
    rng = np.random.default_rng(11)
    S = 4000
    lw = rng.exponential(0.3, S)
    _, _, khats = psis_loo((-lw).reshape(-1, 1))
    assert abs(float(khats[0]) - 0.3) < 0.15

    lw0 = np.log(rng.exponential(1.0, S))
    _, _, khats0 = psis_loo((-lw0).reshape(-1, 1))
    assert abs(float(khats0[0])) < 0.15


def test_psis_needs_25_draws():
    with pytest.raises(ValueError):
        psis_loo(np.zeros((24, 3)))


def test_flag_counts_nan_and_large_khat():
    row = VariableAssessment(variable="c_drug", family="lognormal", n_units=4,
                             waic=0.0, waic_p_d=0.0, looic=0.0, loo_p_d=0.0,
                             khats=np.array([0.2, 0.71, math.nan, 0.69]),
                             ids=("a", "b", "c", "d"))
    assert row.n_flagged == 2


# -- generalized pareto fit ------------------------------------------------------


def test_gpd_fit_recovers_shape_and_scale():
    rng = np.random.default_rng(5)
    u = rng.random(2000)
    x = (1.0 / 0.5) * ((1.0 - u) ** -0.5 - 1.0)   # k=0.5, sigma=1 by inversion
    k, sigma = gpd_fit(x)
    assert 0.35 < k < 0.65
    assert 0.75 < sigma < 1.3


def test_gpd_fit_exponential_gives_small_k():
    rng = np.random.default_rng(6)
    k, sigma = gpd_fit(rng.exponential(1.0, 4000))
    assert abs(k) < 0.1
    assert sigma == pytest.approx(1.0, abs=0.1)


def test_gpd_fit_validation():
    with pytest.raises(ValueError):
        gpd_fit([1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        gpd_fit([1.0, 1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        gpd_fit([1.0, 2.0, 3.0, 4.0, -1.0])


# -- per-variable assessment and csv ---------------------------------------------


def _fitted_like(seed=0, n=30):
    truth = default_truth()
    d = generate(truth, n, seed=7)
    m = build_model(ModelSpec.original(), d, arm=1)
    rng = np.random.default_rng(seed)
    base = m.constrain(m.initial_point())
    rows = np.tile(base, (60, 1)) + 0.01 * rng.standard_normal((60, m.dim))
    iv = m.layout.interval_idx
    rows[:, iv] = np.abs(rows[:, iv]) + 0.5
    return m, _chains(m, rows)


def test_assess_fit_totals_are_sums(tmp_path):
    m, ch = _fitted_like()
    fa = assess_fit(m, ch)
    assert [r.variable for r in fa.rows] == ["e_pfs", "e_pps", "c_drug",
                                             "c_hos", "c_ae"]
    assert fa.rows[0].family == "gumbel"
    assert fa.rows[2].family == "lognormal"
    assert fa.total_waic == pytest.approx(sum(r.waic for r in fa.rows))
    assert fa.total_looic == pytest.approx(sum(r.looic for r in fa.rows))

    path = tmp_path / "table.csv"
    write_assessment_csv(path, fa)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(assess.ASSESSMENT_HEADER)
    assert len(rows) == 7
    assert rows[-1][0] == "total"
    assert float(rows[-1][3]) == pytest.approx(
        sum(float(r[3]) for r in rows[1:-1]), rel=1e-12)

    write_assessment_csv(tmp_path / "again.csv", fa)
    assert (tmp_path / "table.csv").read_bytes() == \
        (tmp_path / "again.csv").read_bytes()


def test_waic_p_d_nonnegative_on_fitted_draws():
    m, ch = _fitted_like()
    for r in assess_fit(m, ch).rows:
        assert r.waic_p_d >= 0.0
        assert r.loo_p_d >= -1e-8


# -- posterior predictive replication ---------------------------------------------


def test_ppc_zero_fraction_concentrates_on_fitted_pi():
    recs = [_rec("r%d" % i, e_pfs=0.8, e_pps=1.5, c_drug=60.0) for i in range(150)]
    m = build_model(ModelSpec.original(), recs)
    pi = 0.3
    x = _xrow(m, gamma_pps_0=-2.0, delta_drug_0=math.log(pi / (1 - pi)),
              beta_drug_0=4.0, alpha_pps_0=0.5)
    ch = _chains(m, np.tile(x, (30, 1)))
    summ = ppc_replicate(m, ch, n_rep=150, seed=2)
    got = float(summ["c_drug"].replicate_zero_fractions.mean())
    se = math.sqrt(pi * (1 - pi) / (150 * 150))
    assert abs(got - pi) < 4 * se


def test_ppc_replicates_respect_hurdle_support():
    recs = [_rec("r%d" % i) for i in range(80)]
    m = build_model(ModelSpec.original(), recs)
    x = _xrow(m, gamma_pps_0=math.log(0.2 / 0.8), alpha_pps_0=0.6,
              delta_drug_0=-1.0, beta_drug_0=4.0,
              delta_hos_0=-1.0, beta_hos_0=4.0,
              delta_ae_0=-1.0, beta_ae_0=3.0)
    ch = _chains(m, np.tile(x, (30, 1)))
    summ = ppc_replicate(m, ch, n_rep=60, seed=3)
    s = summ["e_pps"]
    assert np.all(s.replicate_min >= 0.0)
    assert s.replicate_zero_fractions.mean() > 0.05
    assert s.replicate_zero_fractions.mean() < 0.95


def test_ppc_self_consistency_and_determinism():
    truth = default_truth()
    d = generate(truth, 120, seed=17)
    m = build_model(ModelSpec.original(), d, arm=1)
    ch = _chains(m, np.tile(_truth_row(m, truth[1]), (40, 1)))
    summ = ppc_replicate(m, ch, n_rep=400, seed=5)
    for var in ("e_pfs", "c_drug"):
        s = summ[var]
        lo, hi = np.quantile(s.replicate_means, [0.005, 0.995])
        assert lo < s.observed_mean < hi

    again = ppc_replicate(m, ch, n_rep=400, seed=5)
    assert np.array_equal(summ["c_hos"].replicate_means,
                          again["c_hos"].replicate_means)


def test_ppc_writes_svg_overlays(tmp_path):
    m, ch = _fitted_like()
    ppc_replicate(m, ch, n_rep=20, seed=1, out_dir=tmp_path)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len(files) == 15
    assert "ppc_density_c_drug.svg" in files
    assert "ppc_ecdf_e_pfs.svg" in files
    assert "ppc_means_c_ae.svg" in files
    text = (tmp_path / "ppc_density_c_drug.svg").read_text()
    assert "<svg" in text


def test_simulate_outcomes_row_count_override():
    recs = [_rec("a"), _rec("b")]
    m = build_model(ModelSpec.original(), recs)
    x = _xrow(m, beta_drug_0=4.0, beta_hos_0=4.0, beta_ae_0=3.0,
              alpha_pps_0=0.5)
    rng = np.random.default_rng(0)
    sim = simulate_outcomes(m, x, rng, n_rows=25, covariates=None)
    assert all(sim[v].shape == (25,) for v in sim)


def test_ppc_rejects_zero_replicates():
    m, ch = _fitted_like()
    with pytest.raises(ValueError):
        ppc_replicate(m, ch, n_rep=0)
