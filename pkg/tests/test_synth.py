import math

import numpy as np
import pytest
from scipy import stats

from psweave import synth
from psweave.data import OUTCOME_VARS, load_trial_csv, save_trial_csv
from psweave.model import ModelSpec

# 1% two-sided Kolmogorov-Smirnov critical constant: D_crit = 1.628 / sqrt(n)
KS_CONST_1PCT = 1.628


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_pi_one_gives_all_zero_pps():
    truth = synth.default_truth()
    for arm in (1, 2):
        truth[arm] = dict(truth[arm], gamma_pps_0=200.0, gamma_pps_1=0.0)
    d = synth.generate(truth, 300, seed=1)
    for arm in (1, 2):
        assert np.all(d.arm_values(arm, "e_pps") == 0.0)


def test_zero_proportion_matches_binomial_oracle():
    truth = synth.default_truth()
    d = synth.generate(truth, 10000, seed=5)
    for arm in (1, 2):
        g0 = truth[arm]["gamma_pps_0"]
        g1 = truth[arm]["gamma_pps_1"]
        pfs = d.arm_values(arm, "e_pfs")
        pi = _expit(g0 + g1 * pfs)
        expected = pi.mean()
        se = math.sqrt(float(np.sum(pi * (1 - pi)))) / pi.size
        realized = float(np.mean(d.arm_values(arm, "e_pps") == 0.0))
        assert abs(realized - expected) < 3 * se


def test_pfs_mean_matches_truth():
    truth = synth.default_truth()
    d = synth.generate(truth, 10000, seed=5)
    for arm in (1, 2):
        pfs = d.arm_values(arm, "e_pfs")
        se = truth[arm]["sigma_pfs"] / math.sqrt(pfs.size)
        assert abs(pfs.mean() - truth[arm]["alpha_pfs_0"]) < 3 * se


def test_generate_deterministic_per_seed():
    truth = synth.default_truth()
    a = synth.generate(truth, 50, seed=9)
    b = synth.generate(truth, 50, seed=9)
    assert a.records == b.records
    c = synth.generate(truth, 50, seed=10)
    assert a.records != c.records


def test_generated_data_roundtrips_through_csv(tmp_path):
    d = synth.generate(synth.default_truth(), 40, seed=3)
    path = tmp_path / "trial.csv"
    save_trial_csv(d, path)
    back = load_trial_csv(path)
    assert back.records == d.records


def _pit_values(d, spec, truth_by_arm):
    """Probability integral transform of every observed stage value."""
    from psweave.model import STAGE_REGRESSORS, _SHORT, log_or_zero

    out = {stage: [] for stage in
           ("e_pfs", "e_pps", "c_drug", "c_hos", "c_ae")}
    for r in d.records:
        truth = truth_by_arm[r.arm]
        # location family for e_pfs
        sd = truth["sigma_pfs"]
        mean = truth["alpha_pfs_0"]
        fam = spec.family_e_pfs
        if fam == "gumbel":
            b = sd * math.sqrt(6.0) / math.pi
            u = stats.gumbel_r.cdf(r.e_pfs, loc=mean - b * 0.5772156649015329,
                                   scale=b)
        elif fam == "logistic":
            s = sd * math.sqrt(3.0) / math.pi
            u = stats.logistic.cdf(r.e_pfs, loc=mean, scale=s)
        else:
            u = stats.norm.cdf(r.e_pfs, loc=mean, scale=sd)
        out["e_pfs"].append(u)
        values = {"e_pfs": r.e_pfs, "e_pps": r.e_pps, "c_drug": r.c_drug,
                  "c_hos": r.c_hos, "c_ae": r.c_ae}
        for stage in ("e_pps", "c_drug", "c_hos", "c_ae"):
            v = values[stage]
            if v == 0.0:
                continue
            s_short = _SHORT[stage]
            mname = "alpha" if stage == "e_pps" else "beta"
            xs = [1.0]
            for reg in STAGE_REGRESSORS[stage]:
                if reg.startswith("log_"):
                    xs.append(float(log_or_zero(values[reg[4:]])))
                else:
                    xs.append(values[reg])
            nreg = len(xs)
            pred = sum(truth["%s_%s_%d" % (mname, s_short, j)] * xs[j]
                       for j in range(nreg))
            fam = spec.stage_family(stage)
            anc_name = spec.stage_ancillary(stage)
            anc = truth["%s_%s" % (anc_name, s_short)] if anc_name else None
            if fam == "exponential":
                u = stats.expon.cdf(v, scale=math.exp(pred))
            elif fam == "weibull":
                lam = math.exp(pred) / math.gamma(1.0 + 1.0 / anc)
                u = 1.0 - math.exp(-((v / lam) ** anc))
            elif fam == "lognormal":
                u = stats.norm.cdf((math.log(v) - pred) / anc)
            elif fam == "gamma":
                shape = (math.exp(pred) / anc) ** 2
                u = stats.gamma.cdf(v, a=shape, scale=math.exp(pred) / shape)
            else:
                u = stats.norm.cdf(v, loc=pred, scale=anc)
            out[stage].append(u)
    return out


@pytest.mark.parametrize("spec_name", ["original", "alternative", "normal"])
def test_generative_families_pass_ks_at_1pct(spec_name):
    # PIT of each conditional draw against its own CDF must look uniform;
    # covers gumbel/logistic/normal survival, exponential/weibull/normal
    # post-progression, lognormal/gamma costs across the three specs
    if spec_name == "original":
        spec = ModelSpec.original()
    elif spec_name == "alternative":
        spec = ModelSpec.alternative()
    else:
        spec = ModelSpec(family_e_pfs="normal", family_e_pps="normal",
                         family_costs="lognormal")
    truth = synth.default_truth()
    if spec.stage_ancillary("e_pps") == "shape":
        for arm in (1, 2):
            truth[arm] = dict(truth[arm], shape_pps=1.4)
    elif spec.stage_ancillary("e_pps") == "sigma":
        for arm in (1, 2):
            truth[arm] = dict(truth[arm], sigma_pps=0.1,
                              alpha_pps_0=0.4, alpha_pps_1=0.1)
    d = synth.generate(truth, 5000, seed=21, spec=spec)
    pit = _pit_values(d, spec, truth)
    for stage, us in pit.items():
        us = np.asarray(us)
        assert us.size > 2000
        dstat = stats.kstest(us, "uniform").statistic
        assert dstat < KS_CONST_1PCT / math.sqrt(us.size), stage


def test_amputate_rate_zero_unchanged():
    d = synth.generate(synth.default_truth(), 30, seed=2)
    out, realized = synth.amputate(d, {"e_pfs": 0.0}, seed=4)
    assert out.records == d.records
    assert realized == {}


def test_amputate_hits_requested_rate():
    d = synth.generate(synth.default_truth(), 1000, seed=2)
    out, realized = synth.amputate(d, {"e_pfs": 0.2}, seed=4)
    n = len(d.records)
    se = math.sqrt(0.2 * 0.8 / n)
    assert abs(realized["e_pfs"]["overall"] - 0.2) < 3 * se
    miss = sum(1 for r in out.records if math.isnan(r.e_pfs))
    assert miss / n == pytest.approx(realized["e_pfs"]["overall"])


def test_amputate_arm_dependence_shifts_rates():
    d = synth.generate(synth.default_truth(), 1500, seed=2)
    out, realized = synth.amputate(d, {"c_drug": 0.25},
                                   depend={"c_drug": {"arm": 2.0}}, seed=6)
    r = realized["c_drug"]
    assert r["arm2"] > r["arm1"] + 0.1
    assert abs(r["overall"] - 0.25) < 0.04


def test_amputate_deterministic_and_validated():
    d = synth.generate(synth.default_truth(), 60, seed=2)
    a, _ = synth.amputate(d, {"e_pps": 0.3, "c_hos": 0.1}, seed=5)
    b, _ = synth.amputate(d, {"e_pps": 0.3, "c_hos": 0.1}, seed=5)
    assert a.records == b.records
    with pytest.raises(ValueError):
        synth.amputate(d, {"e_pfs": 1.0})
    with pytest.raises(ValueError):
        synth.amputate(d, {"nope": 0.1})


def test_truth_config_contents():
    truth = synth.default_truth()
    cfg = synth.truth_config(truth, seed=11, n_by_arm=150)
    assert cfg["families"]["family_e_pfs"] == "gumbel"
    assert cfg["truth"]["1"]["alpha_pfs_0"] == 0.30
    assert cfg["truth"]["2"]["beta_drug_0"] == 8.6
    assert cfg["seed"] == 11
    assert cfg["n_per_arm"] == {"1": 150, "2": 150}
