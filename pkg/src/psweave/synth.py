"""Synthetic trial generation from known parameters, plus MAR amputation.

generate() draws records arm by arm through the same stage structure the
model fits: a location-family progression-free survival time, then each
hurdle stage in order, with downstream predictors fed the raw survival
times and log-or-zero upstream costs. Continuous draws use inverse-CDF
sampling where a closed form exists (Gumbel, Exponential, Weibull,
Lognormal via exp of a normal), so a fixed seed pins the dataset exactly.

amputate() blanks cells with probability driven only by always-observed
fields (arm, covariates): missing-at-random by construction. Requested
rates are hit on average by calibrating the logit intercept against the
configured dependence offsets.
"""

import math

import numpy as np

from ._util import STREAM_AMPUTATE, STREAM_SYNTH, rng_stream
from .data import OUTCOME_VARS, PatientRecord, is_missing, make_dataset
from .families import EULER
from .model import (HURDLE_STAGES, STAGE_REGRESSORS, ModelSpec, _SHORT,
                    log_or_zero, to_dict)

__all__ = ["generate", "amputate", "default_truth", "truth_config"]


def _sample_location(family, mean, sd, rng):
    """One draw from a location family parameterized by mean and sd."""
    u = rng.random()
    if family == "gumbel":
        b = sd * math.sqrt(6.0) / math.pi
        a = mean - b * EULER
        return a - b * math.log(-math.log(u))
    if family == "logistic":
        s = sd * math.sqrt(3.0) / math.pi
        return mean + s * math.log(u / (1.0 - u))
    if family == "normal":
        return mean + sd * rng.standard_normal()
    raise ValueError("unknown location family %r" % family)


def _sample_positive(family, pred, anc, rng):
    """One positive-branch draw; pred is the linear predictor."""
    if family == "exponential":
        return -math.exp(pred) * math.log(rng.random())
    if family == "weibull":
        lam = math.exp(pred) / math.gamma(1.0 + 1.0 / anc)
        return lam * (-math.log(rng.random())) ** (1.0 / anc)
    if family == "lognormal":
        return math.exp(pred + anc * rng.standard_normal())
    if family == "gamma":
        mean = math.exp(pred)
        shape = (mean / anc) ** 2
        return float(rng.gamma(shape, mean / shape))
    if family == "normal":
        return pred + anc * rng.standard_normal()
    raise ValueError("unknown positive family %r" % family)


def _coefs(truth, prefix, count):
    return [float(truth["%s_%d" % (prefix, j)]) for j in range(count)]


def _regressors(values, stage):
    out = [1.0]
    for name in STAGE_REGRESSORS[stage]:
        if name.startswith("log_"):
            out.append(float(log_or_zero(values[name[4:]])))
        else:
            out.append(float(values[name]))
    return out


def _dot(coefs, xs):
    return sum(c * x for c, x in zip(coefs, xs))


def generate(truth_by_arm, n_by_arm, seed, spec=None):
    """Two-arm TrialDataset drawn from per-arm truth parameter dicts.

    truth_by_arm maps arm (1, 2) to a dict keyed by model parameter names
    (alpha_pfs_0, sigma_pfs, gamma_pps_0, ..., beta_ae_4, sigma_ae).
    n_by_arm is an int (both arms) or a {arm: n} mapping.
    """
    spec = spec if spec is not None else ModelSpec.original()
    if isinstance(n_by_arm, int):
        n_by_arm = {1: n_by_arm, 2: n_by_arm}
    records = []
    for arm in (1, 2):
        truth = truth_by_arm[arm]
        rng = rng_stream(seed, STREAM_SYNTH, arm)
        for i in range(int(n_by_arm[arm])):
            values = {}
            values["e_pfs"] = _sample_location(
                spec.family_e_pfs, float(truth["alpha_pfs_0"]),
                float(truth["sigma_pfs"]), rng)
            for stage in HURDLE_STAGES:
                s = _SHORT[stage]
                nreg = len(STAGE_REGRESSORS[stage]) + 1
                gname = "gamma" if stage == "e_pps" else "delta"
                mname = "alpha" if stage == "e_pps" else "beta"
                xs = _regressors(values, stage)
                logit = _dot(_coefs(truth, "%s_%s" % (gname, s), nreg), xs)
                p_zero = 1.0 / (1.0 + math.exp(-logit))
                if rng.random() < p_zero:
                    values[stage] = 0.0
                    continue
                pred = _dot(_coefs(truth, "%s_%s" % (mname, s), nreg), xs)
                fam = spec.stage_family(stage)
                anc_name = spec.stage_ancillary(stage)
                anc = float(truth["%s_%s" % (anc_name, s)]) if anc_name else None
                values[stage] = _sample_positive(fam, pred, anc, rng)
            records.append(PatientRecord(
                id="a%d-%04d" % (arm, i), arm=arm,
                e_pfs=values["e_pfs"], e_pps=values["e_pps"],
                c_drug=values["c_drug"], c_hos=values["c_hos"],
                c_ae=values["c_ae"]))
    return make_dataset(records)


def _field_offset(record, key):
    if key == "arm":
        return -0.5 if record.arm == 1 else 0.5
    if key.startswith("x"):
        return float(record.covariates[int(key[1:]) - 1])
    raise ValueError("dependence key %r is not an always-observed field" % key)


def _calibrate_intercept(offsets, rate):
    """Intercept a with mean(expit(a + offsets)) = rate, by bisection."""
    offsets = np.asarray(offsets, dtype=float)

    def mean_prob(a):
        return float(np.mean(1.0 / (1.0 + np.exp(-(a + offsets)))))

    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_prob(mid) < rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def amputate(d, rates, depend=None, seed=0):
    """Blank outcome cells at the requested MAR rates.

    rates: {variable: rate in [0, 1)}. depend: {variable: {field: coef}}
    where field is "arm" or a covariate name like "x1"; coefficients shift
    the missingness logit, and the intercept is calibrated so the average
    probability still matches the requested rate. Returns the amputated
    dataset and the realized per-variable missingness proportions
    (overall and per arm).
    """
    depend = depend or {}
    for var, rate in rates.items():
        if var not in OUTCOME_VARS:
            raise ValueError("unknown variable %r" % var)
        if not 0.0 <= rate < 1.0:
            raise ValueError("rate for %s must be in [0, 1)" % var)
    rng = rng_stream(seed, STREAM_AMPUTATE, 0)
    blanks = {r.id: set() for r in d.records}
    realized = {}
    for var in OUTCOME_VARS:
        rate = float(rates.get(var, 0.0))
        if rate == 0.0:
            continue
        coefs = depend.get(var, {})
        offsets = [sum(c * _field_offset(r, k) for k, c in sorted(coefs.items()))
                   for r in d.records]
        a = _calibrate_intercept(offsets, rate)
        hits = {1: 0, 2: 0}
        count = {1: 0, 2: 0}
        for r, off in zip(d.records, offsets):
            count[r.arm] += 1
            p = 1.0 / (1.0 + math.exp(-(a + off)))
            if rng.random() < p:
                blanks[r.id].add(var)
                hits[r.arm] += 1
        total = hits[1] + hits[2]
        realized[var] = {
            "overall": total / len(d.records),
            "arm1": hits[1] / count[1],
            "arm2": hits[2] / count[2],
        }
    out = []
    for r in d.records:
        gone = blanks[r.id]
        if not gone:
            out.append(r)
            continue
        fields = {v: (math.nan if v in gone else getattr(r, v))
                  for v in OUTCOME_VARS}
        out.append(PatientRecord(id=r.id, arm=r.arm, covariates=r.covariates,
                                 **fields))
    return make_dataset(out), realized


def default_truth():
    """Two-arm truth used by the bundled simulation studies.

    Arm 2 is the newer treatment: longer progression-free survival, near
    universal drug cost at a higher level. The gap gives a positive
    effectiveness increment at a plausible cost per unit.
    """
    arm1 = {
        "alpha_pfs_0": 0.30, "sigma_pfs": 0.18,
        "gamma_pps_0": 0.1, "gamma_pps_1": -1.2,
        "alpha_pps_0": -1.5, "alpha_pps_1": 0.8,
        "delta_drug_0": 0.4, "delta_drug_1": -0.5, "delta_drug_2": -0.6,
        "beta_drug_0": 5.5, "beta_drug_1": 0.6, "beta_drug_2": 0.5,
        "sigma_drug": 0.8,
        "delta_hos_0": -1.0, "delta_hos_1": -0.3, "delta_hos_2": -0.4,
        "delta_hos_3": -0.05,
        "beta_hos_0": 6.5, "beta_hos_1": 0.4, "beta_hos_2": 0.3,
        "beta_hos_3": 0.05,
        "sigma_hos": 0.7,
        "delta_ae_0": -1.4, "delta_ae_1": -0.2, "delta_ae_2": -0.3,
        "delta_ae_3": -0.03, "delta_ae_4": -0.04,
        "beta_ae_0": 4.5, "beta_ae_1": 0.3, "beta_ae_2": 0.2,
        "beta_ae_3": 0.04, "beta_ae_4": 0.05,
        "sigma_ae": 0.9,
    }
    arm2 = dict(arm1)
    arm2["alpha_pfs_0"] = 0.45
    arm2["delta_drug_0"] = -3.5
    arm2["beta_drug_0"] = 8.6
    return {1: arm1, 2: arm2}


def truth_config(truth_by_arm, spec=None, seed=None, n_by_arm=None):
    """JSON-ready record of how a synthetic dataset was produced."""
    spec = spec if spec is not None else ModelSpec.original()
    cfg = {
        "families": to_dict(spec),
        "truth": {str(arm): dict(truth_by_arm[arm]) for arm in (1, 2)},
    }
    if seed is not None:
        cfg["seed"] = int(seed)
    if n_by_arm is not None:
        if isinstance(n_by_arm, int):
            n_by_arm = {1: n_by_arm, 2: n_by_arm}
        cfg["n_per_arm"] = {str(a): int(n) for a, n in n_by_arm.items()}
    return cfg
