"""Ten go/no-go checks covering the whole package, one test per criterion.

Each test prints a single "criterion N ...: PASS/FAIL" line straight to the
terminal (bypassing pytest capture) so a full run reads as a checklist.
Tolerances are fixed here; oracles are independent reimplementations,
textbook formulas, or quadrature, never the code under test. The two long
criteria (parameter recovery, model selection) each run twenty replicate
fits and dominate the suite's runtime.
"""

import json
import math
import time

import numpy as np
from scipy import integrate
from scipy.special import expit

from psweave import cli
from psweave.assess import assess_fit, gpd_fit, waic
from psweave.data import PatientRecord, make_dataset
from psweave.diagnostics import ess, hpd, split_rhat
from psweave.econ import ceac, cep, marginal_means
from psweave.model import ModelSpec, build_model
from psweave.qas import UtilitySeries, auc_qaly, partition_qas, qas
from psweave.sampler import Chains, SamplerConfig, sample
from psweave.synth import amputate, default_truth, generate
from psweave._util import worker_count

EULER = 0.5772156649015329
NAN = float("nan")


def _report(capsys, num, label, ok, detail):
    line = "criterion %d (%s): %s [%s]" % (
        num, label, "PASS" if ok else "FAIL", detail)
    with capsys.disabled():
        print("\n" + line, flush=True)
    assert ok, line


# -- criterion 1: gradients against finite differences -------------------------------


def _gradient_dataset():
    """Tiny two-arm dataset mixing zeros, positives and missing cells."""
    rows = [
        ("g1", 1, 0.9, 1.4, 12.0, 8.0, 3.0),
        ("g2", 1, 1.6, 0.0, 0.0, 5.0, 0.0),
        ("g3", 1, 0.4, 2.2, 25.0, 0.0, 1.5),
        ("g4", 1, 1.1, NAN, 9.0, 4.0, NAN),
        ("g5", 1, NAN, 0.8, NAN, 6.0, 2.0),
        ("g6", 1, 2.0, 1.1, 14.0, 11.0, 0.0),
        ("g7", 2, 1.0, 1.0, 10.0, 5.0, 1.0),
        ("g8", 2, 0.7, 0.0, 8.0, 3.0, 0.5),
    ]
    recs = [PatientRecord(id=i, arm=a, e_pfs=e1, e_pps=e2,
                          c_drug=cd, c_hos=ch, c_ae=ca)
            for i, a, e1, e2, cd, ch, ca in rows]
    return make_dataset(recs)


def test_criterion_01_gradients_match_finite_differences(capsys):
    t0 = time.time()
    rng = np.random.default_rng(42)
    d = _gradient_dataset()
    h = 1e-5
    worst = 0.0
    n_combos = 0
    for pfs in ("gumbel", "logistic", "normal"):
        for pps in ("exponential", "weibull", "normal"):
            for cost in ("lognormal", "gamma"):
                spec = ModelSpec(family_e_pfs=pfs, family_e_pps=pps,
                                 family_costs=cost)
                m = build_model(spec, d, arm=1)
                base = m.initial_point()
                n_combos += 1
                for _ in range(100):
                    x = base + 0.35 * rng.standard_normal(m.dim)
                    _, grad = m.logp_grad(x)
                    for j in range(m.dim):
                        step = np.zeros(m.dim)
                        step[j] = h
                        fp = m.logp_grad(x + step)[0]
                        fm = m.logp_grad(x - step)[0]
                        fd = (fp - fm) / (2.0 * h)
                        rel = abs(grad[j] - fd) / max(1.0, abs(fd),
                                                      abs(grad[j]))
                        if rel > worst:
                            worst = rel
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 60.0
    _report(capsys, 1, "gradient correctness",
            ok, "%d combos, max rel err %.2e, %.1fs" % (n_combos, worst,
                                                        elapsed))


# -- criterion 2: quadrature marginalization oracle -----------------------------------


def test_criterion_02_latent_marginalization_quadrature(capsys):
    sd_prior = 100.0
    sd_upper = 10000.0
    spec = ModelSpec.original()
    recs = [
        PatientRecord(id="p1", arm=1, e_pfs=1.3, e_pps=NAN,
                      c_drug=420.0, c_hos=180.0, c_ae=40.0),
        PatientRecord(id="p2", arm=2, e_pfs=1.0, e_pps=1.0,
                      c_drug=10.0, c_hos=5.0, c_ae=1.0),
    ]
    m = build_model(spec, make_dataset(recs), arm=1)
    assert m.dim == m.n_params + 1

    theta = {
        "alpha_pfs_0": 0.4,
        "gamma_pps_0": -0.4, "gamma_pps_1": 0.3,
        "alpha_pps_0": -0.2, "alpha_pps_1": 0.25,
        "delta_drug_0": -0.8, "delta_drug_1": 0.2, "delta_drug_2": -0.3,
        "beta_drug_0": 5.2, "beta_drug_1": 0.3, "beta_drug_2": 0.2,
        "delta_hos_0": -0.5, "delta_hos_1": 0.1, "delta_hos_2": -0.2,
        "delta_hos_3": 0.05,
        "beta_hos_0": 4.0, "beta_hos_1": 0.2, "beta_hos_2": 0.1,
        "beta_hos_3": 0.03,
        "delta_ae_0": -1.0, "delta_ae_1": 0.1, "delta_ae_2": -0.1,
        "delta_ae_3": 0.02, "delta_ae_4": 0.03,
        "beta_ae_0": 3.0, "beta_ae_1": 0.15, "beta_ae_2": 0.1,
        "beta_ae_3": 0.02, "beta_ae_4": 0.01,
    }
    sigmas = {"sigma_pfs": 0.3, "sigma_drug": 0.7, "sigma_hos": 0.6,
              "sigma_ae": 0.8}

    x = np.zeros(m.dim)
    for name, v in theta.items():
        x[m.param_names.index(name)] = v
    u_by_name = {}
    for name, s in sigmas.items():
        u = math.log(s / (sd_upper - s))
        u_by_name[name] = u
        x[m.param_names.index(name)] = u
    y_idx = m.param_names.index("y_pps[p1]")

    # hand-built terms, textbook parameterizations only
    e_pfs, c_d, c_h, c_a = 1.3, 420.0, 180.0, 40.0

    def norm_prior(v):
        return -0.5 * (v / sd_prior) ** 2 - math.log(sd_prior) \
            - 0.5 * math.log(2 * math.pi)

    def anc_term(u):
        return -math.log1p(math.exp(-u)) - math.log1p(math.exp(u))

    def gumbel_lpdf(v, mean, sd):
        beta = sd * math.sqrt(6.0) / math.pi
        mu = mean - EULER * beta
        z = (v - mu) / beta
        return -math.log(beta) - z - math.exp(-z)

    def lognorm_lpdf(v, phi, sd):
        return -math.log(v) - math.log(sd) - 0.5 * math.log(2 * math.pi) \
            - (math.log(v) - phi) ** 2 / (2.0 * sd ** 2)

    def cost_terms(e_pps):
        lds = theta["delta_drug_0"] + theta["delta_drug_1"] * e_pfs \
            + theta["delta_drug_2"] * e_pps
        phi_d = theta["beta_drug_0"] + theta["beta_drug_1"] * e_pfs \
            + theta["beta_drug_2"] * e_pps
        out = math.log(1.0 - expit(lds)) + lognorm_lpdf(c_d, phi_d,
                                                        sigmas["sigma_drug"])
        lhs_ = theta["delta_hos_0"] + theta["delta_hos_1"] * e_pfs \
            + theta["delta_hos_2"] * e_pps + theta["delta_hos_3"] * math.log(c_d)
        phi_h = theta["beta_hos_0"] + theta["beta_hos_1"] * e_pfs \
            + theta["beta_hos_2"] * e_pps + theta["beta_hos_3"] * math.log(c_d)
        out += math.log(1.0 - expit(lhs_)) + lognorm_lpdf(c_h, phi_h,
                                                          sigmas["sigma_hos"])
        las = theta["delta_ae_0"] + theta["delta_ae_1"] * e_pfs \
            + theta["delta_ae_2"] * e_pps + theta["delta_ae_3"] * math.log(c_d) \
            + theta["delta_ae_4"] * math.log(c_h)
        phi_a = theta["beta_ae_0"] + theta["beta_ae_1"] * e_pfs \
            + theta["beta_ae_2"] * e_pps + theta["beta_ae_3"] * math.log(c_d) \
            + theta["beta_ae_4"] * math.log(c_h)
        out += math.log(1.0 - expit(las)) + lognorm_lpdf(c_a, phi_a,
                                                         sigmas["sigma_ae"])
        return out

    a_term = sum(norm_prior(v) for v in theta.values())
    a_term += sum(anc_term(u) for u in u_by_name.values())
    a_term += gumbel_lpdf(e_pfs, theta["alpha_pfs_0"], sigmas["sigma_pfs"])

    logit_pps = theta["gamma_pps_0"] + theta["gamma_pps_1"] * e_pfs
    pi_pps = expit(logit_pps)
    mean_pps = math.exp(theta["alpha_pps_0"] + theta["alpha_pps_1"] * e_pfs)

    zero_branch = math.log(pi_pps) + cost_terms(0.0)

    def pos_term(y):
        lat = -math.log(mean_pps) - math.exp(y) / mean_pps + y
        return math.log(1.0 - pi_pps) + lat + cost_terms(math.exp(y))

    grid = np.linspace(-40.0, 15.0, 400)
    shift = max(max(pos_term(y) for y in grid), zero_branch)
    pos_int, _ = integrate.quad(lambda y: math.exp(pos_term(y) - shift),
                                -60.0, 25.0, limit=400)
    rhs = math.exp(zero_branch - shift) + pos_int    # times exp(a_term+shift)

    def full(y):
        xv = x.copy()
        xv[y_idx] = y
        return m.logp_grad(xv)[0]

    lhs_shift = a_term + shift
    lhs, _ = integrate.quad(lambda y: math.exp(full(y) - lhs_shift),
                            -60.0, 25.0, limit=400)

    rel = abs(lhs / rhs - 1.0)
    _report(capsys, 2, "latent marginalization quadrature oracle",
            rel < 1e-6, "rel err %.2e" % rel)


# -- criterion 3: sampler calibration --------------------------------------------------


class _ConjugateMean:
    """Normal observations with known sd, normal prior on the mean."""

    param_names = ["mu"]
    dim = 1

    def __init__(self, y, sd, tau):
        self.y = np.asarray(y, dtype=float)
        self.sd = sd
        self.tau = tau
        prec = self.y.size / sd ** 2 + 1.0 / tau ** 2
        self.post_mean = (self.y.sum() / sd ** 2) / prec
        self.post_sd = math.sqrt(1.0 / prec)

    def logp_grad(self, x):
        mu = x[0]
        g = float(np.sum(self.y - mu)) / self.sd ** 2 - mu / self.tau ** 2
        v = -0.5 * float(np.sum(((self.y - mu) / self.sd) ** 2)) \
            - 0.5 * (mu / self.tau) ** 2
        return v, np.array([g])

    def initial_point(self, jitter_rng=None, jitter=0.0):
        x = np.zeros(1)
        if jitter_rng is not None and jitter > 0:
            x += jitter * jitter_rng.uniform(-1, 1, size=1)
        return x

    def constrain(self, x):
        return np.asarray(x, dtype=float)


class _CorrelatedGaussian:
    """Zero-mean Gaussian with banded correlation and uneven scales."""

    def __init__(self):
        self.dim = 10
        self.param_names = ["x%d" % i for i in range(10)]
        sd = 0.5 + 0.15 * np.arange(10)
        idx = np.arange(10)
        corr = 0.7 ** np.abs(idx[:, None] - idx[None, :])
        self.cov = corr * np.outer(sd, sd)
        self.prec = np.linalg.inv(self.cov)
        self.sd = sd

    def logp_grad(self, x):
        px = self.prec @ x
        return float(-0.5 * x @ px), -px

    def initial_point(self, jitter_rng=None, jitter=0.0):
        x = np.zeros(self.dim)
        if jitter_rng is not None and jitter > 0:
            x += jitter * jitter_rng.uniform(-1, 1, size=self.dim)
        return x

    def constrain(self, x):
        return np.asarray(x, dtype=float)


def test_criterion_03_sampler_calibration(capsys):
    t0 = time.time()
    rng = np.random.default_rng(314)
    y = rng.normal(1.0, 1.5, size=30)
    conj = _ConjugateMean(y, sd=1.5, tau=2.0)
    chains = sample(conj, SamplerConfig(chains=2, iterations=2000,
                                        warmup=500, seed=11))
    mat = chains.matrix("mu")
    n_eff = ess(mat)
    mean_err = abs(float(mat.mean()) - conj.post_mean)
    mean_tol = 3.0 * conj.post_sd / math.sqrt(n_eff)
    sd_err = abs(float(mat.std(ddof=1)) - conj.post_sd)
    sd_tol = 3.0 * conj.post_sd * math.sqrt(0.5 / n_eff)

    target = _CorrelatedGaussian()
    chains10 = sample(target, SamplerConfig(chains=2, iterations=2000,
                                            warmup=500, seed=12))
    worst_q = 0.0
    z = {0.05: -1.6448536269514722, 0.5: 0.0, 0.95: 1.6448536269514722}
    for i in range(10):
        mi = chains10.matrix("x%d" % i)
        pooled = mi.ravel()
        for p, zp in z.items():
            q_true = zp * target.sd[i]
            q_hat = float(np.quantile(pooled, p))
            ind = (mi <= q_true).astype(float)
            n_ind = ess(ind)
            if math.isnan(n_ind):
                n_ind = pooled.size
            dens = math.exp(-0.5 * zp * zp) / (target.sd[i]
                                               * math.sqrt(2 * math.pi))
            band = 3.0 * math.sqrt(p * (1 - p) / n_ind) / dens
            worst_q = max(worst_q, abs(q_hat - q_true) / band)
    elapsed = time.time() - t0
    ok = mean_err < mean_tol and sd_err < sd_tol and worst_q < 1.0 \
        and elapsed < 60.0
    _report(capsys, 3, "sampler calibration",
            ok, "mean err %.4f<%.4f, sd err %.4f<%.4f, worst quantile "
                "%.2f of band, %.1fs"
                % (mean_err, mean_tol, sd_err, sd_tol, worst_q, elapsed))


# -- criterion 4: parameter recovery under missingness --------------------------------


def test_criterion_04_parameter_recovery_with_mar_missingness(capsys):
    t0 = time.time()
    truth = default_truth()
    spec = ModelSpec.original()
    reg_names = None
    covered = None
    max_rhat = 0.0
    max_div = 0.0
    n_rep = 20
    for i in range(n_rep):
        d = generate(truth, 150, seed=1000 + i, spec=spec)
        rates = {v: 0.2 for v in ("e_pps", "c_drug", "c_hos", "c_ae")}
        depend = {v: {"arm": 0.6} for v in rates}
        d, _ = amputate(d, rates, depend=depend, seed=1500 + i)
        m = build_model(spec, d, arm=1)
        chains = sample(m, SamplerConfig(chains=2, iterations=4000,
                                         warmup=1000, seed=2500 + i))
        max_div = max(max_div, chains.divergence_rate)
        for name in m.param_names:
            r = split_rhat(chains, name)
            if not math.isnan(r):
                max_rhat = max(max_rhat, r)
        if reg_names is None:
            reg_names = [n for n in m.param_names[:m.n_params]
                         if not n.startswith(("sigma", "shape"))]
            covered = {n: 0 for n in reg_names}
        for name in reg_names:
            lo, hi = hpd(chains.matrix(name).ravel(), 0.95)
            if lo <= truth[1][name] <= hi:
                covered[name] += 1
    elapsed = time.time() - t0
    budget = 1800.0 * (2.0 if worker_count(None) < 2 else 1.0)
    min_cov = min(covered.values())
    ok = min_cov >= 16 and max_rhat < 1.05 and max_div <= 0.01 \
        and elapsed < budget
    low = sorted((v, k) for k, v in covered.items())[:3]
    _report(capsys, 4, "parameter recovery, 20 trials, 20% MAR",
            ok, "min coverage %d/20 (%s), max rhat %.3f, max divergence "
                "%.3f%%, %.0fs of %.0fs"
                % (min_cov, ", ".join("%s %d" % (k, v) for v, k in low),
                   max_rhat, 100 * max_div, elapsed, budget))


# -- criterion 5: model selection orders the generating family first ------------------


def test_criterion_05_waic_prefers_generating_families(capsys):
    t0 = time.time()
    truth = default_truth()
    gen_spec = ModelSpec.original()
    alt_spec = ModelSpec.alternative()
    wins = 0
    n_rep = 20
    gaps = []
    for i in range(n_rep):
        d = generate(truth, 100, seed=5000 + i, spec=gen_spec)
        totals = {}
        for label, spec in (("gen", gen_spec), ("alt", alt_spec)):
            m = build_model(spec, d, arm=1)
            chains = sample(m, SamplerConfig(chains=2, iterations=1000,
                                             warmup=400, seed=6000 + i))
            totals[label] = assess_fit(m, chains).total_waic
        gaps.append(totals["alt"] - totals["gen"])
        if totals["gen"] < totals["alt"]:
            wins += 1
    elapsed = time.time() - t0
    ok = wins >= 18
    _report(capsys, 5, "WAIC model selection over 20 replicates",
            ok, "%d/20 wins, median gap %.1f, %.0fs"
                % (wins, float(np.median(gaps)), elapsed))


# -- criterion 6: information-criterion formula oracles -------------------------------


def _waic_brute(ll):
    s_n, n = ll.shape
    lppd = 0.0
    p_d = 0.0
    for i in range(n):
        col = [float(v) for v in ll[:, i]]
        mx = max(col)
        lppd += mx + math.log(sum(math.exp(c - mx) for c in col) / s_n)
        mean = sum(col) / s_n
        p_d += sum((c - mean) ** 2 for c in col) / (s_n - 1)
    return -2.0 * (lppd - p_d), p_d


def test_criterion_06_waic_and_gpd_oracles(capsys):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        loc = rng.uniform(-40.0, 5.0)
        scale = rng.uniform(0.5, 3.0)
        ll = rng.normal(loc, scale, size=(100, 10))
        w, p = waic(ll)
        wb, pb = _waic_brute(ll)
        worst = max(worst,
                    abs(w - wb) / max(1.0, abs(wb)),
                    abs(p - pb) / max(1.0, abs(pb)))

    errs = []
    for k_true, sigma, seed in ((0.5, 1.0, 21), (0.1, 2.0, 22)):
        rng = np.random.default_rng(seed)
        u = rng.random(2000)
        xs = sigma * ((1.0 - u) ** (-k_true) - 1.0) / k_true
        k_hat, _ = gpd_fit(xs)
        errs.append(abs(k_hat - k_true))
    ok = worst < 1e-10 and max(errs) < 0.15
    _report(capsys, 6, "WAIC brute force and GPD shape recovery",
            ok, "waic rel err %.1e, khat errs %s"
                % (worst, ", ".join("%.3f" % e for e in errs)))


# -- criterion 7: quality-adjusted survival identities ---------------------------------


def test_criterion_07_qas_partition_identities(capsys):
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 12))
        times = np.concatenate([[0.0],
                                np.sort(rng.uniform(0.05, 5.0, size=n - 1))])
        u = rng.uniform(-0.2, 1.0, size=n)
        s = rng.uniform(0.0, 1.0, size=n)
        tau = float(rng.uniform(0.0, times[-1]))
        series = UtilitySeries(times, u, s, progression_time=tau)
        e1, e2 = partition_qas(series)
        total = qas(series.with_grid_point(tau))
        worst = max(worst, abs(e1 + e2 - total) / max(1.0, abs(total)))

    exact = True
    for _ in range(200):
        n = int(rng.integers(2, 10))
        times = np.concatenate([[0.0],
                                np.sort(rng.uniform(0.05, 5.0, size=n - 1))])
        u = rng.uniform(-0.2, 1.0, size=n)
        weighted = UtilitySeries(times, u, np.ones(n))
        plain = UtilitySeries(times, u)
        if qas(weighted) != auc_qaly(plain):
            exact = False
    ok = worst < 1e-12 and exact
    _report(capsys, 7, "QAS partition additivity and unweighted reduction",
            ok, "max rel err %.1e, reduction exact: %s" % (worst, exact))


# -- criterion 8: economic identities --------------------------------------------------


def _const_chains(m, xrow, n):
    rows = np.tile(xrow, (n, 1))
    return Chains(names=tuple(m.param_names), constrained=(rows,),
                  unconstrained=None, divergent=(np.zeros(n, dtype=bool),),
                  energy=(np.zeros(n),), accept_stat=None, step_size=None,
                  metric=None)


def test_criterion_08_economic_identities(capsys):
    recs = [PatientRecord(id="e%d%d" % (a, i), arm=a, e_pfs=1.0, e_pps=1.0,
                          c_drug=50.0, c_hos=20.0, c_ae=5.0)
            for a in (1, 2) for i in range(3)]
    m = build_model(ModelSpec.original(), make_dataset(recs), arm=1)
    pi, phi, sd = 0.3, 4.0, 0.8
    xrow = np.zeros(m.dim)
    for name in m.param_names:
        if name.startswith(("sigma", "shape")):
            xrow[m.param_names.index(name)] = 1.0
    xrow[m.param_names.index("alpha_pfs_0")] = 2.0
    xrow[m.param_names.index("alpha_pps_0")] = 0.4
    xrow[m.param_names.index("delta_drug_0")] = math.log(pi / (1 - pi))
    xrow[m.param_names.index("beta_drug_0")] = phi
    xrow[m.param_names.index("sigma_drug")] = sd
    # park the other hurdles at always-zero so their means stay finite
    xrow[m.param_names.index("delta_hos_0")] = 200.0
    xrow[m.param_names.index("delta_ae_0")] = 200.0

    s_draws, n_mc = 50, 1000
    am = marginal_means(m, _const_chains(m, xrow, s_draws), n_mc=n_mc, seed=9)

    add_e = np.array_equal(am.mu_e, am.e_pfs + am.e_pps)
    add_c = np.array_equal(am.mu_c, am.c_drug + am.c_hos + am.c_ae)

    target = (1 - pi) * math.exp(phi + sd * sd / 2.0)
    second = (1 - pi) * math.exp(2 * phi + 2 * sd * sd)
    se = math.sqrt((second - target ** 2) / (s_draws * n_mc))
    mc_err = abs(float(am.c_drug.mean()) - target)

    rng = np.random.default_rng(8)
    de = rng.uniform(0.05, 0.4, size=4000)
    dc = rng.normal(2000.0, 3000.0, size=4000)
    grid = np.arange(0.0, 100001.0, 2500.0)
    curve = ceac(de, dc, grid)
    agree = all(curve[j] == cep(de, dc, k=grid[j])[1]
                for j in range(grid.size))
    monotone = bool(np.all(np.diff(curve) >= 0.0))

    ok = add_e and add_c and mc_err < 3 * se and agree and monotone
    _report(capsys, 8, "economic identities",
            ok, "additivity %s/%s, MC err %.2f vs 3SE %.2f, CEAC=CEP %s, "
                "monotone %s"
                % (add_e, add_c, mc_err, 3 * se, agree, monotone))


# -- criterion 9: byte-identical reruns ------------------------------------------------


def test_criterion_09_reproducibility(tmp_path, capsys):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        cfg = {
            "out": str(out),
            "seed": 4,
            "simulate": {"n_per_arm": 30, "seed": 15},
            "data": str(out / "trial.csv"),
            "spec": "original",
            "sampler": {"chains": 2, "iterations": 400, "warmup": 150},
            "n_mc": 120,
            "n_rep": 5,
        }
        path = tmp_path / ("cfg_%s.json" % tag)
        path.write_text(json.dumps(cfg), encoding="utf-8")
        for command in ("simulate", "fit", "diagnose", "assess", "evaluate"):
            assert cli.main([command, "--config", str(path)]) == 0
        outs.append(out)
    names = ["trial.csv", "draws_arm1.csv", "draws_arm2.csv",
             "diagnostics_arm1.csv", "diagnostics_arm2.csv",
             "assessment_arm1.csv", "assessment_arm2.csv",
             "econ.csv", "ceac.csv"]
    same = [n for n in names
            if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = same == names
    _report(capsys, 9, "byte-identical pipeline rerun",
            ok, "%d/%d files identical" % (len(same), len(names)))


# -- criterion 10: scale check ---------------------------------------------------------


def test_criterion_10_runtime_scale_check(tmp_path, capsys):
    # the shipped default regime retains 2 x 12000 draws
    default = SamplerConfig()
    regime_ok = default.chains == 2 and default.iterations == 15000 \
        and default.warmup == 3000

    out = tmp_path / "run"
    cfg = {
        "out": str(out),
        "seed": 5,
        "simulate": {"n_per_arm": 150, "seed": 33},
        "data": str(out / "trial.csv"),
        "spec": "original",
        "n_mc": 200,
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    assert cli.main(["simulate", "--config", str(path)]) == 0
    t0 = time.time()
    code = cli.main(["fit", "--config", str(path),
                     "--iters", "2000", "--warmup", "500"])
    elapsed = time.time() - t0
    # the full regime is 7.5x the iterations; with the four chain runs
    # spread over four cores the wall clock is at least halved
    extrapolated = elapsed * 7.5 / 2.0
    ok = regime_ok and code == 0 and extrapolated < 1200.0
    _report(capsys, 10, "n=300 scale check, reduced regime",
            ok, "default regime 2x15000/3000 %s, reduced fit %.0fs, "
                "extrapolated full-regime wall %.0fs < 1200s"
                % (regime_ok, elapsed, extrapolated))
