"""Joint model of effectiveness and costs for one treatment arm.

Per arm, progression-free quality-adjusted survival e_pfs gets a location
family (mean regression); post-progression e_pps and the three cost
components get hurdle models: a logistic regression for the probability of a
structural zero, and a positive continuous family for the rest, with a log
link on the mean where the support demands it. Stages chain: e_pps depends
on e_pfs; each cost depends on both effectiveness values and the logs of
upstream positive costs (a zero upstream cost contributes 0 to the
predictor, see `log_or_zero`).

Regression coefficients get Normal(0, sd 100) priors; every sd/shape
ancillary gets Uniform(0, sd_upper) via a scaled-sigmoid transform whose
log-Jacobian joins the target (the flat prior's -log(sd_upper) cancels the
Jacobian's +log(sd_upper) exactly). Missing cells become latent coordinates:
unbounded for e_pfs, log-scale positive-branch values for hurdle variables,
with the binary hurdle membership marginalized analytically. A record with m
missing hurdle cells contributes a log-sum-exp over its 2^m zero/positive
branch combinations; the branch tree is flattened once at build time into a
static "scenario table" (one row per live branch combination), so a
log-posterior evaluation is a fixed sequence of vectorized array ops.

Three implementations of the log-posterior are provided and tested against
each other. `logp_grad` chains the analytic vector-Jacobian products from
`families` through the scenario table in plain numpy, forward and backward
written out by hand; it is what the sampler calls. `logp_grad_tape` runs the
same fused kernels as custom nodes on the AD tape. `logp_grad_reference`
rebuilds the density record by record from basic AD primitives, following
the nested mixture definition; it is the correctness anchor.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from . import diff
from . import families as fam
from .data import OUTCOME_VARS, ZERO_TOL, TrialDataset, is_missing
from ._util import fmt_float

__all__ = [
    "ModelSpec", "ModelInstance", "build_model", "log_posterior",
    "family_lpdf", "hurdle_logit_prob", "linear_predictor", "log_or_zero",
    "HURDLE_STAGES", "STAGE_REGRESSORS",
]

HURDLE_STAGES = ("e_pps", "c_drug", "c_hos", "c_ae")

STAGE_REGRESSORS = {
    "e_pfs": (),
    "e_pps": ("e_pfs",),
    "c_drug": ("e_pfs", "e_pps"),
    "c_hos": ("e_pfs", "e_pps", "log_c_drug"),
    "c_ae": ("e_pfs", "e_pps", "log_c_drug", "log_c_hos"),
}

_SHORT = {"e_pfs": "pfs", "e_pps": "pps", "c_drug": "drug", "c_hos": "hos", "c_ae": "ae"}

_PFS_SET = ("gumbel", "logistic", "normal")
_PPS_SET = ("exponential", "weibull", "normal")
_COST_SET = ("lognormal", "gamma")


def log_or_zero(c):
    """Upstream cost regressor: log(c) for positive c, 0 for a structural zero.

    The single place the zero-cost regressor convention lives.
    """
    c = np.asarray(c, dtype=float)
    out = np.zeros(c.shape)
    pos = c > ZERO_TOL
    out[pos] = np.log(c[pos])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelSpec:
    """Family choices and prior settings for one arm's joint model."""

    family_e_pfs: str = "gumbel"
    family_e_pps: str = "exponential"
    family_costs: str = "lognormal"
    prior_sd_regression: float = 100.0
    sd_upper: float = 10000.0
    include_covariates: bool = False
    center_hurdle_predictors: bool = False

    def __post_init__(self):
        object.__setattr__(self, "family_e_pfs", self.family_e_pfs.lower())
        object.__setattr__(self, "family_e_pps", self.family_e_pps.lower())
        object.__setattr__(self, "family_costs", self.family_costs.lower())
        if self.family_e_pfs not in _PFS_SET:
            raise ValueError("family_e_pfs must be one of %s" % (_PFS_SET,))
        if self.family_e_pps not in _PPS_SET:
            raise ValueError("family_e_pps must be one of %s" % (_PPS_SET,))
        if self.family_costs not in _COST_SET:
            raise ValueError("family_costs must be one of %s" % (_COST_SET,))
        if not self.prior_sd_regression > 0:
            raise ValueError("prior_sd_regression must be > 0")
        if not self.sd_upper > 0:
            raise ValueError("sd_upper must be > 0")

    @classmethod
    def original(cls, **kw):
        return cls(family_e_pfs="gumbel", family_e_pps="exponential",
                   family_costs="lognormal", **kw)

    @classmethod
    def alternative(cls, **kw):
        return cls(family_e_pfs="logistic", family_e_pps="weibull",
                   family_costs="gamma", **kw)

    def stage_family(self, stage):
        if stage == "e_pfs":
            return self.family_e_pfs
        if stage == "e_pps":
            return self.family_e_pps
        return self.family_costs

    def stage_link(self, stage):
        """'identity': predictor is the natural location; 'log': loc = exp(pred)."""
        if stage == "e_pfs":
            return "identity"
        if stage == "e_pps":
            return "log"
        return "identity" if self.family_costs == "lognormal" else "log"

    def stage_ancillary(self, stage):
        """Name prefix of the stage's ancillary parameter, or None."""
        family = self.stage_family(stage)
        if family == "exponential":
            return None
        if family == "weibull":
            return "shape"
        return "sigma"


def to_dict(spec):
    return {
        "family_e_pfs": spec.family_e_pfs,
        "family_e_pps": spec.family_e_pps,
        "family_costs": spec.family_costs,
        "prior_sd_regression": spec.prior_sd_regression,
        "sd_upper": spec.sd_upper,
        "include_covariates": spec.include_covariates,
        "center_hurdle_predictors": spec.center_hurdle_predictors,
    }


# -- public scalar operations ---------------------------------------------------


def family_lpdf(family, x, location, ancillary=None):
    """Log density under the mean/sd (or mean/shape) parameterization.

    Returns -inf outside the support or for invalid parameters.
    """
    family = family.lower()
    if family in ("exponential", "weibull", "lognormal", "gamma") and not x > 0:
        return -math.inf
    if fam.ANCILLARY[family] is not None and not ancillary > 0:
        return -math.inf
    if family in ("exponential", "weibull", "gamma") and not location > 0:
        return -math.inf
    return float(fam.family_lpdf(family, x, location, ancillary))


def hurdle_logit_prob(gamma, predictors):
    """Probability of the structural zero: inverse-logit of gamma . predictors."""
    gamma = np.asarray(gamma, dtype=float)
    predictors = np.asarray(predictors, dtype=float)
    if gamma.shape != predictors.shape:
        raise ValueError("coefficient and predictor lengths differ")
    return float(sp.expit(np.dot(gamma, predictors)))


def stage_regressor_values(record, stage):
    """Resolved regressor vector for a stage, in STAGE_REGRESSORS order."""

    def get(name):
        if isinstance(record, dict):
            return record[name]
        return getattr(record, name)

    out = []
    for reg in STAGE_REGRESSORS[stage]:
        if reg.startswith("log_"):
            out.append(log_or_zero(get(reg[4:])))
        else:
            out.append(float(get(reg)))
    return np.array(out, dtype=float)


def linear_predictor(intercept, slopes, record, stage):
    """Stage predictor: intercept + slopes . stage regressors of `record`.

    `record` maps variable names to resolved values (a PatientRecord works);
    upstream costs enter through log_or_zero.
    """
    regs = stage_regressor_values(record, stage)
    slopes = np.asarray(slopes, dtype=float)
    if slopes.shape != (len(regs),):
        raise ValueError("expected %d slopes for stage %s" % (len(regs), stage))
    return float(intercept + np.dot(slopes, regs))


# -- parameter layout -------------------------------------------------------------


class _Layout:
    """Names and index blocks of the flat unconstrained vector."""

    def __init__(self, spec, n_cov):
        self.names = []
        self.kinds = []          # "param" | "latent"
        self.record_ids = []
        interval = []
        self.blocks = {}

        def add(name, is_interval=False):
            self.names.append(name)
            self.kinds.append("param")
            self.record_ids.append("")
            if is_interval:
                interval.append(len(self.names) - 1)
            return len(self.names) - 1

        def add_block(key, block_names, is_interval=False):
            self.blocks[key] = np.array([add(n, is_interval) for n in block_names],
                                        dtype=np.intp)

        cov = ["x%d" % i for i in range(1, n_cov + 1)]
        add_block("mean_e_pfs", ["alpha_pfs_0"] + ["alpha_pfs_%s" % c for c in cov])
        add_block("anc_e_pfs", ["sigma_pfs"], is_interval=True)
        for stage in HURDLE_STAGES:
            s = _SHORT[stage]
            nreg = len(STAGE_REGRESSORS[stage])
            gname = "gamma" if stage == "e_pps" else "delta"
            mname = "alpha" if stage == "e_pps" else "beta"
            add_block("logit_%s" % stage,
                      ["%s_%s_%d" % (gname, s, j) for j in range(nreg + 1)]
                      + ["%s_%s_%s" % (gname, s, c) for c in cov])
            add_block("mean_%s" % stage,
                      ["%s_%s_%d" % (mname, s, j) for j in range(nreg + 1)]
                      + ["%s_%s_%s" % (mname, s, c) for c in cov])
            anc = spec.stage_ancillary(stage)
            if anc is not None:
                add_block("anc_%s" % stage, ["%s_%s" % (anc, s)], is_interval=True)
        self.n_params = len(self.names)
        self.interval_idx = np.array(interval, dtype=np.intp)
        self.latent_idx = {}     # stage -> {arm record position -> coordinate}

    def add_latents(self, stage, positions, ids):
        prefix = "z" if stage == "e_pfs" else "y"
        table = {}
        for pos, rid in zip(positions, ids):
            self.names.append("%s_%s[%s]" % (prefix, _SHORT[stage], rid))
            self.kinds.append("latent")
            self.record_ids.append(rid)
            table[int(pos)] = len(self.names) - 1
        self.latent_idx[stage] = table

    @property
    def dim(self):
        return len(self.names)

    def regression_idx(self):
        """Coordinates under the Normal prior: all params except intervals."""
        interval = set(self.interval_idx.tolist())
        return np.array([i for i in range(self.n_params) if i not in interval],
                        dtype=np.intp)


# -- scenario table plan -----------------------------------------------------------


class _ColumnPlan:
    """One regressor column at one table level.

    const: the column with zeros at latent-driven rows; positions/gather:
    where latent-driven values go and which x coordinates supply them;
    transform: 'id' (e_pfs z, cost y) or 'exp' (e_pps positive branch).
    """

    __slots__ = ("const", "positions", "gather", "transform")

    def __init__(self, const, positions=None, gather=None, transform="id"):
        self.const = const
        self.positions = positions
        self.gather = gather
        self.transform = transform

    def shifted(self, delta):
        return _ColumnPlan(self.const - delta, self.positions, self.gather,
                           self.transform)


class _StagePlan:
    __slots__ = ("stage", "family", "link", "anc_idx", "logit_idx", "mean_idx",
                 "m", "m_next", "obs_zero", "obs_pos", "obs_pos_x", "miss",
                 "miss_latent", "parent_index", "zero_child", "pos_child",
                 "cols", "logit_cols")


def build_model(spec, d, arm=None):
    """Construct the arm model: parameter layout plus scenario-table plan.

    `d` is a TrialDataset (give `arm` to select one) or a sequence of
    PatientRecord from a single arm.
    """
    if isinstance(d, TrialDataset):
        if arm is None:
            raise ValueError("pass arm=1 or arm=2 with a two-arm dataset")
        records = d.arm_records(arm)
    else:
        records = tuple(d)
        arms = {r.arm for r in records}
        if len(arms) > 1:
            raise ValueError("records span more than one arm")
        if arm is None and arms:
            arm = arms.pop()
    if not records:
        raise ValueError("empty arm")
    n = len(records)

    n_cov = len(records[0].covariates)
    if spec.include_covariates and n_cov == 0:
        raise ValueError("spec includes covariates but the data has none")
    use_cov = spec.include_covariates and n_cov > 0
    if use_cov:
        raw = np.array([r.covariates for r in records], dtype=float)
        covariates = raw - raw.mean(axis=0)
    else:
        covariates = None

    layout = _Layout(spec, n_cov if use_cov else 0)
    for stage in ("e_pfs",) + HURDLE_STAGES:
        missing_pos = [i for i, r in enumerate(records) if is_missing(getattr(r, stage))]
        layout.add_latents(stage, missing_pos, [records[missing_pos_i].id
                                                for missing_pos_i in missing_pos])

    plan = _build_plan(spec, records, layout, covariates)
    return ModelInstance(spec, records, arm, layout, plan, covariates)


def _build_plan(spec, records, layout, covariates):
    n = len(records)
    plan = {}

    # centering shifts for hurdle logit predictors (constants from observed data)
    centers = {}
    obs = {v: np.array([getattr(r, v) for r in records if not is_missing(getattr(r, v))])
           for v in OUTCOME_VARS}

    def center_of(regname):
        if not spec.center_hurdle_predictors:
            return 0.0
        if regname.startswith("log_"):
            vals = obs[regname[4:]]
            return float(np.mean(log_or_zero(vals))) if vals.size else 0.0
        vals = obs[regname]
        return float(np.mean(vals)) if vals.size else 0.0

    plan["centers"] = {stage: [center_of(rn) for rn in STAGE_REGRESSORS[stage]]
                       for stage in HURDLE_STAGES}

    # level state: one row per live branch combination, grouped by record
    rec_of_row = np.arange(n, dtype=np.intp)
    # per already-expanded stage: -1 observed/not applicable, 0 zero, 1 positive
    branch = {}

    def column(regname, m):
        """_ColumnPlan for a regressor column at the current level."""
        if regname.startswith("x"):
            j = int(regname[1:]) - 1
            return _ColumnPlan(covariates[rec_of_row, j])
        if regname == "e_pfs":
            vals = np.array([0.0 if is_missing(r.e_pfs) else r.e_pfs for r in records])
            const = vals[rec_of_row]
            lat = layout.latent_idx["e_pfs"]
            positions = np.array([i for i in range(m) if int(rec_of_row[i]) in lat],
                                 dtype=np.intp)
            if positions.size == 0:
                return _ColumnPlan(const)
            gather = np.array([lat[int(rec_of_row[i])] for i in positions], dtype=np.intp)
            return _ColumnPlan(const, positions, gather, "id")
        stage = regname[4:] if regname.startswith("log_") else regname
        is_log = regname.startswith("log_")
        vals = np.zeros(n)
        for i, r in enumerate(records):
            v = getattr(r, stage)
            if not is_missing(v):
                vals[i] = log_or_zero(v) if is_log else v
        const = vals[rec_of_row]
        br = branch[stage]
        positions = np.flatnonzero(br == 1).astype(np.intp)
        if positions.size == 0:
            return _ColumnPlan(const)
        lat = layout.latent_idx[stage]
        gather = np.array([lat[int(rec_of_row[i])] for i in positions], dtype=np.intp)
        transform = "id" if is_log else "exp"
        return _ColumnPlan(const, positions, gather, transform)

    cov_names = ["x%d" % (j + 1) for j in range(covariates.shape[1])] \
        if covariates is not None else []

    # e_pfs stage: plain lpdf over all records, value column may hold latents
    plan["e_pfs"] = {
        "n": n,
        "value_col": column("e_pfs", n),
        "cov_cols": [column(c, n) for c in cov_names],
    }

    stages = []
    for stage in HURDLE_STAGES:
        p = _StagePlan()
        p.stage = stage
        p.family = spec.stage_family(stage)
        p.link = spec.stage_link(stage)
        key = "anc_%s" % stage
        p.anc_idx = int(layout.blocks[key][0]) if key in layout.blocks else None
        p.logit_idx = layout.blocks["logit_%s" % stage]
        p.mean_idx = layout.blocks["mean_%s" % stage]
        m = rec_of_row.size
        p.m = m

        struct_cols = [column(rn, m) for rn in STAGE_REGRESSORS[stage]]
        cov_cols = [column(c, m) for c in cov_names]
        p.cols = struct_cols + cov_cols
        shifts = plan["centers"][stage]
        p.logit_cols = [c.shifted(s) for c, s in zip(struct_cols, shifts)] + cov_cols

        obs_zero, obs_pos, miss = [], [], []
        obs_pos_x = []
        lat = layout.latent_idx[stage]
        for i in range(m):
            v = getattr(records[int(rec_of_row[i])], stage)
            if is_missing(v):
                miss.append(i)
            elif abs(v) < ZERO_TOL:
                obs_zero.append(i)
            else:
                obs_pos.append(i)
                obs_pos_x.append(v)
        p.obs_zero = np.array(obs_zero, dtype=np.intp)
        p.obs_pos = np.array(obs_pos, dtype=np.intp)
        p.obs_pos_x = np.array(obs_pos_x, dtype=float)
        p.miss = np.array(miss, dtype=np.intp)
        p.miss_latent = np.array([lat[int(rec_of_row[i])] for i in miss], dtype=np.intp)

        if p.miss.size:
            is_miss = np.zeros(m, dtype=bool)
            is_miss[p.miss] = True
            parent_index, zero_child, pos_child = [], [], []
            for i in range(m):
                if is_miss[i]:
                    zero_child.append(len(parent_index))
                    parent_index.append(i)
                    pos_child.append(len(parent_index))
                    parent_index.append(i)
                else:
                    parent_index.append(i)
            p.parent_index = np.array(parent_index, dtype=np.intp)
            p.zero_child = np.array(zero_child, dtype=np.intp)
            p.pos_child = np.array(pos_child, dtype=np.intp)
            p.m_next = len(parent_index)
            # push level state through the expansion
            rec_of_row = rec_of_row[p.parent_index]
            for s2 in branch:
                branch[s2] = branch[s2][p.parent_index]
            new_branch = np.full(p.m_next, -1, dtype=np.int8)
            new_branch[p.zero_child] = 0
            new_branch[p.pos_child] = 1
            branch[stage] = new_branch
        else:
            p.parent_index = None
            p.zero_child = p.pos_child = None
            p.m_next = m
            branch[stage] = np.full(m, -1, dtype=np.int8)
        stages.append(p)

    plan["stages"] = stages
    m_final = rec_of_row.size
    if m_final == n:
        plan["final"] = {"segments": None, "lengths": None}
    else:
        starts = np.flatnonzero(np.r_[True, rec_of_row[1:] != rec_of_row[:-1]])
        starts = starts.astype(np.intp)
        plan["final"] = {"segments": starts,
                         "lengths": np.diff(np.append(starts, m_final))}
    plan["n_rows_final"] = m_final
    return plan


# -- fused kernels (custom AD nodes) ------------------------------------------------


def _interval_scalar(u, upper):
    """upper * sigmoid(u) as one AD node."""
    s = sp.expit(u.value)
    out = upper * s

    def vjp(g):
        return g * upper * s * (1.0 - s)

    return diff.node(out, (u,), vjp)


def _pfs_lpdf_node(family, v_col, mu, anc):
    """Per-record e_pfs lpdf vector; grads flow to mu, anc and latent values."""
    v = v_col.value if isinstance(v_col, diff.Var) else v_col
    lp, dloc, danc = fam.lpdf_grads(family, v, mu.value, anc.value)
    parents = [mu, anc]
    v_is_var = isinstance(v_col, diff.Var)
    if v_is_var:
        parents.append(v_col)

    def vjp(g):
        grads = [g * dloc, float(np.sum(g * danc))]
        if v_is_var:
            # location families: d lpdf / dx = -d lpdf / d location
            grads.append(-g * dloc)
        return tuple(grads)

    return diff.node(lp, tuple(parents), vjp)


def _obs_bernoulli_node(z, p):
    """Hurdle membership terms for observed rows: log pi / log(1 - pi)."""
    zv = z.value
    out = np.zeros(p.m)
    out[p.obs_zero] = -np.logaddexp(0.0, -zv[p.obs_zero])
    out[p.obs_pos] = -np.logaddexp(0.0, zv[p.obs_pos])

    def vjp(g):
        buf = np.zeros(p.m)
        buf[p.obs_zero] = sp.expit(-zv[p.obs_zero]) * g[p.obs_zero]
        buf[p.obs_pos] = -sp.expit(zv[p.obs_pos]) * g[p.obs_pos]
        return buf

    return diff.node(out, (z,), vjp)


def _obs_lpdf_node(mu, anc, p):
    """Positive-branch lpdf at observed positive rows."""
    mu_op = mu.value[p.obs_pos]
    loc = np.exp(mu_op) if p.link == "log" else mu_op
    anc_v = anc.value if anc is not None else None
    lp, dloc, danc = fam.lpdf_grads(p.family, p.obs_pos_x, loc, anc_v)
    dpred = dloc * loc if p.link == "log" else dloc
    out = np.zeros(p.m)
    out[p.obs_pos] = lp
    parents = (mu,) if anc is None else (mu, anc)

    def vjp(g):
        gm = np.zeros(p.m)
        gm[p.obs_pos] = g[p.obs_pos] * dpred
        if anc is None:
            return gm
        return gm, float(np.sum(g[p.obs_pos] * danc))

    return diff.node(out, parents, vjp)


def _latent_node(y_rows, mu, anc, p):
    """Log-scale positive-branch latent density at missing rows."""
    mu_miss = mu.value[p.miss]
    loc = np.exp(mu_miss) if p.link == "log" else mu_miss
    anc_v = anc.value if anc is not None else None
    lp, dy, dloc, danc = fam.latent_lpdf_grads(p.family, y_rows.value, loc, anc_v)
    dpred = dloc * loc if p.link == "log" else dloc
    out = np.zeros(p.m)
    out[p.miss] = lp
    parents = (y_rows, mu) if anc is None else (y_rows, mu, anc)

    def vjp(g):
        gmiss = g[p.miss]
        gy = gmiss * dy
        gm = np.zeros(p.m)
        gm[p.miss] = gmiss * dpred
        if anc is None:
            return gy, gm
        return gy, gm, float(np.sum(gmiss * danc))

    return diff.node(out, parents, vjp)


def _expand_node(base, z, p):
    """Duplicate missing rows into zero/positive children with branch weights."""
    zm = z.value[p.miss]
    out = base.value[p.parent_index].copy()
    out[p.zero_child] += -np.logaddexp(0.0, -zm)   # log pi
    out[p.pos_child] += -np.logaddexp(0.0, zm)     # log(1 - pi)

    def vjp(g):
        gb = np.zeros(p.m)
        np.add.at(gb, p.parent_index, g)
        gz = np.zeros(p.m)
        gz[p.miss] = sp.expit(-zm) * g[p.zero_child] - sp.expit(zm) * g[p.pos_child]
        return gb, gz

    return diff.node(out, (base, z), vjp)


# -- model instance ------------------------------------------------------------------


class ModelInstance:
    """Immutable arm model: layout, scenario plan, and log-posterior routes."""

    def __init__(self, spec, records, arm, layout, plan, covariates):
        self.spec = spec
        self.records = records
        self.arm = arm
        self.layout = layout
        self.dim = layout.dim
        self.n_params = layout.n_params
        self.n_latents = layout.dim - layout.n_params
        self.param_names = list(layout.names)
        self.covariates = covariates
        self._plan = plan
        self._interval_set = frozenset(int(i) for i in layout.interval_idx)
        self._reg_idx = layout.regression_idx()

    # -- parameter handling ------------------------------------------------------

    def constrain(self, x):
        """Unconstrained -> constrained (vector or draws matrix)."""
        x = np.asarray(x, dtype=float)
        out = np.array(x, copy=True)
        idx = self.layout.interval_idx
        if idx.size:
            out[..., idx] = self.spec.sd_upper * sp.expit(x[..., idx])
        return out

    def unconstrain(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array(x, copy=True)
        idx = self.layout.interval_idx
        if idx.size:
            v = np.clip(x[..., idx] / self.spec.sd_upper, 1e-300, 1 - 1e-16)
            out[..., idx] = np.log(v) - np.log1p(-v)
        return out

    def name_index(self, name):
        return self.param_names.index(name)

    def block(self, key):
        return self.layout.blocks[key]

    def index_map_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "name", "kind", "lower", "upper", "record"])
            for i, name in enumerate(self.param_names):
                lo, hi = ("0", fmt_float(self.spec.sd_upper)) \
                    if i in self._interval_set else ("", "")
                writer.writerow([i, name, self.layout.kinds[i], lo, hi,
                                 self.layout.record_ids[i]])

    # -- log posterior -------------------------------------------------------------

    def logp_grad(self, x):
        """(log posterior, gradient); non-finite evaluations become (-inf, 0)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError("expected vector of dimension %d" % self.dim)
        if not np.all(np.isfinite(x)):
            return -math.inf, np.zeros(self.dim)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                         under="ignore"):
            value, grad = self._hand_value_grad(x)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros(self.dim)
        return value, grad

    def logp(self, x):
        return self.logp_grad(x)[0]

    def logp_grad_tape(self, x):
        """Same fused kernels as `logp_grad`, run as custom AD-tape nodes."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            return -math.inf, np.zeros(self.dim)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                         under="ignore"):
            value, grad = diff.gradient(self._fused_objective, x)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros(self.dim)
        return value, grad

    def logp_grad_reference(self, x):
        """Nested-mixture reference route on basic AD primitives."""
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore",
                         under="ignore"):
            value, grad = diff.gradient(self._reference_objective, x)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            return -math.inf, np.zeros(self.dim)
        return value, grad

    def _prior_terms(self, xv):
        lay, spec = self.layout, self.spec
        reg = lay.regression_idx()
        sd = spec.prior_sd_regression
        xr = xv[reg]
        lp = diff.vsum(xr * xr) * (-0.5 / sd ** 2) \
            - reg.size * (math.log(sd) + 0.5 * math.log(2 * math.pi))
        if lay.interval_idx.size:
            # Uniform(0, U) prior + transform Jacobian; the log U parts cancel,
            # leaving log s + log(1 - s) per constrained coordinate.
            u = xv[lay.interval_idx]
            lp = lp + diff.vsum(diff.log_sigmoid(u) + diff.log_sigmoid(-u))
        return lp

    def _anc_var(self, xv, stage):
        key = "anc_%s" % stage
        if key not in self.layout.blocks:
            return None
        return _interval_scalar(xv[int(self.layout.blocks[key][0])], self.spec.sd_upper)

    def _fused_objective(self, xv):
        plan, lay = self._plan, self.layout

        def realize(cp):
            if cp.positions is None:
                return cp.const
            raw = xv[cp.gather]
            vals = diff.exp(raw) if cp.transform == "exp" else raw
            return diff.scatter_add(cp.const, cp.positions, vals)

        p0 = plan["e_pfs"]
        mu0 = diff.affine(xv, lay.blocks["mean_e_pfs"],
                          [realize(c) for c in p0["cov_cols"]], p0["n"])
        anc0 = self._anc_var(xv, "e_pfs")
        logw = _pfs_lpdf_node(self.spec.family_e_pfs, realize(p0["value_col"]),
                              mu0, anc0)

        for p in plan["stages"]:
            z = diff.affine(xv, p.logit_idx, [realize(c) for c in p.logit_cols], p.m)
            mu = diff.affine(xv, p.mean_idx, [realize(c) for c in p.cols], p.m)
            anc = self._anc_var(xv, p.stage)
            contrib = _obs_bernoulli_node(z, p)
            if p.obs_pos.size:
                contrib = contrib + _obs_lpdf_node(mu, anc, p)
            if p.miss.size:
                contrib = contrib + _latent_node(xv[p.miss_latent], mu, anc, p)
            logw = logw + contrib
            if p.miss.size:
                logw = _expand_node(logw, z, p)

        seg = plan["final"]["segments"]
        if seg is None:
            total = diff.vsum(logw)
        else:
            total = diff.vsum(diff.segment_logsumexp(logw, seg))
        return total + self._prior_terms(xv)

    def _hand_value_grad(self, x):
        """Forward and backward pass of the fused route in plain numpy.

        Mirrors `_fused_objective` kernel by kernel; the backward pass walks
        the stages in reverse, folding each row expansion back onto its
        parent level. Kept tape-free because the sampler calls this in a
        tight loop.
        """
        plan, lay, spec = self._plan, self.layout, self.spec
        U = spec.sd_upper
        g = np.zeros(self.dim)

        reg, sd = self._reg_idx, spec.prior_sd_regression
        xr = x[reg]
        total = (-0.5 * np.dot(xr, xr) / sd ** 2
                 - reg.size * (math.log(sd) + 0.5 * math.log(2 * math.pi)))
        g[reg] = -xr / sd ** 2
        iv = lay.interval_idx
        if iv.size:
            u = x[iv]
            total -= float(np.sum(np.logaddexp(0.0, -u) + np.logaddexp(0.0, u)))
            g[iv] = sp.expit(-u) - sp.expit(u)

        def anc_info(stage, anc_idx):
            if anc_idx is None:
                return None, 0.0
            s = sp.expit(x[anc_idx])
            return U * s, U * s * (1.0 - s)

        # forward: e_pfs
        p0 = plan["e_pfs"]
        cp0 = p0["value_col"]
        if cp0.positions is None:
            v0 = cp0.const
        else:
            v0 = cp0.const.copy()
            v0[cp0.positions] += x[cp0.gather]
        cov_cols0 = [c.const for c in p0["cov_cols"]]
        idx0 = lay.blocks["mean_e_pfs"]
        c0 = x[idx0]
        mu0 = np.full(p0["n"], c0[0])
        for j, cv in enumerate(cov_cols0):
            mu0 = mu0 + c0[j + 1] * cv
        anc0_idx = int(lay.blocks["anc_e_pfs"][0])
        anc0, chain0 = anc_info("e_pfs", anc0_idx)
        lp0, dloc0, danc0 = fam.lpdf_grads(spec.family_e_pfs, v0, mu0, anc0)
        w = lp0

        # forward: hurdle stages
        store = []
        for p in plan["stages"]:
            m = p.m
            mean_cols, logit_cols, lat_vals = [], [], []
            for cm, cl in zip(p.cols, p.logit_cols):
                if cm.positions is None:
                    mean_cols.append(cm.const)
                    logit_cols.append(cl.const)
                    lat_vals.append(None)
                    continue
                raw = x[cm.gather]
                vals = np.exp(raw) if cm.transform == "exp" else raw
                a_ = cm.const.copy()
                a_[cm.positions] += vals
                b_ = cl.const.copy()
                b_[cl.positions] += vals
                mean_cols.append(a_)
                logit_cols.append(b_)
                lat_vals.append(vals)
            cz = x[p.logit_idx]
            z = np.full(m, cz[0])
            for j, cv in enumerate(logit_cols):
                z = z + cz[j + 1] * cv
            cm_ = x[p.mean_idx]
            mu = np.full(m, cm_[0])
            for j, cv in enumerate(mean_cols):
                mu = mu + cm_[j + 1] * cv
            anc, chain = anc_info(p.stage, p.anc_idx)

            contrib = np.zeros(m)
            oz, op = p.obs_zero, p.obs_pos
            if oz.size:
                contrib[oz] = -np.logaddexp(0.0, -z[oz])
            dpred_op = danc_op = None
            if op.size:
                loc_op = np.exp(mu[op]) if p.link == "log" else mu[op]
                lp_op, dloc_op, danc_op = fam.lpdf_grads(p.family, p.obs_pos_x,
                                                         loc_op, anc)
                dpred_op = dloc_op * loc_op if p.link == "log" else dloc_op
                contrib[op] = -np.logaddexp(0.0, z[op]) + lp_op
            dy_m = dpred_m = danc_m = zm = None
            if p.miss.size:
                y = x[p.miss_latent]
                loc_m = np.exp(mu[p.miss]) if p.link == "log" else mu[p.miss]
                lp_m, dy_m, dloc_m, danc_m = fam.latent_lpdf_grads(p.family, y,
                                                                   loc_m, anc)
                dpred_m = dloc_m * loc_m if p.link == "log" else dloc_m
                contrib[p.miss] = lp_m
                zm = z[p.miss]
            t = w + contrib
            if p.miss.size:
                w = t[p.parent_index]
                w[p.zero_child] += -np.logaddexp(0.0, -zm)
                w[p.pos_child] += -np.logaddexp(0.0, zm)
            else:
                w = t
            store.append((z, zm, mean_cols, logit_cols, lat_vals, cz, cm_,
                          dpred_op, danc_op, dy_m, dpred_m, danc_m, chain))

        seg = plan["final"]["segments"]
        if seg is None:
            total += float(np.sum(w))
            a = np.ones(w.size)
        else:
            lengths = plan["final"]["lengths"]
            mx = np.maximum.reduceat(w, seg)
            shifted = np.exp(w - np.repeat(mx, lengths))
            sums = np.add.reduceat(shifted, seg)
            total += float(np.sum(mx + np.log(sums)))
            a = shifted / np.repeat(sums, lengths)

        # backward: hurdle stages in reverse
        for p, (z, zm, mean_cols, logit_cols, lat_vals, cz, cm_, dpred_op,
                danc_op, dy_m, dpred_m, danc_m, chain) in zip(
                reversed(plan["stages"]), reversed(store)):
            if p.miss.size:
                a_par = np.zeros(p.m)
                np.add.at(a_par, p.parent_index, a)
                dz = np.zeros(p.m)
                dz[p.miss] = (sp.expit(-zm) * a[p.zero_child]
                              - sp.expit(zm) * a[p.pos_child])
                a = a_par
            else:
                dz = np.zeros(p.m)
            oz, op = p.obs_zero, p.obs_pos
            if oz.size:
                dz[oz] += sp.expit(-z[oz]) * a[oz]
            dmu = np.zeros(p.m)
            danc = 0.0
            if op.size:
                aop = a[op]
                dz[op] -= sp.expit(z[op]) * aop
                dmu[op] = aop * dpred_op
                if danc_op is not None:
                    danc += float(np.dot(aop, danc_op))
            if p.miss.size:
                am = a[p.miss]
                np.add.at(g, p.miss_latent, am * dy_m)
                dmu[p.miss] += am * dpred_m
                if danc_m is not None:
                    danc += float(np.dot(am, danc_m))
            if p.anc_idx is not None:
                g[p.anc_idx] += danc * chain
            g[p.logit_idx[0]] += float(np.sum(dz))
            g[p.mean_idx[0]] += float(np.sum(dmu))
            for j, cp in enumerate(p.cols):
                g[p.logit_idx[j + 1]] += float(np.dot(dz, logit_cols[j]))
                g[p.mean_idx[j + 1]] += float(np.dot(dmu, mean_cols[j]))
                if cp.positions is not None:
                    av = (cz[j + 1] * dz[cp.positions]
                          + cm_[j + 1] * dmu[cp.positions])
                    if cp.transform == "exp":
                        av = av * lat_vals[j]
                    np.add.at(g, cp.gather, av)

        # backward: e_pfs
        dmu0 = a * dloc0
        g[idx0[0]] += float(np.sum(dmu0))
        for j, cv in enumerate(cov_cols0):
            g[idx0[j + 1]] += float(np.dot(dmu0, cv))
        g[anc0_idx] += float(np.dot(a, danc0)) * chain0
        if cp0.positions is not None:
            # location family: d lpdf / dx = -d lpdf / d location
            np.add.at(g, cp0.gather, -dmu0[cp0.positions])
        return total, g

    def _reference_objective(self, xv):
        spec, lay = self.spec, self.layout
        centers = self._plan["centers"]

        def con(i):
            i = int(i)
            if i in self._interval_set:
                return _interval_scalar(xv[i], spec.sd_upper)
            return xv[i]

        def anc_of(stage):
            key = "anc_%s" % stage
            return con(lay.blocks[key][0]) if key in lay.blocks else None

        ancs = {s: anc_of(s) for s in ("e_pfs",) + HURDLE_STAGES}
        coeffs = {k: [con(i) for i in idx] for k, idx in lay.blocks.items()
                  if not k.startswith("anc_")}

        def predictor(key, regs, covs):
            cs = coeffs[key]
            out = cs[0]
            for c, r in zip(cs[1:], list(regs) + list(covs)):
                out = out + c * r
            return out

        total = 0.0
        for i, rec in enumerate(self.records):
            covs = list(self.covariates[i]) if self.covariates is not None else []
            v_pfs = xv[lay.latent_idx["e_pfs"][i]] if is_missing(rec.e_pfs) else rec.e_pfs
            mu0 = predictor("mean_e_pfs", [], covs)
            term = fam.family_lpdf(spec.family_e_pfs, v_pfs, mu0, ancs["e_pfs"])

            def stage_term(stage_i, resolved):
                if stage_i == len(HURDLE_STAGES):
                    return 0.0
                stage = HURDLE_STAGES[stage_i]
                family = spec.stage_family(stage)
                regs = [resolved[rn] for rn in STAGE_REGRESSORS[stage]]
                lregs = [r - c for r, c in zip(regs, centers[stage])] \
                    if spec.center_hurdle_predictors else regs
                z = predictor("logit_%s" % stage, lregs, covs)
                pred = predictor("mean_%s" % stage, regs, covs)
                loc = diff.exp(pred) if spec.stage_link(stage) == "log" else pred
                anc = ancs[stage]
                v = getattr(rec, stage)

                def downstream(raw, logval):
                    r2 = dict(resolved)
                    if stage == "e_pps":
                        r2["e_pps"] = raw
                    else:
                        r2["log_%s" % stage] = logval
                    return stage_term(stage_i + 1, r2)

                if not is_missing(v):
                    if abs(v) < ZERO_TOL:
                        return diff.log_sigmoid(z) + downstream(0.0, 0.0)
                    return (diff.log_sigmoid(-z)
                            + fam.family_lpdf(family, v, loc, anc)
                            + downstream(v, log_or_zero(v)))
                y = xv[lay.latent_idx[stage][i]]
                ey = diff.exp(y)
                tilde = fam.family_lpdf(family, ey, loc, anc) + y
                b0 = diff.log_sigmoid(z) + downstream(0.0, 0.0)
                b1 = diff.log_sigmoid(-z) + downstream(ey, y)
                return tilde + diff.logaddexp(b0, b1)

            total = total + term + stage_term(0, {"e_pfs": v_pfs})
        return total + self._prior_terms(xv)

    # -- starting point -------------------------------------------------------------

    def initial_point(self, jitter_rng=None, jitter=0.0):
        """Data-informed starting vector on the unconstrained scale."""
        spec, lay = self.spec, self.layout
        x = np.zeros(self.dim)
        sig = {}

        pfs_obs = np.array([r.e_pfs for r in self.records if not is_missing(r.e_pfs)])
        m_pfs = float(np.mean(pfs_obs)) if pfs_obs.size else 0.3
        s_pfs = float(np.std(pfs_obs, ddof=1)) if pfs_obs.size > 1 else 0.3
        x[lay.blocks["mean_e_pfs"][0]] = m_pfs
        sig[int(lay.blocks["anc_e_pfs"][0])] = max(s_pfs, 0.05)

        for stage in HURDLE_STAGES:
            vals = np.array([getattr(r, stage) for r in self.records
                             if not is_missing(getattr(r, stage))])
            zf = float(np.mean(np.abs(vals) < ZERO_TOL)) if vals.size else 0.5
            zf = min(max(zf, 0.02), 0.98)
            x[lay.blocks["logit_%s" % stage][0]] = math.log(zf / (1 - zf))
            pos = vals[np.abs(vals) >= ZERO_TOL]
            mean_pos = max(float(np.mean(pos)) if pos.size else 1.0, 1e-3)
            if spec.stage_link(stage) == "log":
                loc0 = math.log(mean_pos)
            else:
                loc0 = float(np.mean(np.log(pos))) if pos.size else 0.0
            x[lay.blocks["mean_%s" % stage][0]] = loc0
            key = "anc_%s" % stage
            if key in lay.blocks:
                family = spec.stage_family(stage)
                if family == "weibull":
                    a0 = 1.0
                elif family == "lognormal":
                    a0 = float(np.std(np.log(pos), ddof=1)) if pos.size > 1 else 0.8
                else:
                    a0 = float(np.std(pos, ddof=1)) if pos.size > 1 else max(mean_pos, 0.5)
                sig[int(lay.blocks[key][0])] = max(a0, 0.05)
            for _, coord in lay.latent_idx[stage].items():
                x[coord] = math.log(mean_pos)
        for _, coord in lay.latent_idx["e_pfs"].items():
            x[coord] = m_pfs

        U = spec.sd_upper
        for coord, val in sig.items():
            v = min(max(val, 1e-3), 0.5 * U)
            x[coord] = math.log(v / U) - math.log1p(-v / U)
        if jitter_rng is not None and jitter > 0:
            x = x + jitter * jitter_rng.uniform(-1.0, 1.0, size=self.dim)
        return x


def log_posterior(m, x):
    """Log posterior density and gradient on the unconstrained scale."""
    return m.logp_grad(x)
