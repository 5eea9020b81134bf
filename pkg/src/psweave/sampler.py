"""Hamiltonian Monte Carlo with dynamic trajectory doubling.

Momentum is Gaussian under a diagonal metric. Trajectories grow by doubling
in a random direction and stop at an endpoint U-turn (velocities taken as
M^-1 p) or a divergence (energy error above 1000); the returned draw is
picked by multinomial weighting over the visited states, favoring the newer
subtree the way progressive samplers do. A fixed-length integrator is
available as a config switch for targets where trajectory adaptation is not
wanted.

Warmup follows the usual three-phase window schedule: a step-size-only
opening buffer, a sequence of doubling covariance windows (each ends by
re-estimating the diagonal metric from the window's draws and restarting
step-size search), and a closing step-size-only buffer. The step size adapts
by dual averaging toward a target acceptance statistic; after warmup both
the step size and the metric are frozen.

The target object needs: `dim`, `logp_grad(x) -> (float, array)`,
`initial_point(jitter_rng=None, jitter=0.0)`, `constrain(matrix)`, and
`param_names`. `ModelInstance` provides these; tests use synthetic targets.

Chains run serially or in a process pool; per-chain RNG streams are derived
from (seed, chain index), so results do not depend on scheduling.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._util import STREAM_CHAIN, fmt_float, rng_stream, worker_count

__all__ = ["SamplerConfig", "Chains", "sample", "leapfrog",
           "write_draws_csv", "read_draws_csv"]

DIVERGENCE_ENERGY = 1000.0


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 2
    iterations: int = 15000
    warmup: int = 3000
    target_accept: float = 0.8
    max_doublings: int = 10
    seed: int = 0
    trajectory: str = "dynamic"     # "dynamic" or "fixed"
    fixed_steps: int = 32
    init_jitter: float = 1.0
    workers: int | None = None
    # dual-averaging constants
    da_gamma: float = 0.05
    da_t0: float = 10.0
    da_kappa: float = 0.75

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("need 0 <= warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.max_doublings < 1:
            raise ValueError("max_doublings must be >= 1")
        if self.trajectory not in ("dynamic", "fixed"):
            raise ValueError("trajectory must be 'dynamic' or 'fixed'")
        if self.trajectory == "fixed" and self.fixed_steps < 1:
            raise ValueError("fixed_steps must be >= 1")


@dataclass(frozen=True)
class Chains:
    """Post-warmup draws plus per-draw and per-chain sampler state."""

    names: tuple
    constrained: tuple          # per chain: (n_draws, dim)
    unconstrained: tuple | None
    divergent: tuple            # per chain: bool (n_draws,)
    energy: tuple               # per chain: float (n_draws,)
    accept_stat: tuple | None
    step_size: tuple | None
    metric: tuple | None        # per chain: diagonal of M^-1
    warmup: int = 0

    @property
    def n_chains(self):
        return len(self.constrained)

    @property
    def n_draws(self):
        return self.constrained[0].shape[0]

    @property
    def dim(self):
        return self.constrained[0].shape[1]

    @property
    def divergence_rate(self):
        total = sum(int(d.sum()) for d in self.divergent)
        return total / float(self.n_chains * self.n_draws)

    @property
    def unreliable(self):
        """More than 10% divergent post-warmup draws."""
        return self.divergence_rate > 0.10

    def index_of(self, name):
        return self.names.index(name)

    def matrix(self, param):
        """Constrained draws for one parameter, shaped (chains, draws)."""
        j = param if isinstance(param, int) else self.index_of(param)
        return np.stack([c[:, j] for c in self.constrained])

    def stacked(self):
        """All constrained draws pooled across chains, (chains*draws, dim)."""
        return np.concatenate(self.constrained, axis=0)


# -- integrator ----------------------------------------------------------------


def leapfrog(m, state, eps, n_steps=1, inv_metric=None):
    """Integrate Hamilton's equations for n_steps of size eps.

    state is (position, momentum); returns the advanced (position, momentum).
    The diagonal metric enters as the vector diag(M^-1) (defaults to ones).
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    q, p = (np.array(s, dtype=float, copy=True) for s in state)
    inv = np.ones_like(q) if inv_metric is None else np.asarray(inv_metric)
    _, grad = m.logp_grad(q)
    for _ in range(n_steps):
        p = p + 0.5 * eps * grad
        q = q + eps * inv * p
        _, grad = m.logp_grad(q)
        p = p + 0.5 * eps * grad
    return q, p


def _kinetic(p, inv_metric):
    # momentum blows up on divergent trajectories; inf energy is the signal
    with np.errstate(over="ignore"):
        return 0.5 * float(np.dot(p * p, inv_metric))


def _step(m, q, p, grad, eps, inv_metric):
    """One leapfrog step carrying the gradient; eps may be negative."""
    p1 = p + 0.5 * eps * grad
    q1 = q + eps * inv_metric * p1
    val1, grad1 = m.logp_grad(q1)
    p1 = p1 + 0.5 * eps * grad1
    return q1, p1, val1, grad1


# -- dynamic trajectory ------------------------------------------------------------


class _Tree:
    __slots__ = ("q_minus", "p_minus", "grad_minus", "q_plus", "p_plus",
                 "grad_plus", "q_prop", "h_prop", "log_w", "sum_alpha",
                 "n_alpha", "stop", "diverged")


def _uturn(q_minus, q_plus, p_minus, p_plus, inv_metric):
    dq = q_plus - q_minus
    return (np.dot(dq, inv_metric * p_minus) < 0.0
            or np.dot(dq, inv_metric * p_plus) < 0.0)


def _build_tree(m, depth, q, p, grad, direction, eps, inv_metric, h0, rng):
    if depth == 0:
        q1, p1, val1, grad1 = _step(m, q, p, grad, direction * eps, inv_metric)
        h1 = -val1 + _kinetic(p1, inv_metric)
        delta = h1 - h0 if math.isfinite(h1) else math.inf
        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q1
        t.p_minus = t.p_plus = p1
        t.grad_minus = t.grad_plus = grad1
        t.h_prop = h1
        t.diverged = delta > DIVERGENCE_ENERGY
        t.stop = t.diverged
        t.log_w = -math.inf if t.diverged else -delta
        t.sum_alpha = math.exp(min(0.0, -delta)) if math.isfinite(delta) else 0.0
        t.n_alpha = 1
        return t

    first = _build_tree(m, depth - 1, q, p, grad, direction, eps, inv_metric,
                        h0, rng)
    if first.stop:
        return first
    if direction > 0:
        second = _build_tree(m, depth - 1, first.q_plus, first.p_plus,
                             first.grad_plus, direction, eps, inv_metric,
                             h0, rng)
        first.q_plus = second.q_plus
        first.p_plus = second.p_plus
        first.grad_plus = second.grad_plus
    else:
        second = _build_tree(m, depth - 1, first.q_minus, first.p_minus,
                             first.grad_minus, direction, eps, inv_metric,
                             h0, rng)
        first.q_minus = second.q_minus
        first.p_minus = second.p_minus
        first.grad_minus = second.grad_minus
    total = np.logaddexp(first.log_w, second.log_w)
    if (math.isfinite(second.log_w)
            and math.log(max(rng.random(), 1e-300)) < second.log_w - total):
        first.q_prop = second.q_prop
        first.h_prop = second.h_prop
    first.log_w = total
    first.sum_alpha += second.sum_alpha
    first.n_alpha += second.n_alpha
    first.diverged = first.diverged or second.diverged
    first.stop = (second.stop
                  or _uturn(first.q_minus, first.q_plus, first.p_minus,
                            first.p_plus, inv_metric))
    return first


def _nuts_transition(m, q0, val0, grad0, eps, inv_metric, rng, max_doublings):
    dim = q0.size
    p0 = rng.standard_normal(dim) / np.sqrt(inv_metric)
    h0 = -val0 + _kinetic(p0, inv_metric)

    q_minus = q_plus = q0
    p_minus = p_plus = p0
    grad_minus = grad_plus = grad0
    q_prop, h_prop = q0, h0
    log_w = 0.0
    sum_alpha, n_alpha = 0.0, 0
    diverged = False

    for depth in range(max_doublings):
        direction = 1 if rng.random() < 0.5 else -1
        if direction > 0:
            sub = _build_tree(m, depth, q_plus, p_plus, grad_plus, 1, eps,
                              inv_metric, h0, rng)
            q_plus, p_plus, grad_plus = sub.q_plus, sub.p_plus, sub.grad_plus
        else:
            sub = _build_tree(m, depth, q_minus, p_minus, grad_minus, -1, eps,
                              inv_metric, h0, rng)
            q_minus, p_minus, grad_minus = sub.q_minus, sub.p_minus, sub.grad_minus
        sum_alpha += sub.sum_alpha
        n_alpha += sub.n_alpha
        diverged = diverged or sub.diverged
        if sub.stop:
            break
        # progressive biased choice: favor the fresh subtree
        if math.log(max(rng.random(), 1e-300)) < sub.log_w - log_w:
            q_prop, h_prop = sub.q_prop, sub.h_prop
        log_w = np.logaddexp(log_w, sub.log_w)
        if _uturn(q_minus, q_plus, p_minus, p_plus, inv_metric):
            break
    accept = sum_alpha / max(n_alpha, 1)
    return q_prop, h_prop, diverged, accept


def _fixed_transition(m, q0, val0, grad0, eps, inv_metric, rng, n_steps):
    p0 = rng.standard_normal(q0.size) / np.sqrt(inv_metric)
    h0 = -val0 + _kinetic(p0, inv_metric)
    q, p, grad = q0, p0, grad0
    diverged = False
    for _ in range(n_steps):
        q, p, val, grad = _step(m, q, p, grad, eps, inv_metric)
        h = -val + _kinetic(p, inv_metric)
        if not math.isfinite(h) or h - h0 > DIVERGENCE_ENERGY:
            diverged = True
            break
    if diverged:
        return q0, h0, True, 0.0
    alpha = math.exp(min(0.0, h0 - h))
    if rng.random() < alpha:
        return q, h, False, alpha
    return q0, h0, False, alpha


# -- adaptation -----------------------------------------------------------------


def _find_epsilon(m, q, rng, inv_metric):
    """Crude bracketing of a step size with one-step acceptance near 1/2."""
    val0, grad0 = m.logp_grad(q)
    p0 = rng.standard_normal(q.size) / np.sqrt(inv_metric)
    h0 = -val0 + _kinetic(p0, inv_metric)
    eps = 1.0

    def log_ratio(e):
        _, p1, val1, _ = _step(m, q, p0, grad0, e, inv_metric)
        h1 = -val1 + _kinetic(p1, inv_metric)
        return h0 - h1 if math.isfinite(h1) else -math.inf

    direction = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(100):
        eps_next = eps * (2.0 ** direction)
        if not 1e-10 < eps_next < 1e10:
            break
        if direction * log_ratio(eps_next) <= direction * math.log(0.5):
            if direction > 0:
                eps = eps_next  # keep the last size still above 1/2
            break
        eps = eps_next
    return eps


class _DualAveraging:
    def __init__(self, eps0, target, gamma, t0, kappa):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.t = 0

    def update(self, alpha):
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - alpha)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def averaged(self):
        return math.exp(self.log_eps_bar)


def _metric_windows(warmup):
    """(start, end) spans of the covariance windows within warmup."""
    if warmup < 20:
        return []
    if warmup >= 150:
        init, term, base = 75, 50, 25
    else:
        init = max(1, int(round(0.15 * warmup)))
        term = max(1, int(round(0.10 * warmup)))
        base = warmup - term - init
    windows = []
    start, width = init, base
    while start < warmup - term:
        end = start + width
        if start + 3 * width > warmup - term:
            end = warmup - term    # absorb the remainder into the last window
        windows.append((start, min(end, warmup - term)))
        start = end
        width *= 2
    return windows


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def add(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def shrunk_variance(self):
        n = self.n
        var = self.m2 / (n - 1)
        w = n / (n + 5.0)
        return w * var + (1.0 - w) * 1e-3


# -- chain driver -----------------------------------------------------------------


def _run_chain(m, cfg, chain_idx):
    rng = rng_stream(cfg.seed, STREAM_CHAIN, chain_idx)
    q = m.initial_point(jitter_rng=rng, jitter=cfg.init_jitter)
    val, grad = m.logp_grad(q)
    if not math.isfinite(val):
        q = m.initial_point()
        val, grad = m.logp_grad(q)
    if not math.isfinite(val):
        raise RuntimeError("no finite starting point for chain %d" % chain_idx)

    inv_metric = np.ones(m.dim)
    eps = _find_epsilon(m, q, rng, inv_metric)
    da = _DualAveraging(eps, cfg.target_accept, cfg.da_gamma, cfg.da_t0,
                        cfg.da_kappa)
    windows = _metric_windows(cfg.warmup)
    window_pos = 0
    welford = None

    n_keep = cfg.iterations - cfg.warmup
    draws = np.empty((n_keep, m.dim))
    divergent = np.zeros(n_keep, dtype=bool)
    energy = np.empty(n_keep)
    accept = np.empty(n_keep)

    def transition(q, val, grad):
        if cfg.trajectory == "dynamic":
            return _nuts_transition(m, q, val, grad, eps, inv_metric, rng,
                                    cfg.max_doublings)
        return _fixed_transition(m, q, val, grad, eps, inv_metric, rng,
                                 cfg.fixed_steps)

    for it in range(cfg.iterations):
        q_new, h, div, alpha = transition(q, val, grad)
        if q_new is not q:
            q = q_new
            val, grad = m.logp_grad(q)
        if it < cfg.warmup:
            eps = da.update(alpha)
            if window_pos < len(windows):
                start, end = windows[window_pos]
                if it >= start:
                    if welford is None:
                        welford = _Welford(m.dim)
                    welford.add(q)
                    if it + 1 == end:
                        if welford.n >= 2:
                            inv_metric = welford.shrunk_variance()
                        welford = None
                        window_pos += 1
                        if window_pos == 1 and len(windows) > 1:
                            # the first metric estimate replaces the unit
                            # metric, so the step-size bracket moves by
                            # orders of magnitude: re-bracket once. Later
                            # windows only refine the metric; keeping one
                            # long averaging segment from here on lets the
                            # frozen step size converge instead of ending on
                            # a short restarted transient.
                            eps = _find_epsilon(m, q, rng, inv_metric)
                            da = _DualAveraging(eps, cfg.target_accept,
                                                cfg.da_gamma, cfg.da_t0,
                                                cfg.da_kappa)
            if it + 1 == cfg.warmup:
                eps = da.averaged
        else:
            j = it - cfg.warmup
            draws[j] = q
            divergent[j] = div
            energy[j] = h
            accept[j] = alpha
    return draws, divergent, energy, accept, eps, inv_metric


def _chain_task(args):
    m, cfg, idx = args
    return _run_chain(m, cfg, idx)


def sample(m, cfg):
    """Run the configured chains and collect post-warmup draws."""
    if m.dim < 1:
        raise ValueError("model dimension must be >= 1")
    workers = worker_count(cfg.workers)
    tasks = [(m, cfg, i) for i in range(cfg.chains)]
    if workers > 1 and cfg.chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.chains)) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]

    unconstrained = tuple(r[0] for r in results)
    return Chains(
        names=tuple(m.param_names),
        constrained=tuple(m.constrain(r[0]) for r in results),
        unconstrained=unconstrained,
        divergent=tuple(r[1] for r in results),
        energy=tuple(r[2] for r in results),
        accept_stat=tuple(r[3] for r in results),
        step_size=tuple(r[4] for r in results),
        metric=tuple(r[5] for r in results),
        warmup=cfg.warmup,
    )


# -- draw file IO -------------------------------------------------------------------


def write_draws_csv(path, chains):
    """One row per retained draw: chain, iter, divergent, energy, parameters.

    `iter` is the absolute 1-based iteration index (warmup included), so a
    reader can tell where in the run a draw came from.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iter", "divergent", "energy"]
                        + list(chains.names))
        for c in range(chains.n_chains):
            draws = chains.constrained[c]
            for j in range(draws.shape[0]):
                writer.writerow(
                    [c + 1, chains.warmup + j + 1,
                     int(chains.divergent[c][j]),
                     fmt_float(chains.energy[c][j])]
                    + [fmt_float(v) for v in draws[j]])


def read_draws_csv(path):
    """Rebuild a Chains view (constrained only) from a draws CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["chain", "iter", "divergent", "energy"]:
            raise ValueError("unrecognized draws header in %s" % path)
        names = tuple(header[4:])
        per_chain = {}
        first_iter = {}
        for row in reader:
            c = int(row[0])
            rows, div, en = per_chain.setdefault(c, ([], [], []))
            if c not in first_iter:
                first_iter[c] = int(row[1])
            div.append(bool(int(row[2])))
            en.append(float(row[3]))
            rows.append([float(v) for v in row[4:]])
    order = sorted(per_chain)
    warmup = min(first_iter.values()) - 1 if first_iter else 0
    return Chains(
        names=names,
        constrained=tuple(np.array(per_chain[c][0]) for c in order),
        unconstrained=None,
        divergent=tuple(np.array(per_chain[c][1], dtype=bool) for c in order),
        energy=tuple(np.array(per_chain[c][2]) for c in order),
        accept_stat=None,
        step_size=None,
        metric=None,
        warmup=warmup,
    )
