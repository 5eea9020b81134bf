"""Distribution families for effectiveness and cost variables.

All continuous families are parameterized by their MEAN (phi) plus one
ancillary parameter, except the lognormal, whose location is the mean of the
log. Ancillaries: sd for gumbel/logistic/normal/gamma, shape for weibull,
sd of the log for lognormal; the exponential has none.

Three views of each density are provided:

* `family_lpdf` works on plain numbers/arrays and on AD variables alike
  (generic `diff` ops); it is the readable reference used by tests.
* `lpdf_grads` returns the lpdf and its analytic partials with respect to
  the location and the ancillary, vectorized in numpy. Fused model kernels
  call this in their forward and backward passes.
* `latent_lpdf_grads` is the density of x = exp(y) expressed in y, i.e.
  lpdf(e^y) + y, with partials in (y, location, ancillary): the form a
  positive-branch latent for a missing cell takes on the log scale.

`lpdf_grads` and `latent_lpdf_grads` must agree with `family_lpdf` exactly;
tests enforce it.
"""

import numpy as np
from scipy import special as sp

from . import diff

__all__ = [
    "EULER", "PFS_FAMILIES", "PPS_FAMILIES", "COST_FAMILIES", "ANCILLARY",
    "family_lpdf", "lpdf_grads", "latent_lpdf_grads",
    "sample_nat", "cdf_nat", "mean_nat",
]

# Euler-Mascheroni constant (Gumbel mean offset)
EULER = 0.5772156649015329

PFS_FAMILIES = ("gumbel", "logistic", "normal")
PPS_FAMILIES = ("exponential", "weibull", "normal")
COST_FAMILIES = ("lognormal", "gamma")

# ancillary parameter per family (None: fully determined by the mean)
ANCILLARY = {
    "gumbel": "sd",
    "logistic": "sd",
    "normal": "sd",
    "exponential": None,
    "weibull": "shape",
    "lognormal": "sd_log",
    "gamma": "sd",
}

_SQRT6_PI = np.sqrt(6.0) / np.pi
_SQRT3_PI = np.sqrt(3.0) / np.pi
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def family_lpdf(family, x, location, ancillary=None):
    """Log density; generic over numpy values and AD variables."""
    if family == "gumbel":
        b = ancillary * _SQRT6_PI
        z = (x - location) / b + EULER
        return -diff.log(b) - z - diff.exp(-z)
    if family == "logistic":
        s = ancillary * _SQRT3_PI
        z = (x - location) / s
        return -diff.log(s) - z - 2.0 * diff.logaddexp(0.0, -z)
    if family == "normal":
        return (-diff.log(ancillary) - _HALF_LOG_2PI
                - (x - location) ** 2 / (2.0 * ancillary ** 2))
    if family == "exponential":
        return -diff.log(location) - x / location
    if family == "weibull":
        k = ancillary
        log_lam = diff.log(location) - diff.lgamma(1.0 + 1.0 / k)
        log_x = diff.log(x)
        log_w = k * (log_x - log_lam)
        return diff.log(k) - k * log_lam + (k - 1.0) * log_x - diff.exp(log_w)
    if family == "lognormal":
        log_x = diff.log(x)
        return (-log_x - diff.log(ancillary) - _HALF_LOG_2PI
                - (log_x - location) ** 2 / (2.0 * ancillary ** 2))
    if family == "gamma":
        k = (location / ancillary) ** 2
        log_rate = diff.log(k) - diff.log(location)
        return (k * log_rate - diff.lgamma(k) + (k - 1.0) * diff.log(x)
                - diff.exp(log_rate) * x)
    raise ValueError("unknown family %r" % family)


def lpdf_grads(family, x, loc, anc=None):
    """(lpdf, d/dloc, d/danc) as arrays; d/danc is None for the exponential."""
    x = np.asarray(x, dtype=float)
    if family == "gumbel":
        b = anc * _SQRT6_PI
        z = (x - loc) / b + EULER
        emz = np.exp(-z)
        lp = -np.log(b) - z - emz
        dloc = (1.0 - emz) / b
        danc = (-1.0 + (1.0 - emz) * (z - EULER)) / anc
        return lp, dloc, danc
    if family == "logistic":
        s = anc * _SQRT3_PI
        z = (x - loc) / s
        lp = -np.log(s) - z - 2.0 * np.logaddexp(0.0, -z)
        t = 1.0 - 2.0 * sp.expit(-z)
        dloc = t / s
        danc = (-1.0 + t * z) / anc
        return lp, dloc, danc
    if family == "normal":
        d = x - loc
        lp = -np.log(anc) - _HALF_LOG_2PI - d * d / (2.0 * anc * anc)
        dloc = d / anc ** 2
        danc = (-1.0 + d * d / anc ** 2) / anc
        return lp, dloc, danc
    if family == "exponential":
        lp = -np.log(loc) - x / loc
        dloc = (-1.0 + x / loc) / loc
        return lp, dloc, None
    if family == "weibull":
        k = anc
        g1 = sp.gammaln(1.0 + 1.0 / k)
        log_lam = np.log(loc) - g1
        log_x = np.log(x)
        w = np.exp(k * (log_x - log_lam))
        lp = np.log(k) - k * log_lam + (k - 1.0) * log_x - w
        dloc = k * (w - 1.0) / loc
        danc = 1.0 / k + (1.0 - w) * (log_x - log_lam - sp.digamma(1.0 + 1.0 / k) / k)
        return lp, dloc, danc
    if family == "lognormal":
        d = np.log(x) - loc
        lp = -np.log(x) - np.log(anc) - _HALF_LOG_2PI - d * d / (2.0 * anc * anc)
        dloc = d / anc ** 2
        danc = (-1.0 + d * d / anc ** 2) / anc
        return lp, dloc, danc
    if family == "gamma":
        k = (loc / anc) ** 2
        rate = k / loc
        log_rate = np.log(rate)
        log_x = np.log(x)
        lp = k * log_rate - sp.gammaln(k) + (k - 1.0) * log_x - rate * x
        dk = log_rate - sp.digamma(k) + log_x
        dr = loc - x
        dloc = dk * (2.0 * loc / anc ** 2) + dr / anc ** 2
        danc = dk * (-2.0 * loc ** 2 / anc ** 3) + dr * (-2.0 * loc / anc ** 3)
        return lp, dloc, danc
    raise ValueError("unknown family %r" % family)


def latent_lpdf_grads(family, y, loc, anc=None):
    """Density of exp(y) plus the log Jacobian: (value, d/dy, d/dloc, d/danc).

    Only families that can serve as a positive hurdle branch are supported.
    """
    y = np.asarray(y, dtype=float)
    if family == "exponential":
        ey = np.exp(y)
        lp = -np.log(loc) - ey / loc + y
        dy = 1.0 - ey / loc
        dloc = (-1.0 + ey / loc) / loc
        return lp, dy, dloc, None
    if family == "weibull":
        k = anc
        log_lam = np.log(loc) - sp.gammaln(1.0 + 1.0 / k)
        w = np.exp(k * (y - log_lam))
        lp = np.log(k) - k * log_lam + k * y - w
        dy = k * (1.0 - w)
        dloc = k * (w - 1.0) / loc
        danc = 1.0 / k + (1.0 - w) * (y - log_lam - sp.digamma(1.0 + 1.0 / k) / k)
        return lp, dy, dloc, danc
    if family == "normal":
        ey = np.exp(y)
        d = ey - loc
        lp = -np.log(anc) - _HALF_LOG_2PI - d * d / (2.0 * anc * anc) + y
        dy = 1.0 - d * ey / anc ** 2
        dloc = d / anc ** 2
        danc = (-1.0 + d * d / anc ** 2) / anc
        return lp, dy, dloc, danc
    if family == "lognormal":
        d = y - loc
        lp = -np.log(anc) - _HALF_LOG_2PI - d * d / (2.0 * anc * anc)
        dy = -d / anc ** 2
        dloc = d / anc ** 2
        danc = (-1.0 + d * d / anc ** 2) / anc
        return lp, dy, dloc, danc
    if family == "gamma":
        k = (loc / anc) ** 2
        rate = k / loc
        log_rate = np.log(rate)
        ey = np.exp(y)
        lp = k * log_rate - sp.gammaln(k) + k * y - rate * ey
        dy = k - rate * ey
        dk = log_rate - sp.digamma(k) + y
        dr = loc - ey
        dloc = dk * (2.0 * loc / anc ** 2) + dr / anc ** 2
        danc = dk * (-2.0 * loc ** 2 / anc ** 3) + dr * (-2.0 * loc / anc ** 3)
        return lp, dy, dloc, danc
    raise ValueError("family %r cannot be a positive hurdle branch" % family)


# -- sampling and distribution functions ---------------------------------------


def _unit_open(rng, size):
    """Uniforms on the open interval (0, 1): safe for inversion formulas."""
    return rng.integers(1, 2 ** 53, size=size) / float(2 ** 53)


def sample_nat(family, rng, loc, anc=None, size=None):
    """Draw by inversion from the natural parameterization (gamma excepted)."""
    if size is None:
        size = np.shape(loc) if np.shape(loc) else None
    u = _unit_open(rng, size)
    if family == "gumbel":
        b = anc * _SQRT6_PI
        a = loc - b * EULER
        return a - b * np.log(-np.log(u))
    if family == "logistic":
        s = anc * _SQRT3_PI
        return loc + s * np.log(u / (1.0 - u))
    if family == "normal":
        return loc + anc * sp.ndtri(u)
    if family == "exponential":
        return -loc * np.log(u)
    if family == "weibull":
        k = anc
        lam = loc / np.exp(sp.gammaln(1.0 + 1.0 / k))
        return lam * (-np.log(u)) ** (1.0 / k)
    if family == "lognormal":
        return np.exp(loc + anc * sp.ndtri(u))
    if family == "gamma":
        k = (np.asarray(loc) / anc) ** 2
        return rng.gamma(shape=k, scale=np.asarray(anc) ** 2 / np.asarray(loc), size=size)
    raise ValueError("unknown family %r" % family)


def cdf_nat(family, x, loc, anc=None):
    x = np.asarray(x, dtype=float)
    if family == "gumbel":
        b = anc * _SQRT6_PI
        a = loc - b * EULER
        return np.exp(-np.exp(-(x - a) / b))
    if family == "logistic":
        s = anc * _SQRT3_PI
        return sp.expit((x - loc) / s)
    if family == "normal":
        return sp.ndtr((x - loc) / anc)
    if family == "exponential":
        return 1.0 - np.exp(-x / loc)
    if family == "weibull":
        k = anc
        lam = loc / np.exp(sp.gammaln(1.0 + 1.0 / k))
        return 1.0 - np.exp(-((x / lam) ** k))
    if family == "lognormal":
        return sp.ndtr((np.log(x) - loc) / anc)
    if family == "gamma":
        k = (loc / anc) ** 2
        return sp.gammainc(k, (k / loc) * x)
    raise ValueError("unknown family %r" % family)


def mean_nat(family, loc, anc=None):
    """Mean of the distribution under the natural parameterization."""
    if family == "lognormal":
        return np.exp(loc + anc ** 2 / 2.0)
    if family in ("gumbel", "logistic", "normal", "exponential", "weibull", "gamma"):
        return loc
    raise ValueError("unknown family %r" % family)
