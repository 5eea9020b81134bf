"""Quality-adjusted survival outcomes from longitudinal utility data.

A patient's utility scores u_j and survival weights s_j on a time grid t_j
(years since randomization) are reduced to scalar end points by trapezoidal
area under the curve:

    QALY = sum_j ((u_j + u_{j-1}) / 2) * delta_j,    delta_j = (t_j - t_{j-1}) / time_unit
    QAS  = sum_j ((u_j + u_{j-1}) / 2) * ((s_j + s_{j-1}) / 2) * delta_j

and QAS is partitioned at the progression time into a progression-free part
e_pfs and a post-progression part e_pps. When the progression time falls
strictly inside a grid interval, a grid point is inserted there by linear
interpolation of both u and s; the two parts then sum exactly to the QAS of
that refined series.
"""

import csv
from dataclasses import dataclass

import numpy as np

from ._util import fmt_float

__all__ = [
    "UtilitySeries", "auc_qaly", "qas", "partition_qas",
    "read_series_csv", "derive_outcomes", "SeriesError",
]

SERIES_HEADER = ["id", "arm", "time_years", "utility", "survival_weight", "progressed", "dead"]


class SeriesError(ValueError):
    """Invalid utility series input; message names the offending row/field."""


@dataclass(frozen=True)
class UtilitySeries:
    """Utility and survival weights on a strictly increasing time grid.

    times: years since randomization, first point at 0.
    utilities: one score per time, may be negative (states worse than death).
    survival: Eq-2 weights, one per time; may be None when only QALY is needed.
    progression_time, death_time: event times in years, or None.
    """

    times: np.ndarray
    utilities: np.ndarray
    survival: np.ndarray = None
    progression_time: float = None
    death_time: float = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        u = np.asarray(self.utilities, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "utilities", u)
        if t.ndim != 1 or t.size < 1:
            raise SeriesError("times must be a non-empty 1-d sequence")
        if u.shape != t.shape:
            raise SeriesError("utilities length does not match times")
        if t[0] != 0.0:
            raise SeriesError("first time point must be 0")
        if np.any(np.diff(t) <= 0):
            raise SeriesError("times must be strictly increasing")
        if self.survival is not None:
            s = np.asarray(self.survival, dtype=float)
            object.__setattr__(self, "survival", s)
            if s.shape != t.shape:
                raise SeriesError("survival length does not match times")
        if self.death_time is not None:
            dead = t >= self.death_time - 1e-12
            if np.any(np.abs(u[dead]) > 1e-12):
                raise SeriesError("utilities after death_time must be 0")

    def with_grid_point(self, t_new):
        """Series with t_new inserted by linear interpolation of u (and s).

        No-op when t_new already lies on the grid.
        """
        t = self.times
        if t_new < t[0] or t_new > t[-1]:
            raise SeriesError("grid point outside the observed time range")
        if np.any(np.isclose(t, t_new, rtol=0, atol=1e-12)):
            return self
        k = int(np.searchsorted(t, t_new))
        w = (t_new - t[k - 1]) / (t[k] - t[k - 1])
        u_new = (1 - w) * self.utilities[k - 1] + w * self.utilities[k]
        times = np.insert(t, k, t_new)
        utilities = np.insert(self.utilities, k, u_new)
        survival = None
        if self.survival is not None:
            s_new = (1 - w) * self.survival[k - 1] + w * self.survival[k]
            survival = np.insert(self.survival, k, s_new)
        return UtilitySeries(times, utilities, survival,
                             self.progression_time, self.death_time)


def auc_qaly(series, time_unit=1.0):
    """Trapezoidal QALY of a series, in multiples of time_unit years."""
    t, u = series.times, series.utilities
    if t.size < 2:
        raise SeriesError("need at least 2 time points")
    if time_unit <= 0:
        raise SeriesError("time_unit must be positive")
    delta = np.diff(t) / time_unit
    return float(np.sum((u[1:] + u[:-1]) / 2.0 * delta))


def qas(series, time_unit=1.0):
    """Survival-weighted QALY: trapezoids in u multiplied by trapezoids in s."""
    if series.survival is None:
        raise SeriesError("series has no survival weights")
    t, u, s = series.times, series.utilities, series.survival
    if t.size < 2:
        raise SeriesError("need at least 2 time points")
    if time_unit <= 0:
        raise SeriesError("time_unit must be positive")
    delta = np.diff(t) / time_unit
    return float(np.sum((u[1:] + u[:-1]) / 2.0 * (s[1:] + s[:-1]) / 2.0 * delta))


def _segment(series, lo_idx, hi_idx):
    surv = None if series.survival is None else series.survival[lo_idx:hi_idx + 1]
    t = series.times[lo_idx:hi_idx + 1]
    # re-anchor at 0 to satisfy the constructor; durations are what matter
    return UtilitySeries(t - t[0], series.utilities[lo_idx:hi_idx + 1], surv)


def partition_qas(series, time_unit=1.0):
    """Split QAS at the progression time: returns (e_pfs, e_pps).

    The components sum exactly to qas() of the series with the progression
    point on its grid (identical to the original series when progression
    falls on an existing grid point).
    """
    tau = series.progression_time
    if tau is None:
        raise SeriesError("progression_time is not set")
    if tau < 0 or tau > series.times[-1]:
        raise SeriesError("progression_time outside the observed time range")
    refined = series.with_grid_point(tau)
    k = int(np.argmin(np.abs(refined.times - tau)))
    e_pfs = qas(_segment(refined, 0, k), time_unit) if k > 0 else 0.0
    e_pps = qas(_segment(refined, k, refined.times.size - 1), time_unit) \
        if k < refined.times.size - 1 else 0.0
    return e_pfs, e_pps


# -- long-format CSV ingestion -------------------------------------------------


def read_series_csv(path):
    """Read per-patient utility series from long-format CSV.

    Returns (series_by_id, arm_by_id); ids keep file order. Progression and
    death times are the first times with flag 1.
    """
    rows_by_id = {}
    arm_by_id = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SERIES_HEADER:
            raise SeriesError("bad series header: expected %s" % ",".join(SERIES_HEADER))
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(SERIES_HEADER):
                raise SeriesError("row %d: expected %d fields" % (lineno, len(SERIES_HEADER)))
            pid = row[0]
            try:
                arm = int(row[1])
                t, u, s = float(row[2]), float(row[3]), float(row[4])
                prog, dead = int(row[5]), int(row[6])
            except ValueError:
                raise SeriesError("row %d: non-numeric field" % lineno) from None
            if arm not in (1, 2):
                raise SeriesError("row %d: arm out of range" % lineno)
            if prog not in (0, 1) or dead not in (0, 1):
                raise SeriesError("row %d: progressed/dead must be 0 or 1" % lineno)
            if pid in arm_by_id and arm_by_id[pid] != arm:
                raise SeriesError("row %d: arm differs from earlier rows of id %s" % (lineno, pid))
            arm_by_id[pid] = arm
            rows_by_id.setdefault(pid, []).append((t, u, s, prog, dead))

    series_by_id = {}
    for pid, rows in rows_by_id.items():
        rows.sort(key=lambda r: r[0])
        t = np.array([r[0] for r in rows])
        u = np.array([r[1] for r in rows])
        s = np.array([r[2] for r in rows])
        prog_times = [r[0] for r in rows if r[3] == 1]
        death_times = [r[0] for r in rows if r[4] == 1]
        series_by_id[pid] = UtilitySeries(
            t, u, s,
            progression_time=prog_times[0] if prog_times else None,
            death_time=death_times[0] if death_times else None,
        )
    return series_by_id, arm_by_id


def derive_outcomes(series_by_id, arm_by_id, time_unit=1.0):
    """Per-patient (id, arm, e_pfs, e_pps) from utility series.

    Patients with no recorded progression accrue all QAS before progression:
    e_pfs is the total QAS and e_pps is a structural zero.
    """
    out = []
    for pid, series in series_by_id.items():
        if series.progression_time is None:
            e_pfs, e_pps = qas(series, time_unit), 0.0
        else:
            e_pfs, e_pps = partition_qas(series, time_unit)
        out.append((pid, arm_by_id[pid], e_pfs, e_pps))
    return out
