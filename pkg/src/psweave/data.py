"""Trial dataset ingestion, validation, descriptives and missingness patterns.

The wide CSV schema is `id,arm,e_pfs,e_pps,c_drug,c_hos,c_ae[,x1,...,xp]`
with literal `NA` for missing cells. Missing values are carried as NaN in
memory; exact zeros in the semicontinuous variables are structural (point
mass), classified with tolerance ZERO_TOL to absorb decimal round-trips.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._util import fmt_float

__all__ = [
    "OUTCOME_VARS", "ZERO_TOL", "DataError", "PatientRecord", "TrialDataset",
    "PatternTable", "DescriptiveSummary", "load_trial_csv", "save_trial_csv",
    "missingness_patterns", "summarize", "load_dataset", "save_dataset",
    "is_missing", "make_dataset",
]

OUTCOME_VARS = ("e_pfs", "e_pps", "c_drug", "c_hos", "c_ae")
NONNEGATIVE_VARS = ("e_pps", "c_drug", "c_hos", "c_ae")
BASE_HEADER = ["id", "arm"] + list(OUTCOME_VARS)
ZERO_TOL = 1e-9


class DataError(ValueError):
    """Validation failure with a machine-parseable code, row and column."""

    def __init__(self, code, message, row=None, column=None):
        self.code = code
        self.row = row
        self.column = column
        loc = []
        if row is not None:
            loc.append("row=%s" % row)
        if column is not None:
            loc.append("col=%s" % column)
        suffix = (" [" + " ".join(loc) + "]") if loc else ""
        super().__init__("%s: %s%s" % (code, message, suffix))


def is_missing(x):
    return x is None or (isinstance(x, float) and math.isnan(x))


@dataclass(frozen=True)
class PatientRecord:
    """One patient's outcomes; NaN marks a missing cell."""

    id: str
    arm: int
    e_pfs: float
    e_pps: float
    c_drug: float
    c_hos: float
    c_ae: float
    covariates: tuple = ()

    def __post_init__(self):
        if self.arm not in (1, 2):
            raise DataError("E_ARM", "arm must be 1 or 2", column="arm")
        for name in NONNEGATIVE_VARS:
            v = getattr(self, name)
            if not is_missing(v) and v < 0:
                raise DataError("E_NEGATIVE", "observed %s must be >= 0" % name, column=name)

    def value(self, name):
        return getattr(self, name)

    def observed(self, name):
        return not is_missing(getattr(self, name))

    def complete(self):
        return all(self.observed(v) for v in OUTCOME_VARS)


@dataclass(frozen=True)
class TrialDataset:
    """Immutable two-arm collection of patient records."""

    records: tuple
    n_covariates: int = 0

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise DataError("E_DUP_ID", "duplicate id %r" % r.id, column="id")
            seen.add(r.id)
            if len(r.covariates) != self.n_covariates:
                raise DataError("E_COVARIATES", "record %r has %d covariates, expected %d"
                                % (r.id, len(r.covariates), self.n_covariates))
        for arm in (1, 2):
            if not any(r.arm == arm for r in self.records):
                raise DataError("E_EMPTY_ARM", "no records in arm %d" % arm)

    @property
    def n_1(self):
        return sum(1 for r in self.records if r.arm == 1)

    @property
    def n_2(self):
        return sum(1 for r in self.records if r.arm == 2)

    def arm_size(self, arm):
        return self.n_1 if arm == 1 else self.n_2

    def arm_records(self, arm):
        return tuple(r for r in self.records if r.arm == arm)

    def arm_values(self, arm, name):
        """Values of one variable in one arm, NaN where missing."""
        return np.array([getattr(r, name) for r in self.records if r.arm == arm], dtype=float)


def make_dataset(records):
    records = tuple(records)
    n_cov = len(records[0].covariates) if records else 0
    return TrialDataset(records, n_covariates=n_cov)


# -- CSV ----------------------------------------------------------------------


def _parse_cell(text, lineno, colname):
    text = text.strip()
    if text == "NA":
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise DataError("E_NUMERIC", "cannot parse %r as a number" % text,
                        row=lineno, column=colname) from None


def load_trial_csv(path):
    """Load and validate a wide outcome CSV into a TrialDataset."""
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError("E_HEADER", "empty file", row=1)
        header = [h.strip() for h in header]
        if header[:len(BASE_HEADER)] != BASE_HEADER:
            raise DataError("E_HEADER", "header must start with %s" % ",".join(BASE_HEADER), row=1)
        cov_names = header[len(BASE_HEADER):]
        for i, cname in enumerate(cov_names, start=1):
            if cname != "x%d" % i:
                raise DataError("E_HEADER", "covariate columns must be x1..xp, got %r" % cname, row=1)
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise DataError("E_ROW_WIDTH", "expected %d fields, got %d" % (width, len(row)),
                                row=lineno)
            pid = row[0].strip()
            if not pid:
                raise DataError("E_ID", "empty id", row=lineno, column="id")
            try:
                arm = int(row[1])
            except ValueError:
                raise DataError("E_NUMERIC", "cannot parse %r as an integer" % row[1],
                                row=lineno, column="arm") from None
            if arm not in (1, 2):
                raise DataError("E_ARM", "arm out of range at row %d" % lineno,
                                row=lineno, column="arm")
            vals = {}
            for j, name in enumerate(OUTCOME_VARS):
                vals[name] = _parse_cell(row[2 + j], lineno, name)
            for name in NONNEGATIVE_VARS:
                if not is_missing(vals[name]) and vals[name] < 0:
                    raise DataError("E_NEGATIVE", "observed %s must be >= 0" % name,
                                    row=lineno, column=name)
            covs = []
            for i, cname in enumerate(cov_names, start=1):
                c = _parse_cell(row[len(BASE_HEADER) + i - 1], lineno, cname)
                if is_missing(c):
                    raise DataError("E_COVARIATES", "covariates may not be NA",
                                    row=lineno, column=cname)
                covs.append(c)
            records.append(PatientRecord(pid, arm, vals["e_pfs"], vals["e_pps"],
                                         vals["c_drug"], vals["c_hos"], vals["c_ae"],
                                         tuple(covs)))
    if not records:
        raise DataError("E_EMPTY", "no data rows")
    return TrialDataset(tuple(records), n_covariates=len(cov_names))


def save_trial_csv(dataset, path):
    """Write a dataset back to CSV, losslessly for all observed values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cov_names = ["x%d" % i for i in range(1, dataset.n_covariates + 1)]
        writer.writerow(BASE_HEADER + cov_names)
        for r in dataset.records:
            row = [r.id, str(r.arm)]
            row += [fmt_float(getattr(r, v)) for v in OUTCOME_VARS]
            row += [fmt_float(c) for c in r.covariates]
            writer.writerow(row)


# spec-friendly aliases
load_dataset = load_trial_csv
save_dataset = save_trial_csv


# -- missingness patterns -------------------------------------------------------


@dataclass(frozen=True)
class PatternRow:
    observed: tuple          # bool per OUTCOME_VARS entry
    count_arm1: int
    count_arm2: int

    def pct(self, arm, arm_size):
        n = self.count_arm1 if arm == 1 else self.count_arm2
        return 100.0 * n / arm_size if arm_size else 0.0


@dataclass(frozen=True)
class PatternTable:
    rows: tuple
    n_1: int
    n_2: int

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([v + "_obs" for v in OUTCOME_VARS]
                            + ["n_arm1", "pct_arm1", "n_arm2", "pct_arm2"])
            for row in self.rows:
                writer.writerow([int(f) for f in row.observed]
                                + [row.count_arm1, "%.1f" % row.pct(1, self.n_1),
                                   row.count_arm2, "%.1f" % row.pct(2, self.n_2)])


def missingness_patterns(dataset):
    """Distinct observed/missing configurations with per-arm counts.

    The completer row (all observed) comes first; remaining rows sort by
    total count, largest first.
    """
    counts = {}
    for r in dataset.records:
        flags = tuple(r.observed(v) for v in OUTCOME_VARS)
        c = counts.setdefault(flags, [0, 0])
        c[r.arm - 1] += 1
    complete = tuple([True] * len(OUTCOME_VARS))
    rows = []
    if complete in counts:
        c = counts.pop(complete)
        rows.append(PatternRow(complete, c[0], c[1]))
    for flags, c in sorted(counts.items(), key=lambda kv: (-(kv[1][0] + kv[1][1]), kv[0])):
        rows.append(PatternRow(flags, c[0], c[1]))
    return PatternTable(tuple(rows), dataset.n_1, dataset.n_2)


# -- descriptive summary ---------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    arm: int
    variable: str
    n_observed: int
    mean: float
    sd: float              # NaN when fewer than 2 observed values
    sd_defined: bool
    zero_proportion: float  # NaN for e_pfs, where zeros are not structural


@dataclass(frozen=True)
class DescriptiveSummary:
    rows: tuple

    def row(self, arm, variable):
        for r in self.rows:
            if r.arm == arm and r.variable == variable:
                return r
        raise KeyError((arm, variable))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["arm", "variable", "n_observed", "mean", "sd",
                             "sd_defined", "zero_proportion"])
            for r in self.rows:
                writer.writerow([r.arm, r.variable, r.n_observed, fmt_float(r.mean),
                                 fmt_float(r.sd), int(r.sd_defined),
                                 fmt_float(r.zero_proportion)])


def summarize(dataset):
    """Per arm and variable: n observed, mean, sd, structural-zero proportion."""
    rows = []
    for arm in (1, 2):
        for name in OUTCOME_VARS:
            vals = dataset.arm_values(arm, name)
            obs = vals[~np.isnan(vals)]
            n = obs.size
            mean = float(np.mean(obs)) if n else float("nan")
            sd_defined = n >= 2
            sd = float(np.std(obs, ddof=1)) if sd_defined else float("nan")
            if name in NONNEGATIVE_VARS and n:
                zp = float(np.mean(np.abs(obs) < ZERO_TOL))
            else:
                zp = float("nan")
            rows.append(SummaryRow(arm, name, n, mean, sd, sd_defined, zp))
    return DescriptiveSummary(tuple(rows))
