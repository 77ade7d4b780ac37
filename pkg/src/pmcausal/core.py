"""Domain types shared by every estimator and experiment.

Cohorts are stored column-wise (numpy arrays) for fast estimation, with a
record-level view for construction and IO. All types are immutable after
construction and safe to share across threads or processes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MISSING = -1  # sentinel for absent arm/version codes

__all__ = [
    "SchemaError",
    "DataError",
    "EstimationError",
    "CovariateSpec",
    "ArmSpec",
    "UnitRecord",
    "CohortTable",
    "DecisionRule",
    "PMAlgorithm",
    "VersionDistribution",
    "PositivityCell",
    "PositivityReport",
    "StudySpec",
    "eligibility",
    "restrict_eligible",
    "positivity_check",
    "load_study",
    "read_cohort_csv",
    "write_cohort_csv",
]


class SchemaError(ValueError):
    """Input does not match the declared study schema."""


class DataError(ValueError):
    """Values are syntactically valid but semantically impossible."""


class EstimationError(RuntimeError):
    """An estimator precondition failed on this cohort.

    Carries an optional list of offending (stratum, version) cells.
    """

    def __init__(self, message: str, cells: Sequence[tuple] = ()):  # noqa: D107
        super().__init__(message)
        self.cells = tuple(cells)


@dataclass(frozen=True)
class CovariateSpec:
    """Declaration of one covariate column.

    ``role`` is "C" for direct outcome causes or "W" for covariates that only
    drive treatment choice. ``kind`` is "binary", "categorical" or
    "continuous"; categorical values are stored as indexes into ``levels``.
    """

    name: str
    role: str = "C"
    kind: str = "binary"
    levels: tuple[str, ...] = ()
    prevalence: float | None = None

    def __post_init__(self):
        if self.role not in ("C", "W"):
            raise SchemaError(f"covariate {self.name!r}: role must be 'C' or 'W', got {self.role!r}")
        if self.kind not in ("binary", "categorical", "continuous"):
            raise SchemaError(f"covariate {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical" and len(self.levels) < 2:
            raise SchemaError(f"covariate {self.name!r}: categorical needs >=2 levels")
        if self.prevalence is not None and not (0.0 < self.prevalence < 1.0):
            raise SchemaError(f"covariate {self.name!r}: prevalence must lie in (0,1)")

    @property
    def discrete(self) -> bool:
        return self.kind in ("binary", "categorical")


@dataclass(frozen=True)
class ArmSpec:
    """Version sets of the two treatment arms.

    The control arm (arm 0) usually holds a single reference version; the
    treated arm (arm 1) holds the pool the assignment algorithm selects from.
    The two sets must be disjoint, so a version identifies its arm.
    """

    control_versions: tuple[str, ...]
    treated_versions: tuple[str, ...]

    def __post_init__(self):
        if not self.control_versions:
            raise SchemaError("arm_spec: control arm needs at least one version")
        if not self.treated_versions:
            raise SchemaError("arm_spec: treated arm needs at least one version")
        overlap = set(self.control_versions) & set(self.treated_versions)
        if overlap:
            raise SchemaError(f"arm_spec: versions in both arms: {sorted(overlap)}")
        dup = len(self.all_versions) != len(set(self.all_versions))
        if dup:
            raise SchemaError("arm_spec: duplicate version label within an arm")

    @property
    def all_versions(self) -> tuple[str, ...]:
        return self.control_versions + self.treated_versions

    def arm_of(self, version: str) -> int:
        if version in self.control_versions:
            return 0
        if version in self.treated_versions:
            return 1
        raise SchemaError(f"unknown version {version!r}")

    def index_of(self, version: str) -> int:
        try:
            return self.all_versions.index(version)
        except ValueError:
            raise SchemaError(f"unknown version {version!r}") from None

    def arm_of_index(self, idx: int) -> int:
        return 0 if idx < len(self.control_versions) else 1

    @property
    def treated_indices(self) -> tuple[int, ...]:
        base = len(self.control_versions)
        return tuple(range(base, base + len(self.treated_versions)))

    @property
    def control_indices(self) -> tuple[int, ...]:
        return tuple(range(len(self.control_versions)))


@dataclass(frozen=True)
class UnitRecord:
    """One study unit in record form (IO boundary only)."""

    unit_id: str
    profile: Mapping[str, float]
    observed_arm: int | None = None
    observed_version: str | None = None
    observed_outcome: float | None = None
    counterfactuals: Mapping[str, float] = field(default_factory=dict)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CohortTable:
    """Rectangular unit-level data with optional counterfactual columns.

    ``covariates`` is an (n, d) float matrix in ``covariate_specs`` order.
    ``version_idx`` indexes into ``arm_spec.all_versions`` (-1 when missing)
    and ``arm`` is 0/1/-1. ``counterfactuals`` is (n, n_versions) with NaN
    for unavailable entries, or None when no oracle columns exist.
    """

    covariate_specs: tuple[CovariateSpec, ...]
    arm_spec: ArmSpec
    outcome_kind: str
    unit_ids: tuple[str, ...]
    covariates: np.ndarray
    arm: np.ndarray
    version_idx: np.ndarray
    outcome: np.ndarray
    counterfactuals: np.ndarray | None = None

    def __post_init__(self):
        if self.outcome_kind not in ("continuous", "binary"):
            raise SchemaError(f"outcome_kind must be continuous or binary, got {self.outcome_kind!r}")
        n = len(self.unit_ids)
        if self.covariates.shape != (n, len(self.covariate_specs)):
            raise SchemaError("covariate matrix shape does not match unit count / spec")
        for a, name in ((self.arm, "arm"), (self.version_idx, "version_idx")):
            if a.shape != (n,):
                raise SchemaError(f"{name} column has wrong length")
        if self.outcome.shape != (n,):
            raise SchemaError("outcome column has wrong length")
        if self.counterfactuals is not None and self.counterfactuals.shape != (n, self.n_versions):
            raise SchemaError("counterfactual matrix has wrong shape")
        if len(set(self.unit_ids)) != n:
            raise SchemaError("duplicate unit_id")
        self._validate_values()
        _readonly(self.covariates)
        _readonly(self.arm)
        _readonly(self.version_idx)
        _readonly(self.outcome)
        if self.counterfactuals is not None:
            _readonly(self.counterfactuals)

    def _validate_values(self):
        if not np.all(np.isfinite(self.covariates)):
            raise SchemaError("non-finite covariate value")
        for j, spec in enumerate(self.covariate_specs):
            col = self.covariates[:, j]
            if spec.kind == "binary" and not np.all(np.isin(col, (0.0, 1.0))):
                raise SchemaError(f"covariate {spec.name!r}: binary values must be 0/1")
            if spec.kind == "categorical":
                if not np.all((col >= 0) & (col < len(spec.levels)) & (col == np.floor(col))):
                    raise SchemaError(f"covariate {spec.name!r}: level index out of range")
        has_version = self.version_idx >= 0
        if np.any(self.version_idx >= self.n_versions):
            raise SchemaError("version index out of range")
        # a present version pins the arm; a present arm must agree
        derived = np.where(
            has_version,
            (self.version_idx >= len(self.arm_spec.control_versions)).astype(np.int8),
            MISSING,
        )
        bad = has_version & (self.arm != MISSING) & (self.arm != derived)
        if np.any(bad):
            raise SchemaError(f"unit {self.unit_ids[int(np.argmax(bad))]!r}: version not in the version set of its arm")
        if np.any((self.arm != MISSING) & ~np.isin(self.arm, (0, 1))):
            raise SchemaError("arm values must be 0, 1 or missing")
        observed = ~np.isnan(self.outcome)
        if self.outcome_kind == "binary" and not np.all(np.isin(self.outcome[observed], (0.0, 1.0))):
            raise SchemaError("binary outcomes must be 0/1")
        if self.counterfactuals is not None:
            both = observed & has_version
            if np.any(both):
                rows = np.flatnonzero(both)
                cf_at_obs = self.counterfactuals[rows, self.version_idx[rows]]
                known = ~np.isnan(cf_at_obs)
                mismatch = known & (cf_at_obs != self.outcome[rows])
                if np.any(mismatch):
                    uid = self.unit_ids[int(rows[np.argmax(mismatch)])]
                    raise SchemaError(
                        f"unit {uid!r}: counterfactual of the observed version differs from the observed outcome"
                    )

    # -- basic accessors -------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    def __len__(self) -> int:
        return self.n

    @property
    def n_versions(self) -> int:
        return len(self.arm_spec.all_versions)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.covariate_specs)

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.covariate_names.index(name)
        except ValueError:
            raise SchemaError(f"unknown covariate {name!r}") from None
        return self.covariates[:, j]

    def cf_available(self, version: str) -> bool:
        if self.counterfactuals is None:
            return False
        col = self.counterfactuals[:, self.arm_spec.index_of(version)]
        return bool(np.all(~np.isnan(col)))

    # -- derived tables --------------------------------------------------

    def subset(self, indices: np.ndarray | Sequence[int]) -> "CohortTable":
        idx = np.asarray(indices, dtype=np.intp)
        return CohortTable(
            covariate_specs=self.covariate_specs,
            arm_spec=self.arm_spec,
            outcome_kind=self.outcome_kind,
            unit_ids=tuple(self.unit_ids[i] for i in idx),
            covariates=self.covariates[idx].copy(),
            arm=self.arm[idx].copy(),
            version_idx=self.version_idx[idx].copy(),
            outcome=self.outcome[idx].copy(),
            counterfactuals=None if self.counterfactuals is None else self.counterfactuals[idx].copy(),
        )

    def mask_counterfactuals(self) -> "CohortTable":
        """Return the observational view of an oracle cohort."""
        if self.counterfactuals is None:
            return self
        return CohortTable(
            covariate_specs=self.covariate_specs,
            arm_spec=self.arm_spec,
            outcome_kind=self.outcome_kind,
            unit_ids=self.unit_ids,
            covariates=self.covariates.copy(),
            arm=self.arm.copy(),
            version_idx=self.version_idx.copy(),
            outcome=self.outcome.copy(),
            counterfactuals=None,
        )

    def stratum_codes(self, names: Sequence[str]) -> tuple[np.ndarray, list[tuple]]:
        """Encode each unit's values on ``names`` as a stratum code.

        Returns (codes, labels): codes[i] indexes into labels, the sorted list
        of distinct value tuples observed in the cohort.
        """
        if not names:
            return np.zeros(self.n, dtype=np.intp), [()]
        cols = np.stack([self.column(nm) for nm in names], axis=1)
        labels_arr, codes = np.unique(cols, axis=0, return_inverse=True)
        labels = [tuple(row) for row in labels_arr]
        return codes.astype(np.intp), labels

    def units(self) -> Iterator[UnitRecord]:
        names = self.covariate_names
        versions = self.arm_spec.all_versions
        for i in range(self.n):
            cf = {}
            if self.counterfactuals is not None:
                row = self.counterfactuals[i]
                cf = {versions[k]: float(row[k]) for k in range(self.n_versions) if not np.isnan(row[k])}
            yield UnitRecord(
                unit_id=self.unit_ids[i],
                profile={nm: float(self.covariates[i, j]) for j, nm in enumerate(names)},
                observed_arm=None if self.arm[i] == MISSING else int(self.arm[i]),
                observed_version=None if self.version_idx[i] == MISSING else versions[int(self.version_idx[i])],
                observed_outcome=None if np.isnan(self.outcome[i]) else float(self.outcome[i]),
                counterfactuals=cf,
            )

    @staticmethod
    def from_records(
        records: Iterable[UnitRecord],
        covariate_specs: Sequence[CovariateSpec],
        arm_spec: ArmSpec,
        outcome_kind: str,
    ) -> "CohortTable":
        records = list(records)
        specs = tuple(covariate_specs)
        names = [s.name for s in specs]
        n = len(records)
        cov = np.zeros((n, len(specs)))
        arm = np.full(n, MISSING, dtype=np.int8)
        vidx = np.full(n, MISSING, dtype=np.int16)
        y = np.full(n, np.nan)
        any_cf = any(r.counterfactuals for r in records)
        cf = np.full((n, len(arm_spec.all_versions)), np.nan) if any_cf else None
        for i, r in enumerate(records):
            missing = [nm for nm in names if nm not in r.profile]
            if missing:
                raise SchemaError(f"unit {r.unit_id!r}: missing covariates {missing}")
            cov[i] = [r.profile[nm] for nm in names]
            if r.observed_version is not None:
                vidx[i] = arm_spec.index_of(r.observed_version)
            if r.observed_arm is not None:
                arm[i] = r.observed_arm
            elif r.observed_version is not None:
                arm[i] = arm_spec.arm_of(r.observed_version)
            if r.observed_outcome is not None:
                y[i] = r.observed_outcome
            if cf is not None:
                for v, val in r.counterfactuals.items():
                    cf[i, arm_spec.index_of(v)] = val
        return CohortTable(
            covariate_specs=specs,
            arm_spec=arm_spec,
            outcome_kind=outcome_kind,
            unit_ids=tuple(r.unit_id for r in records),
            covariates=cov,
            arm=arm,
            version_idx=vidx,
            outcome=y,
            counterfactuals=cf,
        )


# -- treatment assignment algorithm ---------------------------------------


@dataclass(frozen=True)
class DecisionRule:
    """One clause of a decision list: conditions on covariate values."""

    when: tuple[tuple[str, float], ...]
    recommend: str


@dataclass(frozen=True)
class PMAlgorithm:
    """Deterministic map from covariate profile to a recommended version.

    Rules are evaluated in order and the first match wins; profiles matching
    no rule are ineligible. Overlapping rule conditions are therefore legal
    but order-sensitive, which callers should keep in mind when writing lists.
    """

    rules: tuple[DecisionRule, ...]
    arm_spec: ArmSpec

    def __post_init__(self):
        for rule in self.rules:
            if rule.recommend not in self.arm_spec.treated_versions:
                raise SchemaError(
                    f"rule recommends {rule.recommend!r}, not a treated-arm version"
                )

    @property
    def covariate_names(self) -> tuple[str, ...]:
        seen: list[str] = []
        for rule in self.rules:
            for name, _ in rule.when:
                if name not in seen:
                    seen.append(name)
        return tuple(seen)

    def recommend(self, profile: Mapping[str, float]) -> str | None:
        """Apply the decision list to one profile; None means ineligible."""
        for rule in self.rules:
            ok = True
            for name, value in rule.when:
                if name not in profile:
                    raise SchemaError(f"profile lacks covariate {name!r} required by the rule")
                if profile[name] != value:
                    ok = False
                    break
            if ok:
                return rule.recommend
        return None

    def recommend_indices(self, cohort: CohortTable) -> np.ndarray:
        """Vectorized recommendation: version index per unit, -1 if ineligible."""
        out = np.full(cohort.n, MISSING, dtype=np.int16)
        undecided = np.ones(cohort.n, dtype=bool)
        for rule in self.rules:
            match = undecided.copy()
            for name, value in rule.when:
                match &= cohort.column(name) == value
            out[match] = cohort.arm_spec.index_of(rule.recommend)
            undecided &= ~match
        return out


def eligibility(algorithm: PMAlgorithm, profile: Mapping[str, float]) -> str | None:
    """Recommended version for ``profile``, or None when ineligible."""
    return algorithm.recommend(profile)


def restrict_eligible(cohort: CohortTable, algorithm: PMAlgorithm) -> CohortTable:
    """Keep exactly the units the algorithm can treat, preserving order."""
    rec = algorithm.recommend_indices(cohort)
    keep = np.flatnonzero(rec != MISSING)
    if keep.size == 0:
        raise EstimationError("no eligible units")
    if keep.size == cohort.n:
        return cohort
    return cohort.subset(keep)


# -- version distributions -------------------------------------------------


@dataclass(frozen=True)
class VersionDistribution:
    """Conditional distribution over treated-arm versions given covariates.

    Kinds:
      * ``dirac``: all mass on the algorithm's recommendation.
      * ``uniform``: equal mass on every treated version.
      * ``physician``: the observed conditional assignment; estimators handle
        this kind through the arm-level formula rather than a weight matrix.
      * ``table``: explicit g(version | stratum) rows over named covariates.
    """

    kind: str
    table_covariates: tuple[str, ...] = ()
    table: tuple[tuple[tuple[float, ...], tuple[tuple[str, float], ...]], ...] = ()

    def __post_init__(self):
        if self.kind not in ("dirac", "uniform", "physician", "table"):
            raise SchemaError(f"unknown version-distribution kind {self.kind!r}")
        for stratum, masses in self.table:
            total = sum(p for _, p in masses)
            if any(p < 0 for _, p in masses) or abs(total - 1.0) > 1e-9:
                raise SchemaError(f"distribution for stratum {stratum} must be >=0 and sum to 1")

    @staticmethod
    def dirac() -> "VersionDistribution":
        return VersionDistribution("dirac")

    @staticmethod
    def uniform() -> "VersionDistribution":
        return VersionDistribution("uniform")

    @staticmethod
    def physician() -> "VersionDistribution":
        return VersionDistribution("physician")

    @staticmethod
    def from_table(covariates: Sequence[str], rows: Mapping[tuple, Mapping[str, float]]) -> "VersionDistribution":
        packed = tuple(
            (tuple(float(v) for v in stratum), tuple(sorted(masses.items())))
            for stratum, masses in rows.items()
        )
        return VersionDistribution("table", tuple(covariates), packed)

    def weights_matrix(self, cohort: CohortTable, algorithm: PMAlgorithm | None = None) -> np.ndarray:
        """Per-unit mass over all versions, (n, n_versions); rows sum to 1."""
        n, m = cohort.n, cohort.n_versions
        out = np.zeros((n, m))
        if self.kind == "dirac":
            if algorithm is None:
                raise SchemaError("dirac distribution needs the assignment algorithm")
            rec = algorithm.recommend_indices(cohort)
            if np.any(rec == MISSING):
                raise EstimationError("dirac distribution undefined for ineligible units")
            out[np.arange(n), rec] = 1.0
        elif self.kind == "uniform":
            idx = list(cohort.arm_spec.treated_indices)
            out[:, idx] = 1.0 / len(idx)
        elif self.kind == "table":
            lookup = {stratum: dict(masses) for stratum, masses in self.table}
            cols = np.stack([cohort.column(nm) for nm in self.table_covariates], axis=1)
            for i in range(n):
                key = tuple(cols[i])
                if key not in lookup:
                    raise EstimationError(f"no distribution row for stratum {key}")
                for v, p in lookup[key].items():
                    out[i, cohort.arm_spec.index_of(v)] = p
        else:
            raise EstimationError("physician distribution has no explicit weight matrix")
        return out


# -- positivity diagnostics -------------------------------------------------


@dataclass(frozen=True)
class PositivityCell:
    stratum: tuple
    version: str
    count: int
    probability: float
    flagged: bool


@dataclass(frozen=True)
class PositivityReport:
    epsilon: float
    stratifier: tuple[str, ...]
    cells: tuple[PositivityCell, ...]

    @property
    def violations(self) -> tuple[PositivityCell, ...]:
        return tuple(c for c in self.cells if c.flagged)

    @property
    def ok(self) -> bool:
        return not self.violations


def positivity_check(
    cohort: CohortTable,
    stratifier: Sequence[str] | None = None,
    epsilon: float = 0.025,
    algorithm: PMAlgorithm | None = None,
) -> PositivityReport:
    """Count (stratum, version) cells and flag empty or near-degenerate ones.

    Strata default to the cross-product of the binary covariates the
    algorithm consults (all binary covariates when no algorithm is given);
    only strata observed in the cohort are reported. Purely diagnostic:
    never raises on violations.
    """
    if not 0 <= epsilon < 0.5:
        raise DataError("epsilon must lie in [0, 0.5)")
    if stratifier is None:
        if algorithm is not None:
            stratifier = [nm for nm in algorithm.covariate_names]
        else:
            stratifier = [s.name for s in cohort.covariate_specs if s.kind == "binary"]
    for nm in stratifier:
        spec = cohort.covariate_specs[cohort.covariate_names.index(nm)] if nm in cohort.covariate_names else None
        if spec is None:
            raise SchemaError(f"unknown stratifier covariate {nm!r}")
        if not spec.discrete:
            raise SchemaError(f"continuous covariate {nm!r} requires an explicit discretization")
    codes, labels = cohort.stratum_codes(stratifier)
    versions = cohort.arm_spec.all_versions
    cells = []
    observed = cohort.version_idx >= 0
    for s, label in enumerate(labels):
        in_stratum = codes == s
        denom = int(np.sum(in_stratum & observed))
        for k, v in enumerate(versions):
            count = int(np.sum(in_stratum & (cohort.version_idx == k)))
            prob = count / denom if denom else 0.0
            flagged = count == 0 or not (epsilon < prob < 1 - epsilon)
            cells.append(PositivityCell(label, v, count, prob, flagged))
    return PositivityReport(epsilon=epsilon, stratifier=tuple(stratifier), cells=tuple(cells))


# -- study declaration and file formats -------------------------------------


@dataclass(frozen=True)
class StudySpec:
    """Parsed study JSON: covariates, arms, algorithm and optional blocks."""

    covariate_specs: tuple[CovariateSpec, ...]
    arm_spec: ArmSpec
    algorithm: PMAlgorithm
    outcome_kind: str
    models: Mapping | None = None
    simulation: Mapping | None = None


def _require(mapping: Mapping, key: str, where: str):
    if key not in mapping:
        raise SchemaError(f"{where}: missing field {key!r}")
    return mapping[key]


def parse_study(doc: Mapping) -> StudySpec:
    """Validate and assemble a study declaration from parsed JSON."""
    if not isinstance(doc, Mapping):
        raise SchemaError("study: document must be a JSON object")
    cov_docs = _require(doc, "covariates", "study")
    specs = []
    seen = set()
    for c in cov_docs:
        name = _require(c, "name", "covariates[]")
        if name in seen:
            raise SchemaError(f"covariates: duplicate name {name!r}")
        seen.add(name)
        specs.append(
            CovariateSpec(
                name=name,
                role=c.get("role", "C"),
                kind=c.get("kind", "binary"),
                levels=tuple(c.get("levels", ())),
                prevalence=c.get("prevalence"),
            )
        )
    arms_doc = _require(doc, "arm_spec", "study")
    arm_spec = ArmSpec(
        control_versions=tuple(_require(arms_doc, "control", "arm_spec")),
        treated_versions=tuple(_require(arms_doc, "treated", "arm_spec")),
    )
    algo_doc = _require(doc, "algorithm", "study")
    rules = []
    for r in _require(algo_doc, "rules", "algorithm"):
        when = _require(r, "when", "algorithm.rules[]")
        for nm in when:
            if nm not in seen:
                raise SchemaError(f"algorithm rule references unknown covariate {nm!r}")
        rules.append(
            DecisionRule(
                when=tuple((nm, float(v)) for nm, v in when.items()),
                recommend=_require(r, "recommend", "algorithm.rules[]"),
            )
        )
    algorithm = PMAlgorithm(rules=tuple(rules), arm_spec=arm_spec)
    outcome_kind = doc.get("outcome_kind", "continuous")
    if outcome_kind not in ("continuous", "binary"):
        raise SchemaError(f"outcome_kind: expected continuous or binary, got {outcome_kind!r}")
    return StudySpec(
        covariate_specs=tuple(specs),
        arm_spec=arm_spec,
        algorithm=algorithm,
        outcome_kind=outcome_kind,
        models=doc.get("models"),
        simulation=doc.get("simulation"),
    )


def load_study(path: str | Path) -> StudySpec:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"study JSON: {e}") from None
    return parse_study(doc)


def read_cohort_csv(path: str | Path, study: StudySpec) -> CohortTable:
    """Read the cohort CSV: unit_id, covariates, arm, version, outcome, cf__*.

    Empty strings encode missing values. ``cf__<version>`` columns carry
    oracle counterfactual outcomes.
    """
    names = [s.name for s in study.covariate_specs]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("cohort CSV: missing header")
        header = list(reader.fieldnames)
        required = ["unit_id", *names, "arm", "version", "outcome"]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"cohort CSV: missing columns {missing}")
        cf_cols = [c for c in header if c.startswith("cf__")]
        for c in cf_cols:
            study.arm_spec.index_of(c[4:])  # raises on unknown versions
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                profile = {}
                for nm, spec in zip(names, study.covariate_specs):
                    raw = row[nm]
                    if raw == "":
                        raise SchemaError(f"covariate {nm!r} may not be missing")
                    if spec.kind == "categorical":
                        if raw not in spec.levels:
                            raise SchemaError(f"covariate {nm!r}: unknown level {raw!r}")
                        profile[nm] = float(spec.levels.index(raw))
                    else:
                        profile[nm] = float(raw)
                arm = None if row["arm"] == "" else int(row["arm"])
                version = row["version"] or None
                outcome = None if row["outcome"] == "" else float(row["outcome"])
                cf = {c[4:]: float(row[c]) for c in cf_cols if row[c] != ""}
                records.append(
                    UnitRecord(
                        unit_id=row["unit_id"],
                        profile=profile,
                        observed_arm=arm,
                        observed_version=version,
                        observed_outcome=outcome,
                        counterfactuals=cf,
                    )
                )
            except (ValueError, SchemaError) as e:
                raise SchemaError(f"cohort CSV line {lineno}: {e}") from None
    return CohortTable.from_records(records, study.covariate_specs, study.arm_spec, study.outcome_kind)


def write_cohort_csv(path: str | Path, cohort: CohortTable) -> None:
    names = cohort.covariate_names
    versions = cohort.arm_spec.all_versions
    with_cf = cohort.counterfactuals is not None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["unit_id", *names, "arm", "version", "outcome"]
        if with_cf:
            header += [f"cf__{v}" for v in versions]
        writer.writerow(header)
        for i in range(cohort.n):
            row = [cohort.unit_ids[i]]
            for j, spec in enumerate(cohort.covariate_specs):
                val = cohort.covariates[i, j]
                if spec.kind == "categorical":
                    row.append(spec.levels[int(val)])
                elif spec.kind == "binary":
                    row.append(str(int(val)))
                else:
                    row.append(repr(float(val)))
            row.append("" if cohort.arm[i] == MISSING else str(int(cohort.arm[i])))
            row.append("" if cohort.version_idx[i] == MISSING else versions[int(cohort.version_idx[i])])
            row.append("" if np.isnan(cohort.outcome[i]) else repr(float(cohort.outcome[i])))
            if with_cf:
                for k in range(cohort.n_versions):
                    val = cohort.counterfactuals[i, k]
                    row.append("" if np.isnan(val) else repr(float(val)))
            writer.writerow(row)
