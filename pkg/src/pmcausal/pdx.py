"""Xenograft screen ingestion, drug-response metrics and the
mask-and-estimate emulation experiment.

Each tumour model was implanted in several cloned mice, one drug per mouse,
so the screen records a response to every drug for every model: a ground
truth of counterfactual outcomes. The experiment repeatedly samples model
subsets, pretends only one (uniformly drawn) drug response per model is
known, runs the estimators, and scores them against the full table.

Volume-derived metrics: percent tumour volume change at each measurement
day, its minimum after day 10 (best response), and the minimum over
post-day-10 running means (best average response, lower is better). The
percent change divides by the day-t volume as the source convention prints
it; a flag switches to the baseline denominator.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (
    ArmSpec,
    CohortTable,
    CovariateSpec,
    DataError,
    DecisionRule,
    EstimationError,
    PMAlgorithm,
    SchemaError,
    StudySpec,
    restrict_eligible,
)
from .estimators import EstimandSpec, MethodEngine, MethodSpec, RegimeTarget
from .modeling import ModelConfig
from .simulation import ExperimentResult, _collect_replicates, _finalize_result, _replicate_estimates

CONTROL_DRUG = "LEE011"
MEK_DRUG = "binimetinib"
PI3K_DRUG = "BYL719"
DRUGS = (CONTROL_DRUG, MEK_DRUG, PI3K_DRUG)
MUTATION_FLAGS = ("KRAS", "BRAF", "PIK3CA", "PTEN")

__all__ = [
    "CONTROL_DRUG",
    "MEK_DRUG",
    "PI3K_DRUG",
    "VolumeSeries",
    "DrugResponse",
    "PdxModelRecord",
    "ResponseThresholds",
    "default_thresholds",
    "tumor_volume_change",
    "best_response",
    "best_average_response",
    "classify_response",
    "pdx_algorithm",
    "pdx_study_spec",
    "load_pdx",
    "records_to_cohort",
    "default_pdx_method_specs",
    "run_pdx_experiment",
]


@dataclass(frozen=True)
class VolumeSeries:
    """Tumour volume measurements for one (model, drug) pair."""

    model_id: str
    drug: str
    days: tuple[int, ...]
    volumes: tuple[float, ...]

    def __post_init__(self):
        if len(self.days) != len(self.volumes) or not self.days:
            raise DataError(f"{self.model_id}/{self.drug}: days and volumes must align and be nonempty")
        if self.days[0] != 0:
            raise DataError(f"{self.model_id}/{self.drug}: day 0 measurement required")
        if any(b <= a for a, b in zip(self.days, self.days[1:])):
            raise DataError(f"{self.model_id}/{self.drug}: days must be strictly increasing")
        if any(v <= 0 for v in self.volumes):
            raise DataError(f"{self.model_id}/{self.drug}: volumes must be positive")


def tumor_volume_change(series: VolumeSeries, baseline_denominator: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Percent volume change per day, day 0 included (identically 0).

    The default divides by the day-t volume; ``baseline_denominator``
    divides by the day-0 volume instead.
    """
    days = np.asarray(series.days)
    vol = np.asarray(series.volumes, dtype=float)
    denom = vol[0] if baseline_denominator else vol
    change = 100.0 * (vol - vol[0]) / denom
    return days, change


def best_response(days: np.ndarray, change: np.ndarray) -> float:
    """Minimum percent change strictly after day 10."""
    late = np.asarray(days) > 10
    if not np.any(late):
        raise DataError("insufficient follow-up: no measurement after day 10")
    return float(np.min(np.asarray(change)[late]))


def best_average_response(days: np.ndarray, change: np.ndarray) -> float:
    """Minimum over post-day-10 days of the running mean of percent change.

    The running mean at day t averages every measurement from day 0 to t,
    so early kinetics keep weighing on the score.
    """
    days = np.asarray(days)
    change = np.asarray(change, dtype=float)
    late = days > 10
    if not np.any(late):
        raise DataError("insufficient follow-up: no measurement after day 10")
    running = np.cumsum(change) / np.arange(1, len(change) + 1)
    return float(np.min(running[late]))


@dataclass(frozen=True)
class ResponseThresholds:
    """Ordered category cutoffs on (best response, best average response).

    Categories are checked best-first and a value exactly on a cutoff takes
    the better category; anything matching no row falls to ``default``.
    """

    categories: tuple[tuple[str, float, float], ...]
    default: str = "PD"
    responder_categories: tuple[str, ...] = ("CR", "PR", "SD")

    @staticmethod
    def from_json(doc: Mapping) -> "ResponseThresholds":
        return ResponseThresholds(
            categories=tuple(
                (c["name"], float(c["best_response_max"]), float(c["best_average_response_max"]))
                for c in doc["categories"]
            ),
            default=doc.get("default", "PD"),
            responder_categories=tuple(doc.get("responder_categories", ("CR", "PR", "SD"))),
        )


def default_thresholds() -> ResponseThresholds:
    with resources.files("pmcausal").joinpath("_data/response_thresholds.json").open() as fh:
        return ResponseThresholds.from_json(json.load(fh))


def classify_response(
    best: float, best_average: float, thresholds: ResponseThresholds | None = None
) -> tuple[str, int]:
    """(category, responder flag); responders collapse every category above
    progressive disease."""
    thresholds = thresholds or default_thresholds()
    for name, br_max, bar_max in thresholds.categories:
        if best <= br_max and best_average <= bar_max:
            return name, int(name in thresholds.responder_categories)
    name = thresholds.default
    return name, int(name in thresholds.responder_categories)


@dataclass(frozen=True)
class DrugResponse:
    best_average_response: float | None = None
    responder: int | None = None


@dataclass(frozen=True)
class PdxModelRecord:
    """One tumour model: mutation flags plus per-drug responses."""

    model_id: str
    tissue: str
    flags: Mapping[str, int]
    responses: Mapping[str, DrugResponse] = field(default_factory=dict)

    def __post_init__(self):
        missing = [f for f in MUTATION_FLAGS if f not in self.flags]
        if missing:
            raise SchemaError(f"model {self.model_id!r}: missing mutation flags {missing}")
        bad = [f for f, v in self.flags.items() if v not in (0, 1)]
        if bad:
            raise SchemaError(f"model {self.model_id!r}: non-binary mutation flags {bad}")
        if not self.responses:
            raise SchemaError(f"model {self.model_id!r}: needs at least one drug response")

    def complete(self, outcome_kind: str = "continuous", drugs: Sequence[str] = DRUGS) -> bool:
        for drug in drugs:
            r = self.responses.get(drug)
            if r is None:
                return False
            if outcome_kind == "continuous" and r.best_average_response is None:
                return False
            if outcome_kind == "binary" and r.responder is None:
                return False
        return True


def pdx_algorithm() -> PMAlgorithm:
    """MEK inhibitor for KRAS or BRAF mutants, the PI3K inhibitor for PIK3CA
    mutants, in that order; unmutated models are ineligible. PTEN stays a
    plain covariate."""
    return pdx_study_spec().algorithm


def pdx_study_spec(outcome_kind: str = "continuous") -> StudySpec:
    arm = ArmSpec(control_versions=(CONTROL_DRUG,), treated_versions=(MEK_DRUG, PI3K_DRUG))
    algorithm = PMAlgorithm(
        rules=(
            DecisionRule(when=(("KRAS", 1.0),), recommend=MEK_DRUG),
            DecisionRule(when=(("BRAF", 1.0),), recommend=MEK_DRUG),
            DecisionRule(when=(("PIK3CA", 1.0),), recommend=PI3K_DRUG),
        ),
        arm_spec=arm,
    )
    return StudySpec(
        covariate_specs=tuple(CovariateSpec(f) for f in MUTATION_FLAGS),
        arm_spec=arm,
        algorithm=algorithm,
        outcome_kind=outcome_kind,
    )


# -- file ingestion -------------------------------------------------------------


def _read_rows(path: str | Path, required: Sequence[str], issues: list[str]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            issues.append(f"{path}: missing header")
            return []
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            issues.append(f"{path}: missing columns {missing}")
            return []
        return [dict(row, __line__=str(lineno)) for lineno, row in enumerate(reader, start=2)]


def load_pdx(
    models_csv: str | Path,
    responses_csv: str | Path | None = None,
    volumes_csv: str | Path | None = None,
    thresholds: ResponseThresholds | None = None,
    baseline_denominator: bool = False,
) -> list[PdxModelRecord]:
    """Model records from flat files; metrics are computed from volume
    series when no precomputed responses are given.

    Malformed rows, unknown drugs and duplicate (model, drug) pairs are
    collected and raised together as one itemized error.
    """
    if (responses_csv is None) == (volumes_csv is None):
        raise SchemaError("provide exactly one of responses_csv or volumes_csv")
    issues: list[str] = []
    model_rows = _read_rows(models_csv, ["model_id", "tissue", *MUTATION_FLAGS], issues)
    flags_by_model: dict[str, tuple[str, dict]] = {}
    for row in model_rows:
        mid = row["model_id"]
        if mid in flags_by_model:
            issues.append(f"models line {row['__line__']}: duplicate model_id {mid!r}")
            continue
        try:
            flags_by_model[mid] = (row["tissue"], {f: int(row[f]) for f in MUTATION_FLAGS})
        except ValueError:
            issues.append(f"models line {row['__line__']}: non-integer mutation flag for {mid!r}")

    responses: dict[str, dict[str, DrugResponse]] = {}

    def put(mid: str, drug: str, resp: DrugResponse, where: str):
        if drug not in DRUGS:
            issues.append(f"{where}: unknown drug {drug!r}")
            return
        if mid not in flags_by_model:
            issues.append(f"{where}: response for unknown model {mid!r}")
            return
        slot = responses.setdefault(mid, {})
        if drug in slot:
            issues.append(f"{where}: duplicate response for ({mid!r}, {drug!r})")
            return
        slot[drug] = resp

    if responses_csv is not None:
        for row in _read_rows(responses_csv, ["model_id", "drug", "best_average_response", "responder"], issues):
            where = f"responses line {row['__line__']}"
            try:
                bar = None if row["best_average_response"] == "" else float(row["best_average_response"])
                responder = None if row["responder"] == "" else int(row["responder"])
            except ValueError:
                issues.append(f"{where}: malformed numeric value")
                continue
            put(row["model_id"], row["drug"], DrugResponse(bar, responder), where)
    else:
        series_points: dict[tuple[str, str], list[tuple[int, float]]] = {}
        for row in _read_rows(volumes_csv, ["model_id", "drug", "day", "volume_mm3"], issues):
            where = f"volumes line {row['__line__']}"
            try:
                series_points.setdefault((row["model_id"], row["drug"]), []).append(
                    (int(row["day"]), float(row["volume_mm3"]))
                )
            except ValueError:
                issues.append(f"{where}: malformed numeric value")
        for (mid, drug), points in sorted(series_points.items()):
            points.sort()
            try:
                series = VolumeSeries(mid, drug, tuple(d for d, _ in points), tuple(v for _, v in points))
                days, change = tumor_volume_change(series, baseline_denominator=baseline_denominator)
                br = best_response(days, change)
                bar = best_average_response(days, change)
            except DataError as err:
                issues.append(f"volumes {mid}/{drug}: {err}")
                continue
            _, responder = classify_response(br, bar, thresholds)
            put(mid, drug, DrugResponse(bar, responder), f"volumes {mid}/{drug}")

    if issues:
        raise SchemaError("load errors:\n" + "\n".join(issues))
    records = []
    for mid, (tissue, flags) in flags_by_model.items():
        if mid not in responses:
            raise SchemaError(f"model {mid!r} has no responses at all")
        records.append(PdxModelRecord(model_id=mid, tissue=tissue, flags=flags, responses=responses[mid]))
    return records


def records_to_cohort(records: Iterable[PdxModelRecord], outcome_kind: str = "continuous") -> CohortTable:
    """Counterfactual table over all drugs; no observed assignment yet."""
    records = list(records)
    study = pdx_study_spec(outcome_kind)
    n = len(records)
    cov = np.zeros((n, len(MUTATION_FLAGS)))
    cf = np.full((n, len(DRUGS)), np.nan)
    for i, rec in enumerate(records):
        cov[i] = [rec.flags[f] for f in MUTATION_FLAGS]
        for k, drug in enumerate(study.arm_spec.all_versions):
            resp = rec.responses.get(drug)
            if resp is None:
                continue
            value = resp.best_average_response if outcome_kind == "continuous" else resp.responder
            if value is not None:
                cf[i, k] = float(value)
    return CohortTable(
        covariate_specs=study.covariate_specs,
        arm_spec=study.arm_spec,
        outcome_kind=outcome_kind,
        unit_ids=tuple(r.model_id for r in records),
        covariates=cov,
        arm=np.full(n, -1, dtype=np.int8),
        version_idx=np.full(n, -1, dtype=np.int16),
        outcome=np.full(n, np.nan),
        counterfactuals=cf,
    )


# -- emulation experiment ---------------------------------------------------------


def default_pdx_method_specs(
    methods: Sequence[str] = ("true", "naive", "std", "ipw", "tmle"),
    n_trees: int = 200,
    min_leaf: int = 5,
    seed: int = 0,
    **options,
) -> list[MethodSpec]:
    """Forest-backed method specs; the screen responses are too nonlinear
    for the saturated-GLM defaults used on simulated cohorts."""
    forest = ModelConfig(kind="forest", n_trees=n_trees, min_leaf=min_leaf, seed=seed)
    return [
        MethodSpec(method=m, outcome_model=forest, treatment_model=forest, **options)
        for m in methods
    ]


def _pdx_truth(eligible: CohortTable, estimands, algorithm) -> list[tuple[str, float]]:
    """Oracle effects on the full table.

    The emulated assignment is uniform over drugs, so the observed-practice
    control coincides with uniform random assignment and the truth for the
    practice comparison is computed through that identity (the full table
    has no observed assignment of its own).
    """
    engine = MethodEngine(eligible, MethodSpec(method="true"), algorithm)
    pm = engine.mean(RegimeTarget.algorithm_arm()).value
    out = []
    for espec in estimands:
        if espec.kind == "CE1":
            version = espec.control_version or eligible.arm_spec.control_versions[0]
            control = engine.mean(RegimeTarget.single_version(version, eligible.arm_spec.arm_of(version))).value
            out.append((espec.kind, pm - control))
        elif espec.kind in ("CE2", "CE3"):
            control = engine.mean(RegimeTarget.uniform_arm()).value
            out.append((espec.kind, pm - control))
        else:
            out.append((espec.kind, engine.mean(espec.target).value))
    return out


def _assign_uniform(full: CohortTable, idx: np.ndarray, rng: np.random.Generator, assignment: str) -> CohortTable:
    sub = full.subset(idx)
    n = sub.n
    if assignment == "recommended":
        drawn = pdx_algorithm().recommend_indices(sub)
        if np.any(drawn < 0):
            raise EstimationError("recommended assignment undefined for ineligible models")
    else:
        drawn = rng.integers(0, sub.n_versions, size=n).astype(np.int16)
    arm = (drawn >= len(sub.arm_spec.control_versions)).astype(np.int8)
    outcome = sub.counterfactuals[np.arange(n), drawn]
    return CohortTable(
        covariate_specs=sub.covariate_specs,
        arm_spec=sub.arm_spec,
        outcome_kind=sub.outcome_kind,
        unit_ids=sub.unit_ids,
        covariates=sub.covariates.copy(),
        arm=arm,
        version_idx=drawn,
        outcome=outcome,
        counterfactuals=sub.counterfactuals.copy(),
    )


def _pdx_replicate_worker(args):
    full, methods, estimands, algorithm, n, seed, assignment, indices = args
    out = []
    for r in indices:
        rng = np.random.default_rng((seed, 3, r))
        idx = rng.choice(full.n, size=n, replace=False)
        cohort = _assign_uniform(full, idx, rng, assignment)
        try:
            eligible = restrict_eligible(cohort, algorithm)
            values, flags = _replicate_estimates(eligible, methods, estimands, algorithm)
        except EstimationError as err:
            values = np.full((len(estimands), len(methods)), np.nan)
            flags = {
                (i, j): (f"failed: {err}",)
                for i in range(len(estimands))
                for j in range(len(methods))
            }
        out.append((r, values, flags))
    return out


def run_pdx_experiment(
    records: Iterable[PdxModelRecord],
    n_replicates: int = 1000,
    cohort_size: int = 70,
    seed: int = 0,
    methods: Sequence[MethodSpec] | None = None,
    estimands: Sequence[EstimandSpec] | None = None,
    outcome_kind: str = "continuous",
    workers: int = 1,
    assignment: str = "uniform",
    progress=None,
) -> ExperimentResult:
    """Mask-and-estimate over model subsets, scored against the full table.

    Keeps only eligible models with responses to every drug; per replicate,
    samples ``cohort_size`` of them without replacement and exposes one
    uniformly drawn drug response each.
    """
    if assignment not in ("uniform", "recommended"):
        raise SchemaError(f"unknown assignment {assignment!r}")
    algorithm = pdx_algorithm()
    usable = [r for r in records if r.complete(outcome_kind)]
    full = records_to_cohort(usable, outcome_kind)
    full = restrict_eligible(full, algorithm)
    if full.n < cohort_size:
        raise EstimationError(
            f"only {full.n} eligible complete models, cohort size {cohort_size} unreachable"
        )
    methods = list(methods) if methods is not None else default_pdx_method_specs()
    estimands = list(estimands) if estimands is not None else [EstimandSpec(kind=k) for k in ("CE1", "CE2", "CE3")]
    truth = _pdx_truth(full, estimands, algorithm)
    chunk = max(1, min(32, -(-n_replicates // max(1, workers * 8))))
    payloads = [
        (full, methods, estimands, algorithm, cohort_size, seed, assignment, list(range(s, min(s + chunk, n_replicates))))
        for s in range(0, n_replicates, chunk)
    ]
    estimates, tally = _collect_replicates(
        _pdx_replicate_worker, payloads, n_replicates, len(estimands), len(methods), workers, progress
    )
    return _finalize_result(
        estimates,
        tally,
        truth,
        [e.kind for e in estimands],
        [m.method for m in methods],
        cohort_size,
        seed,
        "pdx-emulation",
        full.n,
    )
