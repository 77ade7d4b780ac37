"""Scenario engine: super-population generation, cohort resampling,
multi-method estimation and mean-absolute-error scoring.

A scenario declares binary covariates with prevalences, one linear outcome
equation per version (optional interaction terms), Gaussian noise, the
marginal (or stratum-conditional) distribution of observed treatments, and
the experiment sizes. Everything downstream of the master seed is
deterministic, including under multi-process execution: each replicate owns
an RNG stream keyed by its index, and results are merged by index.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence
import warnings as _warnings

import numpy as np

from .core import (
    CohortTable,
    DataError,
    EstimationError,
    PMAlgorithm,
    SchemaError,
    StudySpec,
    parse_study,
    restrict_eligible,
)
from .estimators import (
    ESTIMANDS,
    EffectEstimate,
    EstimandSpec,
    MethodEngine,
    MethodSpec,
    estimate_effect,
)
from .modeling import ModelConfig

__all__ = [
    "VersionEquation",
    "ObservedAssignment",
    "Scenario",
    "ExperimentResult",
    "generate_superpopulation",
    "assign_observed",
    "sample_cohorts",
    "run_experiment",
    "mae",
    "default_method_specs",
    "default_estimands",
    "parse_scenario",
    "scenario_to_json",
    "main_scenario",
    "uniform_assignment_scenario",
    "result_to_json",
    "result_to_csv_rows",
]


@dataclass(frozen=True)
class VersionEquation:
    """Linear model for one version's counterfactual outcome."""

    version: str
    intercept: float
    coefficients: tuple[tuple[str, float], ...] = ()
    interactions: tuple[tuple[tuple[str, ...], float], ...] = ()

    def mean(self, cohort_columns: Mapping[str, np.ndarray], n: int) -> np.ndarray:
        out = np.full(n, self.intercept, dtype=float)
        for name, coef in self.coefficients:
            out += coef * cohort_columns[name]
        for names, coef in self.interactions:
            prod = np.ones(n)
            for nm in names:
                prod = prod * cohort_columns[nm]
            out += coef * prod
        return out


@dataclass(frozen=True)
class ObservedAssignment:
    """How versions were handed out in the observed data."""

    kind: str  # "marginal" | "table"
    marginal: tuple[tuple[str, float], ...] = ()
    table_covariates: tuple[str, ...] = ()
    table: tuple[tuple[tuple[float, ...], tuple[tuple[str, float], ...]], ...] = ()

    def __post_init__(self):
        if self.kind not in ("marginal", "table"):
            raise SchemaError(f"unknown observed-assignment kind {self.kind!r}")
        rows = [self.marginal] if self.kind == "marginal" else [m for _, m in self.table]
        for row in rows:
            total = sum(p for _, p in row)
            if any(p < 0 for _, p in row) or abs(total - 1.0) > 1e-9:
                raise SchemaError("observed distribution must be nonnegative and sum to 1")

    @staticmethod
    def from_marginal(probs: Mapping[str, float]) -> "ObservedAssignment":
        return ObservedAssignment(kind="marginal", marginal=tuple(probs.items()))


@dataclass(frozen=True)
class Scenario:
    """Complete simulation specification."""

    study: StudySpec
    equations: tuple[VersionEquation, ...]
    observed: ObservedAssignment
    noise_sd: float = 10.0
    superpop_size: int = 10000
    cohort_size: int = 200
    n_replicates: int = 1000
    master_seed: int = 20240
    name: str = ""

    def __post_init__(self):
        versions = self.study.arm_spec.all_versions
        have = [eq.version for eq in self.equations]
        missing = [v for v in versions if v not in have]
        if missing:
            raise SchemaError(f"scenario: missing coefficient rows for versions {missing}")
        if len(have) != len(set(have)):
            raise SchemaError("scenario: duplicate coefficient row")
        if self.noise_sd < 0:
            raise SchemaError("scenario: noise_sd must be >= 0")
        for sz, nm in ((self.superpop_size, "superpop_size"), (self.cohort_size, "cohort_size"), (self.n_replicates, "n_replicates")):
            if sz < 1:
                raise SchemaError(f"scenario: {nm} must be >= 1")
        if self.cohort_size > self.superpop_size:
            raise SchemaError("scenario: cohort_size exceeds superpop_size")
        if self.observed.kind == "marginal":
            names = [v for v, _ in self.observed.marginal]
            if sorted(names) != sorted(versions):
                raise SchemaError("observed distribution must cover every version exactly once")
        for spec in self.study.covariate_specs:
            if spec.kind != "binary":
                raise SchemaError("scenario generation supports binary covariates only")
            if spec.prevalence is None:
                raise SchemaError(f"covariate {spec.name!r}: prevalence required for simulation")
        frac = self.eligible_fraction()
        if self.cohort_size * frac < 2:
            _warnings.warn("expected eligible count per cohort is below 2", stacklevel=2)

    def equation_for(self, version: str) -> VersionEquation:
        return next(eq for eq in self.equations if eq.version == version)

    def eligible_fraction(self) -> float:
        """Exact eligibility mass by enumerating binary strata."""
        names = [s.name for s in self.study.covariate_specs]
        prevs = [s.prevalence for s in self.study.covariate_specs]
        frac = 0.0
        for bits in np.ndindex(*([2] * len(names))):
            profile = dict(zip(names, map(float, bits)))
            p = float(np.prod([pv if b else 1 - pv for pv, b in zip(prevs, bits)]))
            if self.study.algorithm.recommend(profile) is not None:
                frac += p
        return frac


# -- generation ----------------------------------------------------------------


def _exact_stratum_covariates(specs, n: int) -> np.ndarray:
    """Covariate matrix with largest-remainder stratum counts (test mode)."""
    d = len(specs)
    strata = list(np.ndindex(*([2] * d)))
    probs = np.array([
        float(np.prod([s.prevalence if b else 1 - s.prevalence for s, b in zip(specs, bits)]))
        for bits in strata
    ])
    raw = probs * n
    counts = np.floor(raw).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:rem]] += 1
    rows = []
    for bits, c in zip(strata, counts):
        if c:
            rows.append(np.tile(np.array(bits, dtype=float), (c, 1)))
    return np.concatenate(rows, axis=0)


def generate_superpopulation(
    scenario: Scenario,
    seed: int | tuple | None = None,
    exact_strata: bool = False,
) -> CohortTable:
    """Units with independent Bernoulli covariates and a full counterfactual
    outcome per version; no observed treatment yet."""
    rng = np.random.default_rng((scenario.master_seed, 0) if seed is None else seed)
    n = scenario.superpop_size
    specs = scenario.study.covariate_specs
    if exact_strata:
        cov = _exact_stratum_covariates(specs, n)
    else:
        cov = np.stack([rng.binomial(1, s.prevalence, size=n).astype(float) for s in specs], axis=1)
    columns = {s.name: cov[:, j] for j, s in enumerate(specs)}
    versions = scenario.study.arm_spec.all_versions
    cf = np.empty((n, len(versions)))
    for k, v in enumerate(versions):
        mean = scenario.equation_for(v).mean(columns, n)
        if scenario.noise_sd > 0:
            mean = mean + rng.normal(0.0, scenario.noise_sd, size=n)
        cf[:, k] = mean
    return CohortTable(
        covariate_specs=specs,
        arm_spec=scenario.study.arm_spec,
        outcome_kind=scenario.study.outcome_kind,
        unit_ids=tuple(f"u{i}" for i in range(n)),
        covariates=cov,
        arm=np.full(n, -1, dtype=np.int8),
        version_idx=np.full(n, -1, dtype=np.int16),
        outcome=np.full(n, np.nan),
        counterfactuals=cf,
    )


def assign_observed(
    superpop: CohortTable,
    observed: ObservedAssignment,
    seed: int | tuple | None = None,
    master_seed: int = 0,
) -> CohortTable:
    """Draw each unit's observed version; the outcome is the matching
    counterfactual, so consistency holds by construction."""
    rng = np.random.default_rng((master_seed, 1) if seed is None else seed)
    n = superpop.n
    versions = superpop.arm_spec.all_versions
    if observed.kind == "marginal":
        probs = np.zeros(len(versions))
        for v, p in observed.marginal:
            probs[superpop.arm_spec.index_of(v)] = p
        drawn = rng.choice(len(versions), size=n, p=probs)
    else:
        lookup = {stratum: dict(masses) for stratum, masses in observed.table}
        cols = np.stack([superpop.column(nm) for nm in observed.table_covariates], axis=1)
        prob_rows = np.zeros((n, len(versions)))
        for i in range(n):
            key = tuple(cols[i])
            if key not in lookup:
                raise EstimationError(f"no observed-distribution row for stratum {key}")
            for v, p in lookup[key].items():
                prob_rows[i, superpop.arm_spec.index_of(v)] = p
        u = rng.random(n)
        drawn = (u[:, None] >= np.cumsum(prob_rows, axis=1)).sum(axis=1)
    drawn = drawn.astype(np.int16)
    arm = (drawn >= len(superpop.arm_spec.control_versions)).astype(np.int8)
    outcome = superpop.counterfactuals[np.arange(n), drawn]
    return CohortTable(
        covariate_specs=superpop.covariate_specs,
        arm_spec=superpop.arm_spec,
        outcome_kind=superpop.outcome_kind,
        unit_ids=superpop.unit_ids,
        covariates=superpop.covariates.copy(),
        arm=arm,
        version_idx=drawn,
        outcome=outcome,
        counterfactuals=superpop.counterfactuals.copy(),
    )


def sample_cohorts(superpop: CohortTable, n: int, n_replicates: int, master_seed: int):
    """Yield (index, cohort): independent without-replacement samples of n
    units, one RNG stream per replicate index."""
    if n > superpop.n:
        raise DataError(f"cohort size {n} exceeds population size {superpop.n}")
    for r in range(n_replicates):
        yield r, _sample_one(superpop, n, master_seed, r)


def _sample_one(superpop: CohortTable, n: int, master_seed: int, r: int) -> CohortTable:
    rng = np.random.default_rng((master_seed, 2, r))
    idx = rng.choice(superpop.n, size=n, replace=False)
    return superpop.subset(idx)


# -- estimation over replicates -------------------------------------------------


def default_method_specs(
    methods: Sequence[str] = ("true", "naive", "std", "ipw", "tmle"),
    outcome_model: ModelConfig | None = None,
    treatment_model: ModelConfig | None = None,
    **options,
) -> list[MethodSpec]:
    outcome_model = outcome_model or ModelConfig()
    treatment_model = treatment_model or ModelConfig(formula=("main",))
    return [
        MethodSpec(method=m, outcome_model=outcome_model, treatment_model=treatment_model, **options)
        for m in methods
    ]


def default_estimands() -> list[EstimandSpec]:
    return [EstimandSpec(kind=k) for k in ESTIMANDS]


def _replicate_estimates(
    cohort: CohortTable,
    methods: Sequence[MethodSpec],
    estimands: Sequence[EstimandSpec],
    algorithm: PMAlgorithm,
):
    """(estimates, flags) for one eligible cohort; failures become NaN cells."""
    values = np.full((len(estimands), len(methods)), np.nan)
    flags: dict[tuple[int, int], tuple[str, ...]] = {}
    masked = cohort.mask_counterfactuals()
    shared_models: dict = {}  # masked-view methods with equal model configs reuse fits
    for j, mspec in enumerate(methods):
        data = cohort if mspec.method == "true" else masked
        cache = None if mspec.method == "true" else shared_models
        engine = MethodEngine(data, mspec, algorithm, model_cache=cache)
        for i, espec in enumerate(estimands):
            try:
                est = estimate_effect(data, espec, mspec, algorithm, engine=engine)
                values[i, j] = est.effect
                if est.flags:
                    flags[(i, j)] = est.flags
            except (EstimationError, DataError) as err:
                flags[(i, j)] = (f"failed: {err}",)
    return values, flags


def _scenario_replicate_worker(args):
    superpop, methods, estimands, algorithm, n, master_seed, indices = args
    out = []
    for r in indices:
        cohort = _sample_one(superpop, n, master_seed, r)
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


@dataclass(frozen=True)
class ExperimentResult:
    """Truth, per-replicate estimates, MAE and flag tallies."""

    estimands: tuple[str, ...]
    methods: tuple[str, ...]
    truth: tuple[tuple[str, float], ...]
    estimates: np.ndarray  # (R, n_estimands, n_methods), NaN for failures
    flag_counts: tuple  # ((estimand, method, flag, count), ...)
    cohort_size: int
    master_seed: int
    scenario_name: str = ""
    superpop_size: int | None = None
    warnings: tuple[str, ...] = ()

    @property
    def n_replicates(self) -> int:
        return self.estimates.shape[0]

    def truth_value(self, estimand: str) -> float:
        return dict(self.truth)[estimand]

    def replicate_values(self, estimand: str, method: str) -> np.ndarray:
        return self.estimates[:, self.estimands.index(estimand), self.methods.index(method)]

    def mae(self, estimand: str, method: str) -> float:
        return mae(self.replicate_values(estimand, method), self.truth_value(estimand))

    def failed_count(self, estimand: str, method: str) -> int:
        return int(np.sum(np.isnan(self.replicate_values(estimand, method))))


def mae(estimates: Sequence[float] | np.ndarray, truth: float) -> float:
    """Mean absolute deviation from truth over the finite entries."""
    arr = np.asarray(estimates, dtype=float)
    finite = np.isfinite(arr)
    if not np.any(finite):
        raise EstimationError("mean absolute error undefined: every estimate is missing")
    return float(np.mean(np.abs(arr[finite] - truth)))


def _compute_truth(
    eligible: CohortTable,
    estimands: Sequence[EstimandSpec],
    algorithm: PMAlgorithm,
) -> list[tuple[str, float]]:
    spec = MethodSpec(method="true")
    engine = MethodEngine(eligible, spec, algorithm)
    out = []
    for espec in estimands:
        est = estimate_effect(eligible, espec, spec, algorithm, engine=engine)
        out.append((espec.kind, est.effect))
    return out


def _collect_replicates(
    worker,
    payloads,
    n_replicates: int,
    n_estimands: int,
    n_methods: int,
    workers: int,
    progress: Callable[[int, int], None] | None,
):
    estimates = np.full((n_replicates, n_estimands, n_methods), np.nan)
    flag_tally: dict[tuple[int, int, str], int] = {}
    done = 0

    def absorb(batch):
        nonlocal done
        for r, values, flags in batch:
            estimates[r] = values
            for (i, j), fl in flags.items():
                for f in fl:
                    key = (i, j, f)
                    flag_tally[key] = flag_tally.get(key, 0) + 1
            done += 1
        if progress is not None:
            progress(done, n_replicates)

    if workers <= 1:
        for payload in payloads:
            absorb(worker(payload))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch in pool.map(worker, payloads):
                absorb(batch)
    return estimates, flag_tally


def _finalize_result(
    estimates: np.ndarray,
    flag_tally: Mapping,
    truth: Sequence[tuple[str, float]],
    estimand_names: Sequence[str],
    method_names: Sequence[str],
    cohort_size: int,
    master_seed: int,
    scenario_name: str,
    superpop_size: int | None,
) -> ExperimentResult:
    warnings_out = []
    r = estimates.shape[0]
    for j, m in enumerate(method_names):
        for i, e in enumerate(estimand_names):
            failed = int(np.sum(np.isnan(estimates[:, i, j])))
            if failed > 0.1 * r:
                warnings_out.append(f"{m}/{e}: {failed} of {r} replicates failed")
    flags_packed = tuple(
        (estimand_names[i], method_names[j], f, c)
        for (i, j, f), c in sorted(flag_tally.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2]))
    )
    return ExperimentResult(
        estimands=tuple(estimand_names),
        methods=tuple(method_names),
        truth=tuple(truth),
        estimates=estimates,
        flag_counts=flags_packed,
        cohort_size=cohort_size,
        master_seed=master_seed,
        scenario_name=scenario_name,
        superpop_size=superpop_size,
        warnings=tuple(warnings_out),
    )


def run_experiment(
    scenario: Scenario,
    methods: Sequence[MethodSpec] | None = None,
    estimands: Sequence[EstimandSpec] | None = None,
    workers: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentResult:
    """Full protocol: generate, assign, resample, estimate, score.

    Truth comes from the counterfactuals of the complete eligible
    super-population; each replicate estimates every (estimand, method) on
    an eligible subcohort with counterfactuals masked for every method
    except the oracle. Deterministic in the master seed for any worker
    count.
    """
    methods = list(methods) if methods is not None else default_method_specs()
    estimands = list(estimands) if estimands is not None else default_estimands()
    algorithm = scenario.study.algorithm
    superpop = generate_superpopulation(scenario)
    assigned = assign_observed(superpop, scenario.observed, master_seed=scenario.master_seed)
    eligible = restrict_eligible(assigned, algorithm)
    truth = _compute_truth(eligible, estimands, algorithm)
    r_total = scenario.n_replicates
    chunk = max(1, min(64, -(-r_total // max(1, workers * 8))))
    payloads = [
        (assigned, methods, estimands, algorithm, scenario.cohort_size, scenario.master_seed, list(range(s, min(s + chunk, r_total))))
        for s in range(0, r_total, chunk)
    ]
    estimates, tally = _collect_replicates(
        _scenario_replicate_worker, payloads, r_total, len(estimands), len(methods), workers, progress
    )
    return _finalize_result(
        estimates,
        tally,
        truth,
        [e.kind for e in estimands],
        [m.method for m in methods],
        scenario.cohort_size,
        scenario.master_seed,
        scenario.name,
        scenario.superpop_size,
    )


# -- serialization ----------------------------------------------------------------


def result_to_json(result: ExperimentResult) -> dict:
    replicates: dict = {}
    mae_out: dict = {}
    failed: dict = {}
    for i, e in enumerate(result.estimands):
        replicates[e] = {}
        mae_out[e] = {}
        failed[e] = {}
        for j, m in enumerate(result.methods):
            col = result.estimates[:, i, j]
            replicates[e][m] = [None if np.isnan(v) else float(v) for v in col]
            finite = np.isfinite(col)
            mae_out[e][m] = (
                float(np.mean(np.abs(col[finite] - result.truth_value(e)))) if np.any(finite) else None
            )
            failed[e][m] = int(np.sum(~finite))
    flags: dict = {}
    for e, m, f, c in result.flag_counts:
        flags.setdefault(e, {}).setdefault(m, {})[f] = c
    return {
        "schema": "pmcausal-experiment/1",
        "scenario": result.scenario_name,
        "master_seed": result.master_seed,
        "superpop_size": result.superpop_size,
        "cohort_size": result.cohort_size,
        "n_replicates": result.n_replicates,
        "estimands": list(result.estimands),
        "methods": list(result.methods),
        "truth": {e: v for e, v in result.truth},
        "replicates": replicates,
        "mae": mae_out,
        "failed": failed,
        "flags": flags,
        "warnings": list(result.warnings),
    }


def result_to_csv_rows(result: ExperimentResult) -> list[list]:
    flags_by_cell: dict[tuple[str, str], list[str]] = {}
    for e, m, f, c in result.flag_counts:
        flags_by_cell.setdefault((e, m), []).append(f"{f}x{c}")
    rows: list[list] = [["replicate", "estimand", "method", "estimate", "flags"]]
    for r in range(result.n_replicates):
        for i, e in enumerate(result.estimands):
            for j, m in enumerate(result.methods):
                v = result.estimates[r, i, j]
                rows.append([
                    r,
                    e,
                    m,
                    "" if np.isnan(v) else repr(float(v)),
                    ";".join(flags_by_cell.get((e, m), [])) if r == 0 else "",
                ])
    return rows


def save_result(result: ExperimentResult, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "result.json"
    csv_path = out / "result.csv"
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(result_to_json(result), fh, sort_keys=True, indent=1)
        fh.write("\n")
    import csv as _csv

    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        _csv.writer(fh).writerows(result_to_csv_rows(result))
    return json_path, csv_path


# -- scenario JSON and presets ------------------------------------------------------


def parse_scenario(doc: Mapping, name: str = "") -> Scenario:
    """Scenario from a study document carrying a ``simulation`` block."""
    study = parse_study(doc)
    sim = study.simulation
    if sim is None:
        raise SchemaError("scenario: missing simulation block")
    versions = study.arm_spec.all_versions
    equations = []
    for row in sim.get("coefficients", ()):
        version = row.get("version")
        if version not in versions:
            raise SchemaError(f"simulation.coefficients: unknown version {version!r}")
        inters = tuple(
            (tuple(item["covariates"]), float(item["coefficient"]))
            for item in row.get("interactions", ())
        )
        equations.append(
            VersionEquation(
                version=version,
                intercept=float(row.get("intercept", 0.0)),
                coefficients=tuple((nm, float(v)) for nm, v in row.get("coefficients", {}).items()),
                interactions=inters,
            )
        )
    dist_doc = sim.get("observed_distribution")
    if dist_doc is None:
        raise SchemaError("scenario: missing simulation.observed_distribution")
    observed = ObservedAssignment.from_marginal({v: float(p) for v, p in dist_doc.items()})
    return Scenario(
        study=study,
        equations=tuple(equations),
        observed=observed,
        noise_sd=float(sim.get("noise_sd", 10.0)),
        superpop_size=int(sim.get("superpop_size", 10000)),
        cohort_size=int(sim.get("cohort_size", 200)),
        n_replicates=int(sim.get("n_replicates", 1000)),
        master_seed=int(sim.get("master_seed", 20240)),
        name=name or str(sim.get("name", "")),
    )


def load_scenario(path: str | Path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"scenario JSON: {e}") from None
    return parse_scenario(doc, name=Path(path).stem)


def scenario_to_json(scenario: Scenario) -> dict:
    """Inverse of :func:`parse_scenario` (modulo key ordering)."""
    study = scenario.study
    return {
        "covariates": [
            {"name": s.name, "role": s.role, "kind": s.kind, "prevalence": s.prevalence}
            for s in study.covariate_specs
        ],
        "arm_spec": {
            "control": list(study.arm_spec.control_versions),
            "treated": list(study.arm_spec.treated_versions),
        },
        "algorithm": {
            "rules": [
                {"when": {nm: v for nm, v in rule.when}, "recommend": rule.recommend}
                for rule in study.algorithm.rules
            ]
        },
        "outcome_kind": study.outcome_kind,
        "simulation": {
            "name": scenario.name,
            "coefficients": [
                {
                    "version": eq.version,
                    "intercept": eq.intercept,
                    "coefficients": {nm: v for nm, v in eq.coefficients},
                    **(
                        {
                            "interactions": [
                                {"covariates": list(names), "coefficient": v}
                                for names, v in eq.interactions
                            ]
                        }
                        if eq.interactions
                        else {}
                    ),
                }
                for eq in scenario.equations
            ],
            "observed_distribution": {v: p for v, p in scenario.observed.marginal},
            "noise_sd": scenario.noise_sd,
            "superpop_size": scenario.superpop_size,
            "cohort_size": scenario.cohort_size,
            "n_replicates": scenario.n_replicates,
            "master_seed": scenario.master_seed,
        },
    }


def _two_gene_study() -> StudySpec:
    return parse_study(
        {
            "covariates": [
                {"name": "C1", "kind": "binary", "prevalence": 0.4},
                {"name": "C2", "kind": "binary", "prevalence": 0.4},
            ],
            "arm_spec": {"control": ["k0"], "treated": ["k1_1", "k1_2"]},
            "algorithm": {
                "rules": [
                    {"when": {"C1": 1}, "recommend": "k1_1"},
                    {"when": {"C2": 1}, "recommend": "k1_2"},
                ]
            },
            "outcome_kind": "continuous",
        }
    )


def main_scenario(**overrides) -> Scenario:
    """Two-gene scenario with physician preference for the strongest drug.

    Observed versions follow P = 0.5 / 0.25 / 0.25 for k1_1 / k1_2 / k0
    independently of covariates, which over-represents the profile the
    algorithm favours and biases unadjusted contrasts.
    """
    scenario = Scenario(
        study=_two_gene_study(),
        equations=(
            VersionEquation("k0", 0.0, (("C1", 0.0), ("C2", 15.0))),
            VersionEquation("k1_1", -25.0, (("C1", -15.0), ("C2", 10.0))),
            VersionEquation("k1_2", 0.0, (("C1", 0.0), ("C2", -20.0)), ((("C1", "C2"), 10.0),)),
        ),
        observed=ObservedAssignment.from_marginal({"k1_1": 0.5, "k1_2": 0.25, "k0": 0.25}),
        name="main",
    )
    return replace(scenario, **overrides) if overrides else scenario


def uniform_assignment_scenario(**overrides) -> Scenario:
    """Same outcome model, observed treatments assigned uniformly (1/3 each)."""
    scenario = replace(
        main_scenario(),
        observed=ObservedAssignment.from_marginal({"k0": 1 / 3, "k1_1": 1 / 3, "k1_2": 1 / 3}),
        name="uniform-assignment",
    )
    return replace(scenario, **overrides) if overrides else scenario
