"""Outcome and treatment models behind the estimators.

A model configuration names a backend ("glm" or "forest") and, for GLMs, a
formula: a list of main-effect covariate names, interaction tuples, and the
factor tokens "K" (version) or "A" (arm). Two keywords expand formulas:

* ``saturated``: all interactions of the listed discrete covariates with the
  conditioning factor. GLM-saturated fits are computed as exact per-cell
  means (continuous) or rates (binary), which is the same maximum-likelihood
  solution without an iterative solve.
* ``main``: main effects of every discrete outcome-role covariate plus the
  conditioning factor.

Outcome models predict every unit's expected outcome under every version
(or arm); treatment models return the joint probability of each version
given covariates.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import glm
from .core import CohortTable, DataError, EstimationError, SchemaError
from .forest import ForestConfig, fit_forest, predict_forest

__all__ = [
    "ModelConfig",
    "OutcomePredictions",
    "TreatmentProbabilities",
    "outcome_predictions",
    "treatment_probabilities",
    "default_stratifier",
]

_FACTOR_TOKENS = ("K", "A")


@dataclass(frozen=True)
class ModelConfig:
    """Backend selection plus formula (glm) or hyperparameters (forest)."""

    kind: str = "glm"
    formula: tuple = ("saturated",)
    n_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 5
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("glm", "forest"):
            raise SchemaError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "formula", _normalize_formula(self.formula))

    @staticmethod
    def from_json(doc: Mapping | None, default: "ModelConfig | None" = None) -> "ModelConfig":
        if doc is None:
            return default if default is not None else ModelConfig()
        kind = doc.get("type", "glm")
        if kind == "forest":
            return ModelConfig(
                kind="forest",
                n_trees=int(doc.get("n_trees", 500)),
                mtry=doc.get("mtry"),
                min_leaf=int(doc.get("min_leaf", 5)),
                max_depth=doc.get("max_depth"),
                seed=int(doc.get("seed", 0)),
            )
        return ModelConfig(kind="glm", formula=tuple(doc.get("formula", ("saturated",))))

    def forest_config(self) -> ForestConfig:
        return ForestConfig(
            n_trees=self.n_trees,
            mtry=self.mtry,
            min_leaf=self.min_leaf,
            max_depth=self.max_depth,
            bootstrap=True,
            seed=self.seed,
        )


def _normalize_formula(formula) -> tuple:
    if isinstance(formula, str):
        formula = (formula,)
    out = []
    for term in formula:
        if isinstance(term, str):
            out.append(term)
        else:
            out.append(tuple(term))
    return tuple(out)


def _saturated_covariates(cohort: CohortTable, formula: tuple) -> list[str]:
    listed = [t for t in formula if isinstance(t, str) and t not in ("saturated", "main", *_FACTOR_TOKENS)]
    if listed:
        return listed
    covs = [s.name for s in cohort.covariate_specs if s.discrete and s.role == "C"]
    if not covs:
        raise SchemaError("saturated formula needs at least one discrete covariate")
    return covs


def default_stratifier(cohort: CohortTable) -> list[str]:
    return [s.name for s in cohort.covariate_specs if s.discrete and s.role == "C"]


# -- design construction -----------------------------------------------------


def _factor_columns(cohort: CohortTable, factor: str, version_override, arm_override):
    """(columns, names) for one formula factor."""
    if factor == "K":
        versions = cohort.arm_spec.all_versions
        vidx = cohort.version_idx if version_override is None else version_override
        cols = [(vidx == k).astype(float) for k in range(1, len(versions))]
        return cols, [f"K[{v}]" for v in versions[1:]]
    if factor == "A":
        arm = cohort.arm if arm_override is None else arm_override
        return [arm.astype(float)], ["A"]
    spec = next((s for s in cohort.covariate_specs if s.name == factor), None)
    if spec is None:
        raise SchemaError(f"formula references unknown covariate {factor!r}")
    col = cohort.column(factor)
    if spec.kind == "categorical":
        cols = [(col == lvl).astype(float) for lvl in range(1, len(spec.levels))]
        return cols, [f"{factor}[{spec.levels[lvl]}]" for lvl in range(1, len(spec.levels))]
    return [col.astype(float)], [factor]


def build_design(
    cohort: CohortTable,
    terms: Sequence,
    version_override: np.ndarray | None = None,
    arm_override: np.ndarray | None = None,
) -> glm.DesignMatrix:
    """Intercept-first design for the formula terms."""
    n = cohort.n
    columns = [np.ones(n)]
    names = ["(intercept)"]
    for term in terms:
        factors = (term,) if isinstance(term, str) else tuple(term)
        per_factor = [_factor_columns(cohort, f, version_override, arm_override) for f in factors]
        for combo in itertools.product(*[list(zip(c, nm)) for c, nm in per_factor]):
            col = np.ones(n)
            label = []
            for c, nm in combo:
                col = col * c
                label.append(nm)
            columns.append(col)
            names.append(":".join(label))
    return glm.DesignMatrix(np.stack(columns, axis=1), tuple(names))


def _expand_terms(cohort: CohortTable, formula: tuple, conditioning: str) -> tuple:
    """Resolve the ``main`` keyword; pass explicit term lists through."""
    if "main" in formula:
        covs = _saturated_covariates(cohort, tuple(t for t in formula if t != "main"))
        terms = list(covs)
        if conditioning is not None:
            terms.append(conditioning)
        return tuple(terms)
    return formula


# -- outcome models -----------------------------------------------------------


@dataclass(frozen=True)
class OutcomePredictions:
    """Per-unit predictions under every version (or arm).

    ``matrix`` is (n, n_versions) for version conditioning or (n, 2) for arm
    conditioning; NaN marks a saturated cell with no training data.
    ``missing_cells`` lists those cells as (stratum values, column label).
    """

    matrix: np.ndarray
    conditioning: str
    flags: tuple[str, ...] = ()
    missing_cells: tuple = ()


def _fit_rows(cohort: CohortTable, conditioning: str) -> np.ndarray:
    has_y = ~np.isnan(cohort.outcome)
    if conditioning == "version":
        usable = has_y & (cohort.version_idx >= 0)
    else:
        usable = has_y & (cohort.arm >= 0)
    rows = np.flatnonzero(usable)
    if rows.size == 0:
        raise EstimationError("no units with observed treatment and outcome")
    return rows


def _cell_mean_predictions(cohort: CohortTable, covs: Sequence[str], conditioning: str) -> OutcomePredictions:
    rows = _fit_rows(cohort, conditioning)
    codes, labels = cohort.stratum_codes(covs)
    group = cohort.version_idx if conditioning == "version" else cohort.arm
    width = cohort.n_versions if conditioning == "version" else 2
    col_labels = cohort.arm_spec.all_versions if conditioning == "version" else ("arm0", "arm1")
    sums = np.zeros((len(labels), width))
    counts = np.zeros((len(labels), width))
    np.add.at(sums, (codes[rows], group[rows]), cohort.outcome[rows])
    np.add.at(counts, (codes[rows], group[rows]), 1.0)
    with np.errstate(invalid="ignore"):
        means = sums / counts
    matrix = means[codes, :]
    missing = tuple(
        (labels[s], col_labels[k]) for s in range(len(labels)) for k in range(width) if counts[s, k] == 0
    )
    return OutcomePredictions(matrix=matrix, conditioning=conditioning, missing_cells=missing)


def _glm_outcome_predictions(cohort: CohortTable, terms: tuple, conditioning: str) -> OutcomePredictions:
    rows = _fit_rows(cohort, conditioning)
    fit_cohort = cohort.subset(rows) if rows.size != cohort.n else cohort
    X = build_design(fit_cohort, terms)
    y = fit_cohort.outcome
    if cohort.outcome_kind == "binary":
        model = glm.fit_logistic(X, y)
    else:
        model = glm.fit_ols(X, y)
    flags = model.flags
    if isinstance(model, glm.LogisticModel) and not model.converged:
        flags = flags + ("outcome_model_not_converged",)
    width = cohort.n_versions if conditioning == "version" else 2
    matrix = np.empty((cohort.n, width))
    for k in range(width):
        if conditioning == "version":
            Xk = build_design(cohort, terms, version_override=np.full(cohort.n, k, dtype=np.int16))
        else:
            Xk = build_design(cohort, terms, arm_override=np.full(cohort.n, k, dtype=np.int8))
        matrix[:, k] = model.predict(Xk.values)
    return OutcomePredictions(matrix=matrix, conditioning=conditioning, flags=flags)


def _forest_features(cohort: CohortTable, conditioning: str, override: np.ndarray | None) -> np.ndarray:
    base = cohort.covariates
    if conditioning == "version":
        vidx = cohort.version_idx if override is None else override
        onehot = np.stack([(vidx == k).astype(float) for k in range(cohort.n_versions)], axis=1)
        return np.concatenate([base, onehot], axis=1)
    arm = cohort.arm if override is None else override
    return np.concatenate([base, arm.astype(float)[:, None]], axis=1)


def _forest_outcome_predictions(cohort: CohortTable, config: ModelConfig, conditioning: str) -> OutcomePredictions:
    rows = _fit_rows(cohort, conditioning)
    fit_cohort = cohort.subset(rows) if rows.size != cohort.n else cohort
    X = _forest_features(fit_cohort, conditioning, None)
    y = fit_cohort.outcome
    task = "classification" if cohort.outcome_kind == "binary" else "regression"
    if task == "classification":
        model = fit_forest(X, y.astype(int), config.forest_config(), task="classification")
        one_col = model.classes.index(1) if 1 in model.classes else None
    else:
        model = fit_forest(X, y, config.forest_config(), task="regression")
        one_col = None
    width = cohort.n_versions if conditioning == "version" else 2
    matrix = np.empty((cohort.n, width))
    for k in range(width):
        if conditioning == "version":
            feats = _forest_features(cohort, conditioning, np.full(cohort.n, k, dtype=np.int16))
        else:
            feats = _forest_features(cohort, conditioning, np.full(cohort.n, k, dtype=np.int8))
        pred = predict_forest(model, feats)
        if task == "classification":
            matrix[:, k] = pred[:, one_col] if one_col is not None else 0.0
        else:
            matrix[:, k] = pred
    return OutcomePredictions(matrix=matrix, conditioning=conditioning, flags=model.flags)


def outcome_predictions(cohort: CohortTable, config: ModelConfig, conditioning: str = "version") -> OutcomePredictions:
    """Fit the configured outcome model and predict under every version/arm."""
    if conditioning not in ("version", "arm"):
        raise SchemaError(f"conditioning must be version or arm, got {conditioning!r}")
    if config.kind == "forest":
        return _forest_outcome_predictions(cohort, config, conditioning)
    if "saturated" in config.formula:
        covs = _saturated_covariates(cohort, config.formula)
        return _cell_mean_predictions(cohort, covs, conditioning)
    factor = "K" if conditioning == "version" else "A"
    terms = _expand_terms(cohort, config.formula, factor)
    return _glm_outcome_predictions(cohort, terms, conditioning)


def additive_fallback(config: ModelConfig) -> ModelConfig:
    """Main-effects GLM used when a saturated cell has no data."""
    return ModelConfig(kind="glm", formula=("main",))


# -- treatment models ---------------------------------------------------------


@dataclass(frozen=True)
class TreatmentProbabilities:
    """Joint probability of receiving each version given covariates, (n, n_versions)."""

    matrix: np.ndarray
    flags: tuple[str, ...] = ()

    def arm_probability(self, cohort: CohortTable, arm: int) -> np.ndarray:
        idx = cohort.arm_spec.control_indices if arm == 0 else cohort.arm_spec.treated_indices
        return self.matrix[:, list(idx)].sum(axis=1)


def _empirical_treatment(cohort: CohortTable, covs: Sequence[str]) -> TreatmentProbabilities:
    codes, labels = cohort.stratum_codes(covs)
    observed = cohort.version_idx >= 0
    counts = np.zeros((len(labels), cohort.n_versions))
    np.add.at(counts, (codes[observed], cohort.version_idx[observed]), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise EstimationError("stratum without any observed treatment")
    probs = counts / totals
    return TreatmentProbabilities(matrix=probs[codes, :])


def _multinomial_treatment(cohort: CohortTable, terms: tuple) -> TreatmentProbabilities:
    observed = np.flatnonzero(cohort.version_idx >= 0)
    fit_cohort = cohort.subset(observed) if observed.size != cohort.n else cohort
    X = build_design(fit_cohort, terms)
    labels = fit_cohort.version_idx.astype(int)
    present = tuple(int(v) for v in np.unique(labels))
    if len(present) < 2:
        raise EstimationError("only one version observed; treatment model is degenerate")
    model = glm.fit_multinomial(X, labels, reference=present[0])
    flags = model.flags
    if not model.converged:
        flags = flags + ("treatment_model_not_converged",)
    Xall = build_design(cohort, terms)
    probs = model.predict(Xall.values)
    matrix = np.zeros((cohort.n, cohort.n_versions))
    for j, cls in enumerate(model.classes):
        matrix[:, int(cls)] = probs[:, j]
    return TreatmentProbabilities(matrix=matrix, flags=flags)


def _forest_treatment(cohort: CohortTable, config: ModelConfig) -> TreatmentProbabilities:
    observed = np.flatnonzero(cohort.version_idx >= 0)
    fit_cohort = cohort.subset(observed) if observed.size != cohort.n else cohort
    labels = fit_cohort.version_idx.astype(int)
    if len(np.unique(labels)) < 2:
        raise EstimationError("only one version observed; treatment model is degenerate")
    model = fit_forest(fit_cohort.covariates, labels, config.forest_config(), task="classification")
    probs = predict_forest(model, cohort.covariates)
    matrix = np.zeros((cohort.n, cohort.n_versions))
    for j, cls in enumerate(model.classes):
        matrix[:, int(cls)] = probs[:, j]
    return TreatmentProbabilities(matrix=matrix, flags=model.flags)


def treatment_probabilities(cohort: CohortTable, config: ModelConfig) -> TreatmentProbabilities:
    """Fit the joint propensity model over all versions.

    Disjoint arm version sets mean a single multinomial over versions carries
    the arm information as well; arm-level probabilities are marginal sums.
    """
    if config.kind == "forest":
        return _forest_treatment(cohort, config)
    if "saturated" in config.formula:
        covs = _saturated_covariates(cohort, config.formula)
        return _empirical_treatment(cohort, covs)
    terms = _expand_terms(cohort, config.formula, None)
    bad = [t for t in terms if t in _FACTOR_TOKENS or (not isinstance(t, str) and any(f in _FACTOR_TOKENS for f in t))]
    if bad:
        raise SchemaError("treatment model formula cannot condition on K or A")
    return _multinomial_treatment(cohort, terms)
