"""Causal mean and effect estimators under multiple versions of treatment.

Every estimator targets building-block means of the form "expected outcome
had arm ``a`` been assigned with versions drawn from a given rule or
distribution", on a cohort already restricted to algorithm-eligible units:

* ``version``: a single fixed version of one arm.
* ``distribution``: a conditional distribution over treated versions, which
  covers the algorithm arm (all mass on the recommendation) and uniform or
  tabulated random assignment.
* ``physician``: versions as actually assigned within an arm, estimated at
  the arm level without conditioning on the version.

Methods: ``true`` (counterfactual columns), ``naive`` (raw cell means),
``std`` (outcome-model standardization), ``ipw`` (joint-propensity
Horvitz-Thompson ratios), and ``tmle`` (standardization after a targeted
one-parameter fluctuation of the outcome model).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    CohortTable,
    DataError,
    EstimationError,
    PMAlgorithm,
    SchemaError,
    VersionDistribution,
)
from .glm import expit
from .modeling import (
    ModelConfig,
    OutcomePredictions,
    TreatmentProbabilities,
    additive_fallback,
    default_stratifier,
    outcome_predictions,
    treatment_probabilities,
)

METHODS = ("true", "naive", "std", "ipw", "tmle")
ESTIMANDS = ("CE1", "CE2", "CE3")

__all__ = [
    "METHODS",
    "ESTIMANDS",
    "RegimeTarget",
    "EstimandSpec",
    "MethodSpec",
    "MeanEstimate",
    "EffectEstimate",
    "MethodEngine",
    "estimate_effect",
    "estimate_report",
    "report_to_json",
]


@dataclass(frozen=True)
class RegimeTarget:
    """What to intervene on: one version, a version distribution, or the
    observed within-arm assignment."""

    kind: str  # "version" | "distribution" | "physician"
    arm: int = 1
    version: str | None = None
    distribution: VersionDistribution | None = None

    def __post_init__(self):
        if self.kind not in ("version", "distribution", "physician"):
            raise SchemaError(f"unknown regime target {self.kind!r}")
        if self.kind == "version" and self.version is None:
            raise SchemaError("version target needs a version label")
        if self.kind == "distribution" and self.distribution is None:
            raise SchemaError("distribution target needs a version distribution")

    @staticmethod
    def algorithm_arm() -> "RegimeTarget":
        return RegimeTarget(kind="distribution", arm=1, distribution=VersionDistribution.dirac())

    @staticmethod
    def uniform_arm() -> "RegimeTarget":
        return RegimeTarget(kind="distribution", arm=1, distribution=VersionDistribution.uniform())

    @staticmethod
    def single_version(version: str, arm: int) -> "RegimeTarget":
        return RegimeTarget(kind="version", arm=arm, version=version)


@dataclass(frozen=True)
class EstimandSpec:
    """CE1/CE2/CE3 or a raw mean for an explicit target.

    CE1 compares the algorithm arm against one fixed control version, CE2
    against the observed assignment of the same treated versions, CE3
    against their uniform random assignment.
    """

    kind: str
    control_version: str | None = None
    target: RegimeTarget | None = None

    def __post_init__(self):
        if self.kind not in (*ESTIMANDS, "raw-mean"):
            raise SchemaError(f"unknown estimand {self.kind!r}")
        if self.kind == "raw-mean" and self.target is None:
            raise SchemaError("raw-mean estimand needs an explicit target")

    def control_target(self, cohort: CohortTable) -> RegimeTarget | None:
        if self.kind == "CE1":
            version = self.control_version or cohort.arm_spec.control_versions[0]
            return RegimeTarget.single_version(version, cohort.arm_spec.arm_of(version))
        if self.kind == "CE2":
            return RegimeTarget(kind="physician", arm=1)
        if self.kind == "CE3":
            return RegimeTarget.uniform_arm()
        return None


@dataclass(frozen=True)
class MethodSpec:
    """One estimation method plus its model and weighting options."""

    method: str
    outcome_model: ModelConfig = field(default_factory=ModelConfig)
    treatment_model: ModelConfig = field(default_factory=lambda: ModelConfig(formula=("main",)))
    stabilized: bool = False
    truncation_percentile: float | None = None  # e.g. 99 clips at the 1st/99th pct
    outcome_bounds: tuple[float, float] | None = None
    allow_extrapolation: bool = True
    propensity_floor: float = 1e-6

    def __post_init__(self):
        if self.method not in METHODS:
            raise SchemaError(f"unknown method {self.method!r}")
        if self.truncation_percentile is not None and not (50 < self.truncation_percentile < 100):
            raise SchemaError("truncation percentile must lie in (50, 100)")

    @staticmethod
    def from_json(doc: Mapping) -> "MethodSpec":
        return MethodSpec(
            method=doc["method"],
            outcome_model=ModelConfig.from_json(doc.get("outcome_model")),
            treatment_model=ModelConfig.from_json(doc.get("treatment_model"), ModelConfig(formula=("main",))),
            stabilized=bool(doc.get("stabilized", False)),
            truncation_percentile=doc.get("truncation_percentile"),
            outcome_bounds=tuple(doc["outcome_bounds"]) if doc.get("outcome_bounds") else None,
            allow_extrapolation=bool(doc.get("allow_extrapolation", True)),
        )


@dataclass(frozen=True)
class MeanEstimate:
    value: float
    flags: tuple[str, ...] = ()
    weight_min: float | None = None
    weight_max: float | None = None
    weight_mean: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise EstimationError("non-finite mean estimate")


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str
    method: str
    pm_mean: MeanEstimate
    control_mean: MeanEstimate | None
    effect: float

    @property
    def flags(self) -> tuple[str, ...]:
        flags = self.pm_mean.flags
        if self.control_mean is not None:
            flags = flags + self.control_mean.flags
        return tuple(dict.fromkeys(flags))


def _weight_summary(w: np.ndarray) -> dict:
    return {
        "weight_min": float(np.min(w)),
        "weight_max": float(np.max(w)),
        "weight_mean": float(np.mean(w)),
    }


class MethodEngine:
    """Fitted-model cache for one (cohort, method) pair.

    All targets of all estimands reuse the same outcome and treatment fits,
    which also guarantees every estimand sees the identical eligible cohort.
    """

    def __init__(
        self,
        cohort: CohortTable,
        spec: MethodSpec,
        algorithm: PMAlgorithm,
        model_cache: dict | None = None,
    ):
        self.cohort = cohort
        self.spec = spec
        self.algorithm = algorithm
        self._recommend: np.ndarray | None = None
        self._cache = model_cache if model_cache is not None else {}
        self._strat_codes = None

    # -- shared pieces ----------------------------------------------------

    @property
    def recommended(self) -> np.ndarray:
        if self._recommend is None:
            rec = self.algorithm.recommend_indices(self.cohort)
            if np.any(rec < 0):
                raise EstimationError("cohort contains ineligible units; restrict before estimating")
            self._recommend = rec
        return self._recommend

    def _codes(self):
        if self._strat_codes is None:
            self._strat_codes = self.cohort.stratum_codes(default_stratifier(self.cohort))
        return self._strat_codes

    def _outcome(self, conditioning: str) -> OutcomePredictions:
        key = ("outcome", self.spec.outcome_model, conditioning)
        if key not in self._cache:
            self._cache[key] = outcome_predictions(self.cohort, self.spec.outcome_model, conditioning)
        return self._cache[key]

    def _treatment_probs(self) -> TreatmentProbabilities:
        key = ("treatment", self.spec.treatment_model)
        if key not in self._cache:
            self._cache[key] = treatment_probabilities(self.cohort, self.spec.treatment_model)
        return self._cache[key]

    def _target_weight_matrix(self, target: RegimeTarget) -> np.ndarray:
        """(n, n_versions) mass the regime puts on each version per unit."""
        n, m = self.cohort.n, self.cohort.n_versions
        if target.kind == "version":
            w = np.zeros((n, m))
            w[:, self.cohort.arm_spec.index_of(target.version)] = 1.0
            return w
        return target.distribution.weights_matrix(self.cohort, self.algorithm)

    def _resolve_outcome_matrix(self, target: RegimeTarget, weights: np.ndarray | None):
        """Outcome predictions plus the extrapolation/fallback policy.

        Saturated models cannot predict into an empty (stratum, version)
        cell: either fall back to the additive model (flagged) or raise a
        positivity violation. Parametric and forest models extrapolate,
        which is only flagged when a needed cell is empty.
        """
        conditioning = "arm" if target.kind == "physician" else "version"
        preds = self._outcome(conditioning)
        flags = preds.flags
        if conditioning == "arm":
            needed = np.zeros((self.cohort.n, 2), dtype=bool)
            needed[:, target.arm] = True
        else:
            needed = weights > 0
        matrix = preds.matrix
        if np.any(np.isnan(matrix[needed])):
            cells = self._needed_missing_cells(needed, conditioning)
            if not self.spec.allow_extrapolation:
                raise EstimationError("positivity violation: no data for needed cells", cells=cells)
            key = ("outcome", additive_fallback(self.spec.outcome_model), conditioning)
            if key not in self._cache:
                self._cache[key] = outcome_predictions(self.cohort, key[1], conditioning)
            fb = self._cache[key]
            matrix = fb.matrix
            flags = flags + fb.flags + ("saturated_fallback",)
        elif self._any_needed_cell_empty(needed, conditioning):
            flags = flags + ("extrapolated",)
        return matrix, flags

    def _needed_missing_cells(self, needed: np.ndarray, conditioning: str):
        codes, labels = self._codes()
        group = self.cohort.version_idx if conditioning == "version" else self.cohort.arm
        width = needed.shape[1]
        counts = np.zeros((len(labels), width))
        ok = group >= 0
        np.add.at(counts, (codes[ok], group[ok]), 1.0)
        out = []
        col_labels = self.cohort.arm_spec.all_versions if conditioning == "version" else ("arm0", "arm1")
        for s in range(len(labels)):
            in_s = codes == s
            for k in range(width):
                if counts[s, k] == 0 and np.any(needed[in_s, k]):
                    out.append((labels[s], col_labels[k]))
        return out

    def _any_needed_cell_empty(self, needed: np.ndarray, conditioning: str) -> bool:
        return bool(self._needed_missing_cells(needed, conditioning))

    def _check_versions_present(self, weights: np.ndarray):
        for k in np.flatnonzero(weights.sum(axis=0) > 0):
            if not np.any(self.cohort.version_idx == k):
                raise EstimationError(
                    f"empty treatment cell: no unit received {self.cohort.arm_spec.all_versions[int(k)]!r}"
                )

    # -- methods -----------------------------------------------------------

    def mean(self, target: RegimeTarget) -> MeanEstimate:
        return getattr(self, f"_{self.spec.method}_mean")(target)

    def _true_mean(self, target: RegimeTarget) -> MeanEstimate:
        cf = self.cohort.counterfactuals
        if cf is None:
            raise EstimationError("oracle method needs counterfactual columns")
        versions = self.cohort.arm_spec.all_versions
        if target.kind == "physician":
            rows = np.flatnonzero(self.cohort.arm == target.arm)
            if rows.size == 0:
                raise EstimationError("empty treatment cell: no unit observed in the target arm")
            vals = cf[rows, self.cohort.version_idx[rows]]
            if np.any(np.isnan(vals)):
                bad = sorted({versions[int(k)] for k in self.cohort.version_idx[rows][np.isnan(vals)]})
                raise EstimationError(f"missing counterfactual columns: {bad}")
            return MeanEstimate(float(np.mean(vals)))
        weights = self._target_weight_matrix(target)
        used = np.flatnonzero(weights.sum(axis=0) > 0)
        missing = [versions[int(k)] for k in used if np.any(np.isnan(cf[:, k]))]
        if missing:
            raise EstimationError(f"missing counterfactual columns: {missing}")
        return MeanEstimate(float(np.mean(np.sum(weights * np.nan_to_num(cf), axis=1))))

    def _naive_mean(self, target: RegimeTarget) -> MeanEstimate:
        y = self.cohort.outcome
        observed = ~np.isnan(y)
        if target.kind == "physician":
            sel = observed & (self.cohort.arm == target.arm)
            if not np.any(sel):
                raise EstimationError("empty treatment cell: no observed unit in the target arm")
            return MeanEstimate(float(np.mean(y[sel])))
        if target.kind == "distribution" and target.distribution.kind == "dirac":
            sel = observed & (self.cohort.version_idx == self.recommended)
            if not np.any(sel):
                raise EstimationError("empty treatment cell: nobody received the recommended version")
            return MeanEstimate(float(np.mean(y[sel])))
        weights = self._target_weight_matrix(target)
        share = weights.mean(axis=0)
        total = 0.0
        for k in np.flatnonzero(share > 0):
            sel = observed & (self.cohort.version_idx == k)
            if not np.any(sel):
                raise EstimationError(
                    f"empty treatment cell: no unit received {self.cohort.arm_spec.all_versions[int(k)]!r}"
                )
            total += share[k] * float(np.mean(y[sel]))
        return MeanEstimate(total)

    def _std_mean(self, target: RegimeTarget) -> MeanEstimate:
        if target.kind == "physician":
            matrix, flags = self._resolve_outcome_matrix(target, None)
            return MeanEstimate(float(np.mean(matrix[:, target.arm])), flags=flags)
        weights = self._target_weight_matrix(target)
        self._check_versions_present(weights)
        matrix, flags = self._resolve_outcome_matrix(target, weights)
        return MeanEstimate(float(np.mean(np.sum(weights * matrix, axis=1))), flags=flags)

    def _ipw_pieces(self, target: RegimeTarget):
        """Indicator, raw weights and flags for one Horvitz-Thompson ratio."""
        probs = self._treatment_probs()
        flags = list(probs.flags)
        y_observed = ~np.isnan(self.cohort.outcome)
        if target.kind == "physician":
            ind = y_observed & (self.cohort.arm == target.arm)
            f = probs.arm_probability(self.cohort, target.arm)
        else:
            weights = self._target_weight_matrix(target)
            if target.distribution is not None and target.distribution.kind == "dirac":
                ind = y_observed & (self.cohort.version_idx == self.recommended)
            else:
                k = self.cohort.arm_spec.index_of(target.version)
                ind = y_observed & (self.cohort.version_idx == k)
            f = np.where(
                self.cohort.version_idx >= 0,
                probs.matrix[np.arange(self.cohort.n), np.maximum(self.cohort.version_idx, 0)],
                np.nan,
            )
        if not np.any(ind):
            raise EstimationError("empty treatment cell: nobody matches the weighting indicator")
        f_on = f[ind]
        if np.any(f_on < self.spec.propensity_floor):
            flags.append("propensity_floored")
            f_on = np.maximum(f_on, self.spec.propensity_floor)
        w = 1.0 / f_on
        if self.spec.stabilized:
            w = w * float(np.mean(ind))
        return ind, w, flags

    def _ht_ratio(self, target: RegimeTarget) -> MeanEstimate:
        ind, w, flags = self._ipw_pieces(target)
        raw = _weight_summary(w)
        if self.spec.truncation_percentile is not None:
            lo = np.percentile(w, 100 - self.spec.truncation_percentile)
            hi = np.percentile(w, self.spec.truncation_percentile)
            clipped = np.clip(w, lo, hi)
            if np.any(clipped != w):
                flags.append("weights_truncated")
            w = clipped
        y = self.cohort.outcome[ind]
        value = float(np.sum(w * y) / np.sum(w))
        return MeanEstimate(value, flags=tuple(dict.fromkeys(flags)), **raw)

    def _ipw_mean(self, target: RegimeTarget) -> MeanEstimate:
        if target.kind in ("version", "physician"):
            return self._ht_ratio(target)
        if target.distribution.kind == "dirac":
            return self._ht_ratio(target)
        # general distribution: per-version ratios combined at the average mass
        weights = self._target_weight_matrix(target)
        self._check_versions_present(weights)
        share = weights.mean(axis=0)
        versions = self.cohort.arm_spec.all_versions
        total = 0.0
        flags: list[str] = []
        w_min = w_max = w_mean = None
        acc = []
        for k in np.flatnonzero(share > 0):
            part = self._ht_ratio(RegimeTarget.single_version(versions[int(k)], target.arm))
            total += share[k] * part.value
            flags.extend(part.flags)
            acc.append((part.weight_min, part.weight_max, part.weight_mean))
        if acc:
            w_min = min(a[0] for a in acc)
            w_max = max(a[1] for a in acc)
            w_mean = float(np.mean([a[2] for a in acc]))
        return MeanEstimate(total, flags=tuple(dict.fromkeys(flags)), weight_min=w_min, weight_max=w_max, weight_mean=w_mean)

    # -- tmle ---------------------------------------------------------------

    def _bounds(self) -> tuple[float, float]:
        if self.cohort.outcome_kind == "binary":
            return 0.0, 1.0
        if self.spec.outcome_bounds is not None:
            lo, hi = self.spec.outcome_bounds
        else:
            y = self.cohort.outcome[~np.isnan(self.cohort.outcome)]
            if y.size == 0:
                raise EstimationError("no observed outcomes")
            span = float(np.max(y) - np.min(y)) or 1.0
            lo, hi = float(np.min(y)) - 0.1 * span, float(np.max(y)) + 0.1 * span
        if hi <= lo:
            raise DataError("outcome bounds must satisfy lower < upper")
        y = self.cohort.outcome
        seen = ~np.isnan(y)
        if np.any((y[seen] < lo) | (y[seen] > hi)):
            raise DataError("observed outcomes violate the declared bounds")
        return lo, hi

    @staticmethod
    def _fluctuate(h: np.ndarray, y: np.ndarray, offset: np.ndarray, tol: float = 1e-10):
        """Weighted intercept-only logistic fluctuation; returns (epsilon, flags)."""
        on = h > 0
        if not np.any(on):
            return 0.0, ("no_targeting",)
        h, y, offset = h[on], y[on], offset[on]
        scale = max(1.0, float(np.sum(np.abs(h))))
        eps = 0.0
        for _ in range(60):
            mu = expit(offset + eps)
            score = float(np.sum(h * (y - mu)))
            if abs(score) <= tol * scale:
                return eps, ()
            info = float(np.sum(h * mu * (1.0 - mu)))
            if info <= 0:
                break
            eps += float(np.clip(score / info, -4.0, 4.0))
            if abs(eps) > 30:
                return eps, ("fluctuation_diverged",)
        return eps, ("fluctuation_not_converged",)

    def _tmle_mean(self, target: RegimeTarget) -> MeanEstimate:
        lo, hi = self._bounds()
        span = hi - lo
        probs = self._treatment_probs()
        flags: list[str] = list(probs.flags)
        y = self.cohort.outcome
        observed = ~np.isnan(y)
        y_scaled = np.where(observed, (y - lo) / span, np.nan)

        def scale_clip(q):
            return np.clip((q - lo) / span, 1e-7, 1.0 - 1e-7)

        if target.kind == "physician":
            matrix, m_flags = self._resolve_outcome_matrix(target, None)
            flags.extend(m_flags)
            q_target = scale_clip(matrix[:, target.arm])
            f = np.maximum(probs.arm_probability(self.cohort, target.arm), self.spec.propensity_floor)
            h = np.where(observed & (self.cohort.arm == target.arm), 1.0 / f, 0.0)
            offset = _logit(q_target)
            eps, f_flags = self._fluctuate(h, np.nan_to_num(y_scaled), offset)
            flags.extend(f_flags)
            updated = expit(_logit(q_target) + eps)
            value = lo + span * float(np.mean(updated))
        else:
            weights = self._target_weight_matrix(target)
            self._check_versions_present(weights)
            matrix, m_flags = self._resolve_outcome_matrix(target, weights)
            flags.extend(m_flags)
            q = scale_clip(matrix)
            vidx = self.cohort.version_idx
            has_version = vidx >= 0
            g_obs = np.where(has_version, weights[np.arange(self.cohort.n), np.maximum(vidx, 0)], 0.0)
            f_obs = np.where(
                has_version,
                probs.matrix[np.arange(self.cohort.n), np.maximum(vidx, 0)],
                np.nan,
            )
            f_obs = np.maximum(f_obs, self.spec.propensity_floor)
            floored = has_version & (g_obs > 0) & (probs.matrix[np.arange(self.cohort.n), np.maximum(vidx, 0)] < self.spec.propensity_floor)
            if np.any(floored):
                flags.append("propensity_floored")
            h = np.where(observed & has_version & (g_obs > 0), g_obs / f_obs, 0.0)
            q_obs = np.where(has_version, q[np.arange(self.cohort.n), np.maximum(vidx, 0)], 0.5)
            eps, f_flags = self._fluctuate(h, np.nan_to_num(y_scaled), _logit(q_obs))
            flags.extend(f_flags)
            updated = expit(_logit(q) + eps)
            value = lo + span * float(np.mean(np.sum(weights * updated, axis=1)))
        h_on = h[h > 0]
        summary = _weight_summary(h_on) if h_on.size else {}
        return MeanEstimate(value, flags=tuple(dict.fromkeys(flags)), epsilon=eps, **summary)


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)


def estimate_effect(
    cohort: CohortTable,
    estimand: EstimandSpec,
    method: MethodSpec,
    algorithm: PMAlgorithm,
    engine: MethodEngine | None = None,
) -> EffectEstimate:
    """One effect: algorithm-arm mean minus the estimand's control mean."""
    engine = engine or MethodEngine(cohort, method, algorithm)
    if estimand.kind == "raw-mean":
        mean = engine.mean(estimand.target)
        return EffectEstimate(estimand.kind, method.method, mean, None, mean.value)
    pm = engine.mean(RegimeTarget.algorithm_arm())
    control = engine.mean(estimand.control_target(cohort))
    return EffectEstimate(estimand.kind, method.method, pm, control, pm.value - control.value)


def estimate_report(
    cohort: CohortTable,
    estimands: Sequence[EstimandSpec],
    methods: Sequence[MethodSpec],
    algorithm: PMAlgorithm,
) -> dict:
    """Effects for every (estimand, method) pair on one shared cohort.

    Estimator failures are recorded per cell rather than raised, so a report
    is always produced for the cells that can be computed.
    """
    report: dict = {}
    for mspec in methods:
        engine = MethodEngine(cohort, mspec, algorithm)
        for espec in estimands:
            key = (espec.kind, mspec.method)
            try:
                report[key] = estimate_effect(cohort, espec, mspec, algorithm, engine=engine)
            except (EstimationError, DataError) as err:
                report[key] = err
    return report


def report_to_json(report: Mapping) -> dict:
    """Serializable report: {estimand: {method: {...}}} per the file contract."""
    out: dict = {}
    for (estimand, method), cell in sorted(report.items()):
        entry = out.setdefault(estimand, {})
        if isinstance(cell, Exception):
            entry[method] = {"error": str(cell)}
            continue
        diag = {
            "epsilon": cell.pm_mean.epsilon,
            "weight_max": cell.pm_mean.weight_max,
            "flags": sorted(cell.flags),
        }
        if cell.control_mean is not None and cell.control_mean.weight_max is not None:
            diag["weight_max"] = max(diag["weight_max"] or 0.0, cell.control_mean.weight_max)
        entry[method] = {
            "pm_mean": cell.pm_mean.value,
            "control_mean": None if cell.control_mean is None else cell.control_mean.value,
            "effect": cell.effect,
            "diagnostics": diag,
        }
    return out
