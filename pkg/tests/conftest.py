import numpy as np
import pytest

from pmcausal.core import (
    ArmSpec,
    CohortTable,
    CovariateSpec,
    DecisionRule,
    PMAlgorithm,
    UnitRecord,
)


def single_pool_algorithm():
    """One treated version, recommended to everyone."""
    arm = ArmSpec(control_versions=("k0",), treated_versions=("k1",))
    return PMAlgorithm(rules=(DecisionRule(when=(), recommend="k1"),), arm_spec=arm)


def four_unit_cohort(with_counterfactuals=False):
    """Two strata of one binary covariate, one unit per (stratum, version).

    Cell means: (C=0, k1) -> 2, (C=0, k0) -> 0, (C=1, k1) -> 4, (C=1, k0) -> 2.
    Stratified means give E[Y(1, k1)] = 3 and E[Y(0, k0)] = 1.
    """
    arm = ArmSpec(control_versions=("k0",), treated_versions=("k1",))
    specs = (CovariateSpec("C"),)
    data = [
        ("u0", 0.0, "k1", 2.0),
        ("u1", 0.0, "k0", 0.0),
        ("u2", 1.0, "k1", 4.0),
        ("u3", 1.0, "k0", 2.0),
    ]
    cf_table = {
        "u0": {"k0": 0.5, "k1": 2.0},
        "u1": {"k0": 0.0, "k1": 1.5},
        "u2": {"k0": 2.5, "k1": 4.0},
        "u3": {"k0": 2.0, "k1": 4.5},
    }
    records = [
        UnitRecord(
            unit_id=uid,
            profile={"C": c},
            observed_version=v,
            observed_outcome=y,
            counterfactuals=cf_table[uid] if with_counterfactuals else {},
        )
        for uid, c, v, y in data
    ]
    return CohortTable.from_records(records, specs, arm, "continuous")


@pytest.fixture
def cohort4():
    return four_unit_cohort()


@pytest.fixture
def cohort4_cf():
    return four_unit_cohort(with_counterfactuals=True)


@pytest.fixture
def pool_algorithm():
    return single_pool_algorithm()


def synthetic_pdx_records(n_eligible=88, seed=0, effect=30.0, noise=6.0):
    """Planted-effect screen: the biomarker-matched drug beats the reference
    by ``effect`` on average, with mild cross-penalties, so the true
    algorithm-vs-reference contrast is recoverable from the table itself."""
    from pmcausal.pdx import CONTROL_DRUG, MEK_DRUG, PI3K_DRUG, DrugResponse, PdxModelRecord

    rng = np.random.default_rng(seed)
    records = []
    i = 0
    while len(records) < n_eligible:
        i += 1
        kras = int(rng.random() < 0.35)
        braf = int(rng.random() < 0.15)
        pik = int(rng.random() < 0.40)
        pten = int(rng.random() < 0.30)
        if not (kras or braf or pik):
            continue
        mek_marker = int(kras or braf)
        base = 15.0 + 6.0 * rng.standard_normal()
        lee = base + noise * rng.standard_normal()
        bini = base - effect * mek_marker + 6.0 * pik + 4.0 * pten + noise * rng.standard_normal()
        byl = base - effect * pik + 6.0 * mek_marker + 4.0 * pten + noise * rng.standard_normal()
        responses = {
            CONTROL_DRUG: DrugResponse(lee, int(lee < 0.0)),
            MEK_DRUG: DrugResponse(bini, int(bini < 0.0)),
            PI3K_DRUG: DrugResponse(byl, int(byl < 0.0)),
        }
        records.append(
            PdxModelRecord(
                model_id=f"m{i:03d}",
                tissue="colon" if i % 2 else "lung",
                flags={"KRAS": kras, "BRAF": braf, "PIK3CA": pik, "PTEN": pten},
                responses=responses,
            )
        )
    return records
