import pytest

from careselect import datagen
from careselect.catalog import (
    CATEGORIES,
    PatientRecord,
    Service,
    ServiceCatalog,
)


@pytest.fixture(scope="session")
def tiny_catalog():
    codes = ["WLKCANE", "GRABBARS", "APNEA", "PHARMACY", "DIETSRV"]
    return ServiceCatalog(
        tuple(Service(i, c, CATEGORIES[i % len(CATEGORIES)]) for i, c in enumerate(codes))
    )


@pytest.fixture
def patient():
    return PatientRecord(
        id="p0001",
        characteristics={"age": 80.0, "cond_00": 1.0, "cond_01": 0.0},
        los=12.5,
        observed_plan=frozenset({0, 2}),
        observed_outcome=1,
    )


@pytest.fixture(scope="session")
def small_spec():
    return datagen.CohortSpec(
        n_patients=600,
        n_services=10,
        n_characteristics=8,
        plan_size_mean=3.0,
        bias_strength=1.0,
        seed=11,
    )


@pytest.fixture(scope="session")
def small_truth(small_spec):
    return datagen.generate_ground_truth(small_spec)


@pytest.fixture(scope="session")
def small_cohort(small_truth):
    return datagen.sample_cohort(small_truth)


@pytest.fixture(scope="session")
def small_ensemble(small_truth):
    return datagen.truth_to_ensemble(small_truth)
