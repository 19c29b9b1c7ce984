import numpy as np
import pytest

from slopesim.datatypes import (
    LongitudinalDataset,
    Provenance,
    ScenarioConfig,
    SubjectRecord,
)


def make_dataset(rows, provenance=Provenance.INGESTED) -> LongitudinalDataset:
    """Build a dataset from (subject_id, predictor, times, responses) tuples."""
    subjects = []
    for sid, pred, times, responses in rows:
        subjects.append(
            SubjectRecord(
                subject_id=sid,
                predictor=float(pred),
                times=tuple(float(t) for t in times),
                responses=tuple(float(y) for y in responses),
            )
        )
    return LongitudinalDataset(subjects=tuple(subjects), provenance=provenance)


@pytest.fixture(scope="session")
def small_cfg() -> ScenarioConfig:
    """A quick-to-fit scenario used by several suites."""
    return ScenarioConfig(n_subjects=25, nominal_times=(0.0, 2.0, 4.0, 6.0), master_seed=414243)


@pytest.fixture(scope="session")
def rng() -> np.random.Generator:
    return np.random.default_rng(99)
