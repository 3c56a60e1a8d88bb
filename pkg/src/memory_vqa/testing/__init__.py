"""Testing dir init"""

from .synthetic_surgical_vqa import SyntheticSurgicalVQA, case_a_samples
from .testing_shr import (
    OracleFixture,
    build_oracle_fixture,
    dataset_config,
    write_native_dataset,
)
