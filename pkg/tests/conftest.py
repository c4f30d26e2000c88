import hypothesis
import numpy as np
import pytest

hypothesis.settings.register_profile(
    "default", max_examples=60, deadline=None, derandomize=True)
hypothesis.settings.load_profile("default")


@pytest.fixture(scope="session")
def gamma_sample():
    """A fixed 100k Gamma(2,1) draw shared across expensive tests."""
    from transun.synthdata import RngStream, sample

    return sample("RS-G", 100_000, RngStream(90210))


@pytest.fixture(scope="session")
def toy_dataset():
    """The bundled toy CSV, bucketized with its committed schema."""
    from pathlib import Path

    from transun.harness import ColumnSpec, CsvSchema, load_csv

    schema = CsvSchema(columns=(
        ColumnSpec("channel", "categorical", buckets=16),
        ColumnSpec("item", "categorical", buckets=64),
        ColumnSpec("position", "continuous", bins=8),
        ColumnSpec("duration", "target"),
    ))
    path = Path(__file__).resolve().parent.parent / "data" / "toy_sessions.csv"
    ds, _ = load_csv(path, schema)
    return ds


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
