import json

import pytest

from dngpa.simgen import DatasetSpec, SimConfig, build_dataset, load_dataset, save_dataset

SMALL_SPEC = DatasetSpec(id_grid=(2900.0, 3200.0, 100.0), ood_grid=(2500.0, 2600.0, 100.0), n_train=48)


def _cached(cache_dir, spec: DatasetSpec, sim: SimConfig):
    meta = cache_dir / "dataset.json"
    if meta.exists():
        stored = json.loads(meta.read_text())
        if stored.get("spec") == spec.to_dict() and stored.get("sim") == sim.to_dict():
            return load_dataset(cache_dir)
    ds = build_dataset(spec, sim)
    save_dataset(ds, cache_dir)
    # round-trip through the on-disk format so cached and fresh runs see the same arrays
    return load_dataset(cache_dir)


@pytest.fixture(scope="session")
def default_dataset(request):
    """The full default dataset, cached between sessions in the pytest cache."""
    return _cached(request.config.cache.mkdir("dngpa-default-dataset"), DatasetSpec(), SimConfig())


@pytest.fixture(scope="session")
def small_dataset(request):
    """64 ID triplets (48 train) and 8 OOD triplets; for fast model tests."""
    return _cached(request.config.cache.mkdir("dngpa-small-dataset"), SMALL_SPEC, SimConfig())


@pytest.fixture(scope="session")
def small_dataset_dir(request, small_dataset):
    return request.config.cache.mkdir("dngpa-small-dataset")


@pytest.fixture(scope="session")
def default_dataset_dir(request, default_dataset):
    return request.config.cache.mkdir("dngpa-default-dataset")


# ---------------------------------------------------------------- acceptance summary
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}
N_CRITERIA = 12


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records the outcome and fails the test if not passed."""

    def record(n: int, passed: bool, detail: str):
        ACCEPTANCE_RESULTS[n] = (bool(passed), detail)
        assert passed, f"criterion {n}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        passed, detail = ACCEPTANCE_RESULTS.get(n, (False, "not run"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
