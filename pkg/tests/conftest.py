import numpy as np
import pytest

from recurrence_bow.dsift import PatchGridParams
from recurrence_bow.pipeline import PipelineConfig
from recurrence_bow.svm import CvPlan
from recurrence_bow.timeseries_io import Dataset, TimeSeries, save_ucr_file


def toy_series(n_per_class, length=64, seed=0, offset=0):
    """Noisy sine (raw label 1) vs noisy square wave (raw label 2)."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 4 * np.pi, length)
    out = []
    for k in range(n_per_class):
        phase = rng.uniform(0, np.pi)
        out.append(TimeSeries(np.sin(t + phase) + 0.1 * rng.normal(size=length), 1, offset + 2 * k))
        out.append(TimeSeries(np.sign(np.sin(t + phase)) + 0.1 * rng.normal(size=length), 2, offset + 2 * k + 1))
    return out


@pytest.fixture
def toy():
    return Dataset("Toy", toy_series(6, seed=0), toy_series(5, seed=1), 2, {1: 1, 2: 2})


@pytest.fixture
def toy_cfg():
    return PipelineConfig(grid=PatchGridParams((16,), 8), codebook_size=8, bag_size=2000,
                          cv=CvPlan(folds=2, c_grid=(0.25, 4.0)), kmeans_iters=10)


@pytest.fixture
def toy_root(tmp_path, toy):
    root = tmp_path / "ucr"
    (root / "Toy").mkdir(parents=True)
    save_ucr_file(toy.train, root / "Toy" / "Toy_TRAIN.tsv", delimiter="\t")
    save_ucr_file(toy.test, root / "Toy" / "Toy_TEST.tsv", delimiter="\t")
    return root


# acceptance criteria append "PASS/FAIL ..." lines here; they are echoed in the terminal summary
ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


@pytest.fixture
def acceptance_log(request):
    lines = request.config.stash[ACCEPTANCE_LINES]

    def record(line):
        lines.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
