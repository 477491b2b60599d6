"""Shared fixtures: the small synthetic benchmark used by the acceptance suite.

Full-size training runs are expensive on one core, so each (attention kind,
labeled fraction) model is trained at most once per session and shared by
every test that needs it.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from st_impute.data import generate_synthetic, split_train_test
from st_impute.experiment import corrupt, impute_with_model, model_config_for, score
from st_impute.model import StImputeModel
from st_impute.training import TrainConfig, train

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}

BENCH_SEED = 0
BENCH_BATCH_SIZE = 8
BENCH_EPOCHS = 100
PATTERN_TAGS = {"mcar": 0, "fixed_block": 1, "variable_block": 2}


@dataclass
class TrainedRun:
    model: StImputeModel
    trace: list
    best_epoch: int
    train_seconds: float


@dataclass
class Bench:
    """200 series x 48 steps x 2 features, 80/20 split, z-scored on train."""

    dataset: object
    train_arrays: list
    test_arrays: list
    train_labels: np.ndarray
    runs: dict = field(default_factory=dict)

    def trained(self, kind: str = "sparse", labeled_fraction: float = 1.0) -> TrainedRun:
        key = (kind, labeled_fraction)
        if key not in self.runs:
            model = StImputeModel(model_config_for(self.dataset, {"init_seed": BENCH_SEED}, kind))
            cfg = TrainConfig(epochs=BENCH_EPOCHS, batch_size=BENCH_BATCH_SIZE, seed=BENCH_SEED,
                              labeled_fraction=labeled_fraction)
            t0 = time.process_time()
            res = train(model, self.train_arrays, cfg, labels=self.train_labels)
            self.runs[key] = TrainedRun(model, res.trace, res.best_epoch, time.process_time() - t0)
        return self.runs[key]

    def corrupted(self, pattern: str, rate: float):
        tag = 100 * PATTERN_TAGS[pattern] + int(round(rate * 100))
        return corrupt(self.test_arrays, pattern, rate, BENCH_SEED, tag=tag)

    def model_rmse(self, run: TrainedRun, pattern: str, rate: float) -> float:
        corrupted, holdouts = self.corrupted(pattern, rate)
        return score(impute_with_model(run.model, corrupted), self.test_arrays, holdouts)["rmse"]


@pytest.fixture(scope="session")
def bench() -> Bench:
    ds = generate_synthetic(n_series=200, length=48, n_features=2, seed=BENCH_SEED, task="classification")
    split_train_test(ds, 0.2, BENCH_SEED)
    ds.fit_normalization()
    train_series = ds.subset("train")
    return Bench(
        dataset=ds,
        train_arrays=ds.normalized(train_series),
        test_arrays=ds.normalized(ds.subset("test")),
        train_labels=np.array([s.label for s in train_series], dtype=float),
    )


@pytest.fixture
def record_criterion():
    def record(number: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
