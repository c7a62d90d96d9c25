import numpy as np
import pytest

from scilm.data import Dataset, SyntheticSpec, make_synthetic_longtail
from scilm.sampler import make_rng

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture(scope="session")
def small_ds():
    spec = SyntheticSpec(k_seen=5, t_unseen=3, p=6, q=4, head_count=40, tail_count=3,
                         noise_sigma=0.3, attr_link=2, test_per_class=7, seed=11)
    return make_synthetic_longtail(spec)


def make_sized_dataset(sizes, p=3, q=2, seed=0) -> Dataset:
    """Seen classes 0..len(sizes)-1 holding exactly ``sizes`` training instances."""
    r = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    return Dataset(
        features=r.random((labels.size, p)),
        labels=labels,
        attributes=r.standard_normal((len(sizes), q)),
        seen_classes=list(range(len(sizes))),
        unseen_classes=[],
        train_idx=np.arange(labels.size),
        test_seen_idx=np.array([], dtype=np.int64),
        test_unseen_idx=np.array([], dtype=np.int64),
    )


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def identity_sen(dim: int = 2):
    from scilm.model import SenParams

    return SenParams(np.eye(dim), np.zeros(dim), np.eye(dim), np.zeros(dim))


# (class, point, copies) for the 30 hand-labelled test rows; with the identity
# embedding the class prototypes sit at the attribute rows below.
HANDCRAFTED_ROWS = [
    (0, (1, 1), 8), (0, (9, 1), 2),
    (1, (9, 1), 6), (1, (1, 1), 2), (1, (1, 9), 2),
    (2, (1, 9), 3), (2, (1, 1), 2), (2, (9, 9), 1),
    (3, (9, 9), 3), (3, (9, 1), 1),
]
HANDCRAFTED_CONFUSION = {
    (0, 0): 8, (0, 1): 2, (1, 1): 6, (1, 0): 2, (1, 2): 2,
    (2, 2): 3, (2, 0): 2, (2, 3): 1, (3, 3): 3, (3, 1): 1,
}


def handcrafted_eval_dataset() -> Dataset:
    feats, labels = [], []
    for c, point, copies in HANDCRAFTED_ROWS:
        feats += [point] * copies
        labels += [c] * copies
    # one training row per seen class, away from the test rows
    feats += [(0, 0), (10, 0)]
    labels += [0, 1]
    labels = np.array(labels)
    test = np.arange(30)
    return Dataset(
        features=np.array(feats, dtype=float),
        labels=labels,
        attributes=np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float),
        seen_classes=[0, 1],
        unseen_classes=[2, 3],
        train_idx=np.array([30, 31]),
        test_seen_idx=test[labels[:30] < 2],
        test_unseen_idx=test[labels[:30] >= 2],
    )
