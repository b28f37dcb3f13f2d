import numpy as np
import pytest

from camadapt.world import Landmark, WorldSpec, N_BANDS


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(analytic, numeric) -> float:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return float(np.max(np.abs(analytic - numeric)) / (np.max(np.abs(analytic)) + 1e-8))


def room(n: int = 12, obstacles=(), landmarks=()) -> WorldSpec:
    """Walled n x n room with optional (i, j, height) obstacles."""
    heights = np.zeros((n, n))
    heights[0, :] = heights[-1, :] = heights[:, 0] = heights[:, -1] = 2.0
    for i, j, h in obstacles:
        heights[i, j] = h
    textures = np.zeros((n, n, N_BANDS, 3))
    for i, j in np.argwhere(heights > 0):
        for k in range(N_BANDS):
            textures[i, j, k] = (0.1 + 0.1 * k, 0.5, 0.9 - 0.1 * k)
    return WorldSpec(heights, textures, list(landmarks), world_id=0, seed=0)


@pytest.fixture
def empty_room():
    return room()


@pytest.fixture(scope="session")
def small_splits():
    from camadapt.episodes import generate_splits
    return generate_splits(seed=3, n_train_worlds=2, n_unseen_worlds=1, n_train=6,
                           n_val_seen=3, n_val_unseen=3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
