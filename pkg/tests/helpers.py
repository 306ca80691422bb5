"""Shared oracles for the test suite (kept independent of the library paths)."""

import itertools

import numpy as np


def brute_force_wasserstein(x: np.ndarray, y: np.ndarray, theta: float) -> float:
    """Exhaustive search over all pairings; the independent transport oracle."""
    n = len(x)
    diff = x[:, None, :] - y[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** theta
    best = min(
        cost[np.arange(n), perm].sum()
        for perm in itertools.permutations(range(n))
    )
    return (best / n) ** (1.0 / theta)


def mean_se(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(len(values)))


def fit_slope(t, y) -> float:
    return float(np.polyfit(np.asarray(t), np.asarray(y), 1)[0])
