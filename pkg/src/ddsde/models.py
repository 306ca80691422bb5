"""Bundled coefficient models and their analytic constants.

Two families ship with the suite:

* the homogeneous Landau family on R^3, built by convolving the kernel pair
  (b0, sigma0) against the current law, with independent interaction
  strengths alpha (drift) and beta (noise);
* a linear mean-field model with closed-form oracles for every statistic the
  test-suite needs.

Analytic constants (monotonicity, Lipschitz, contraction rates) are carried
as metadata in ModelBounds; they are inputs, never inferred from the code.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measure import EmpiricalMeasure

# Rows per chunk in the pairwise convolution kernels.  Fixed regardless of
# thread count so results are bit-identical under any parallel schedule.
PAIRWISE_CHUNK = 128


@dataclass(frozen=True)
class ModelBounds:
    """Analytic constants attached to a model; None where not applicable.

    kappa1/kappa2 are the drift monotonicity constants, lambda_ bounds the
    diffusion inverse, gamma_t the diffusion distortion; C1/C2 are the
    dissipativity constants (contraction exponent C1 - C2); K0/B0/C0 are the
    kernel constants of the convolution family.  lipschitz_rate is the
    kappa1 + kappa2 upper-bound surrogate used by the flow-Lipschitz checks.
    """

    theta: float = 2.0
    kappa1: float | None = None
    kappa2: float | None = None
    lambda_: float | None = None
    gamma_t: float | None = None
    C1: float | None = None
    C2: float | None = None
    K0: float | None = None
    B0: float | None = None
    C0: float | None = None

    @property
    def lipschitz_rate(self) -> float | None:
        if self.kappa1 is None or self.kappa2 is None:
            return None
        return self.kappa1 + self.kappa2

    @property
    def contraction_exponent(self) -> float | None:
        if self.C1 is None or self.C2 is None:
            return None
        return self.C1 - self.C2

    @property
    def dissipative(self) -> bool:
        return self.C1 is not None and self.C2 is not None and self.C2 > self.C1


@dataclass(frozen=True)
class CoefficientModel:
    """Drift/diffusion pair with structural flags and analytic metadata.

    drift(t, X, mu) maps (float, (M, d), EmpiricalMeasure) -> (M, d);
    diffusion(t, X, mu) -> (M, d, d), or (d, d) when shared by all
    trajectories.  Flags must be truthful; ``verify_flags`` probes them.
    """

    name: str
    dim: int
    drift: Callable
    diffusion: Callable
    additive_noise: bool
    invertible_sigma: bool
    distribution_free_sigma: bool
    bounds: ModelBounds = field(default_factory=ModelBounds)
    params: dict = field(default_factory=dict)
    grad_b: Callable | None = None     # (t, X, mu, v) -> (M, d), x-gradient in direction v
    sigma_inverse: Callable | None = None  # t -> (d, d), additive models only
    state_radius: float | None = None  # abort guard for locally-Lipschitz drifts


# ---------------------------------------------------------------------------
# Homogeneous Landau family
# ---------------------------------------------------------------------------

def landau_b0(x: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel drift -2|x|^gamma x on R^3 (divergence of the collision matrix)."""
    x = np.asarray(x, dtype=np.float64)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    return -2.0 * r ** gamma * x


def landau_sigma0(x: np.ndarray, gamma: float) -> np.ndarray:
    """Kernel diffusion factor: |x|^{gamma/2} [[x2,0,x3],[-x1,x3,0],[0,-x2,-x1]].

    Satisfies sigma0 sigma0* = |x|^gamma (|x|^2 I - x (x) x), the Landau
    collision matrix; x = 0 maps to the zero matrix for every gamma >= 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        raise ValueError(f"landau_sigma0 needs 3-vectors, got dim {x.shape[-1]}")
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    z = np.zeros_like(x1)
    m = np.stack([
        np.stack([x2, z, x3], axis=-1),
        np.stack([-x1, x3, z], axis=-1),
        np.stack([z, -x2, -x1], axis=-1),
    ], axis=-2)
    if gamma == 0.0:
        return m
    r = np.linalg.norm(x, axis=-1)
    return r[..., None, None] ** (gamma / 2.0) * m


def landau_a(x: np.ndarray, gamma: float) -> np.ndarray:
    """Collision matrix a(x) = |x|^gamma (|x|^2 I - x (x) x)."""
    x = np.asarray(x, dtype=np.float64)
    r2 = np.sum(x * x, axis=-1)
    outer = x[..., :, None] * x[..., None, :]
    core = r2[..., None, None] * np.eye(3) - outer
    if gamma == 0.0:
        return core
    return (r2 ** (gamma / 2.0))[..., None, None] * core


def _chunk_apply(fn, x: np.ndarray, threads: int) -> np.ndarray:
    """Apply fn to fixed-size row chunks of x; chunking never depends on threads."""
    m = x.shape[0]
    if m <= PAIRWISE_CHUNK:
        return fn(x)
    chunks = [x[i:i + PAIRWISE_CHUNK] for i in range(0, m, PAIRWISE_CHUNK)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def _landau_drift_pairwise(x: np.ndarray, z: np.ndarray, alpha: float,
                           gamma: float, threads: int = 1) -> np.ndarray:
    def one_chunk(xc):
        w = xc[:, None, :] - alpha * z[None, :, :]
        return landau_b0(w, gamma).mean(axis=1)
    return _chunk_apply(one_chunk, x, threads)


def _landau_sigma_pairwise(x: np.ndarray, z: np.ndarray, beta: float,
                           gamma: float, threads: int = 1) -> np.ndarray:
    def one_chunk(xc):
        w = xc[:, None, :] - beta * z[None, :, :]
        return landau_sigma0(w, gamma).mean(axis=1)
    return _chunk_apply(one_chunk, x, threads)


def landau_model(gamma: float, alpha: float, beta: float,
                 state_radius: float | None = None, threads: int = 1) -> CoefficientModel:
    """Landau-type model: drift and diffusion are kernel convolutions.

    drift(t, x, mu)     = (1/N) sum_i b0(x - alpha z_i)
    diffusion(t, x, mu) = (1/N) sum_i sigma0(x - beta z_i)

    At gamma = 0 both kernels are linear in x, so the convolution collapses
    to a single kernel evaluation at the mean-shifted point; for gamma > 0
    the full pairwise sum is used and a state-radius guard applies (the
    drift is only locally Lipschitz, so no rate claims are made there).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    if state_radius is None and gamma > 0:
        state_radius = 1e3

    if gamma == 0.0:
        def drift(t, x, mu):
            return landau_b0(x - alpha * mu.mean(), 0.0)

        def diffusion(t, x, mu):
            return landau_sigma0(x - beta * mu.mean(), 0.0)

        def grad_b(t, x, mu, v):
            return np.broadcast_to(-2.0 * np.asarray(v, dtype=np.float64), x.shape).copy()
    else:
        def drift(t, x, mu):
            return _landau_drift_pairwise(x, mu.points, alpha, gamma, threads)

        def diffusion(t, x, mu):
            return _landau_sigma_pairwise(x, mu.points, beta, gamma, threads)

        grad_b = None

    if gamma == 0.0:
        k0, b0c, c0 = -2.0, 2.0, 2.0
        c1 = abs(alpha) * b0c + c0 * abs(beta) * (1.0 + abs(beta))
        c2 = -(2.0 * k0 + abs(alpha) * b0c + c0 * (1.0 + abs(beta)))
        bounds = ModelBounds(theta=2.0, K0=k0, B0=b0c, C0=c0, C1=c1, C2=c2)
    else:
        bounds = ModelBounds(theta=2.0)

    return CoefficientModel(
        name="landau",
        dim=3,
        drift=drift,
        diffusion=diffusion,
        additive_noise=False,
        invertible_sigma=False,
        distribution_free_sigma=(beta == 0.0),
        bounds=bounds,
        params={"gamma": gamma, "alpha": alpha, "beta": beta},
        grad_b=grad_b,
        state_radius=state_radius,
    )


# ---------------------------------------------------------------------------
# Linear mean-field model (closed-form oracle)
# ---------------------------------------------------------------------------

def _as_sigma_matrix(sigma_const, dim: int | None) -> tuple[np.ndarray, int]:
    s = np.asarray(sigma_const, dtype=np.float64)
    if s.ndim == 0:
        d = dim if dim is not None else 1
        return float(s) * np.eye(d), d
    if s.ndim == 1:
        return np.diag(s), len(s)
    if s.ndim == 2 and s.shape[0] == s.shape[1]:
        if dim is not None and dim != s.shape[0]:
            raise ValueError(f"dim {dim} conflicts with sigma shape {s.shape}")
        return s, s.shape[0]
    raise ValueError(f"sigma_const must be scalar, diagonal, or (d, d), got shape {s.shape}")


def linear_meanfield_model(a_coef: float, c_coef: float, sigma_const,
                           dim: int | None = None) -> CoefficientModel:
    """drift(t, x, mu) = -a x + c mean(mu); constant additive diffusion.

    The ensemble mean obeys m' = (c - a) m, and with c = 0 each coordinate
    is an Ornstein-Uhlenbeck process; both give exact oracles for tests.
    """
    sigma, d = _as_sigma_matrix(sigma_const, dim)
    singular_values = np.linalg.svd(sigma, compute_uv=False)
    invertible = bool(singular_values.min() > 1e-12 * max(1.0, singular_values.max()))
    sigma_inv = np.linalg.inv(sigma) if invertible else None
    lam = float(np.linalg.norm(sigma_inv, 2)) if invertible else None

    def drift(t, x, mu):
        return -a_coef * x + c_coef * mu.mean()

    def diffusion(t, x, mu):
        return sigma

    def grad_b(t, x, mu, v):
        return np.broadcast_to(-a_coef * np.asarray(v, dtype=np.float64), x.shape).copy()

    bounds = ModelBounds(
        theta=2.0,
        kappa1=max(0.0, -2.0 * a_coef),
        kappa2=2.0 * abs(c_coef),
        lambda_=lam,
        gamma_t=0.0,
        C1=abs(c_coef),
        C2=2.0 * a_coef - abs(c_coef),
        K0=-a_coef,
        B0=abs(a_coef),
        C0=0.0,
    )
    return CoefficientModel(
        name="linear_meanfield",
        dim=d,
        drift=drift,
        diffusion=diffusion,
        additive_noise=True,
        invertible_sigma=invertible,
        distribution_free_sigma=True,
        bounds=bounds,
        params={"a": a_coef, "c": c_coef, "sigma": sigma.tolist()},
        grad_b=grad_b,
        sigma_inverse=(lambda t: sigma_inv) if invertible else None,
    )


# ---------------------------------------------------------------------------
# Explicit rate formulas
# ---------------------------------------------------------------------------

def contraction_exponent_cc(alpha: float, beta: float) -> float:
    """Growth exponent of the squared W2 gap for the Landau family at gamma=0."""
    return 4.0 * (abs(alpha) + abs(beta)) + 2.0 * beta ** 2 - 2.0


def contraction_exponent_tn(K0: float, B0: float, C0: float,
                            alpha: float, beta: float) -> float:
    """Growth exponent for a general convolution pair with kernel constants."""
    return 2.0 * K0 + C0 * (1.0 + abs(beta)) ** 2 + 2.0 * abs(alpha) * B0


# ---------------------------------------------------------------------------
# Flag probing
# ---------------------------------------------------------------------------

def verify_flags(model: CoefficientModel, n_probes: int = 8, seed: int = 0) -> None:
    """Probe declared-True structural flags at random (t, x, mu); raise on a lie.

    A False flag is a no-guarantee marker and cannot be falsified by finitely
    many probes (e.g. an averaged singular kernel is generically full rank),
    so only True claims are checked.
    """
    rng = np.random.default_rng(seed)
    d = model.dim

    def probe_sigma(t, x, mu):
        s = np.asarray(model.diffusion(t, x, mu), dtype=np.float64)
        return s if s.ndim == 3 else np.broadcast_to(s, (x.shape[0],) + s.shape)

    for _ in range(n_probes):
        t = float(rng.uniform(0.0, 1.0))
        x = rng.normal(size=(2, d))
        mu = EmpiricalMeasure(rng.normal(size=(5, d)))
        mu2 = EmpiricalMeasure(rng.normal(size=(5, d)))
        s_x0 = probe_sigma(t, x, mu)[0]
        s_x1 = probe_sigma(t, x, mu)[1]
        s_mu2 = probe_sigma(t, x, mu2)[0]
        if model.additive_noise and not (
            np.allclose(s_x0, s_x1, atol=1e-12) and np.allclose(s_x0, s_mu2, atol=1e-12)
        ):
            raise ValueError(f"{model.name}: additive_noise declared but sigma varies")
        if model.distribution_free_sigma and not np.allclose(s_x0, s_mu2, atol=1e-12):
            raise ValueError(
                f"{model.name}: distribution_free_sigma declared but sigma reads mu"
            )
        if model.invertible_sigma:
            sv = np.linalg.svd(s_x0, compute_uv=False)
            if sv.min() <= 1e-10 * max(1.0, sv.max()):
                raise ValueError(
                    f"{model.name}: invertible_sigma declared but a probe is singular"
                )
