"""Fixed basket of divergence-free space-time test functions.

Each element is phi_j(x, t) = s_j(t) * psi_j(x) where psi_j is the curl of a
band-limited random vector potential (hence exactly divergence free and mean
free) normalized to unit gradient norm, and s_j is a smooth bump window on a
random sub-interval of [0, T].  The basket is a deterministic function of
(seed, size, max_mode, t_end): every artifact in a run pairs against the same
functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import curl, dealias, gradient, gradient_norm_sq, leray_project
from .windows import BumpWindow

DEFAULT_SEED = 2025
DEFAULT_SIZE = 12
DEFAULT_MAX_MODE = 2


@dataclass(frozen=True)
class BasketElement:
    index: int
    psi_hat: np.ndarray = field(repr=False)  # (3, n, n, n//2+1), div-free, |grad| = 1
    window: BumpWindow
    grad_norm_sq: float  # int |grad psi|^2 dx (space only) == 1 after normalization

    def grad_psi_hat(self, grid):
        """Cached spectral gradient (3, 3, n, n, n//2+1) of the spatial profile."""
        cached = getattr(self, "_grad_cache", None)
        if cached is None:
            cached = gradient(grid, self.psi_hat)
            object.__setattr__(self, "_grad_cache", cached)
        return cached


@dataclass(frozen=True)
class TestBasket:
    seed: int
    size: int
    max_mode: int
    t_end: float
    elements: tuple

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)


def build_basket(grid, t_end, seed=DEFAULT_SEED, size=DEFAULT_SIZE, max_mode=DEFAULT_MAX_MODE):
    if size < 1:
        raise ValueError("basket size must be positive")
    if max_mode < 1 or max_mode > grid.dealias_cutoff:
        raise ValueError(
            f"max_mode {max_mode} outside the resolved band [1, {grid.dealias_cutoff}]"
        )
    rng = np.random.default_rng(seed)
    band = (grid.k_sq > 0.0) & (grid.k_sq <= float(max_mode) ** 2)
    elements = []
    for j in range(size):
        noise = rng.standard_normal((3,) + grid.shape)
        a_hat = grid.forward(noise) * band
        psi_hat = leray_project(grid, dealias(grid, curl(grid, a_hat)))
        gnsq = gradient_norm_sq(grid, psi_hat)
        if gnsq <= 0.0:
            raise ValueError(f"degenerate basket element {j}")
        psi_hat /= np.sqrt(gnsq)
        t0 = float(rng.uniform(0.0, 0.35)) * t_end
        t1 = t0 + float(rng.uniform(0.4, 0.6)) * t_end
        elements.append(
            BasketElement(
                index=j,
                psi_hat=psi_hat,
                window=BumpWindow(t0, t1),
                grad_norm_sq=gradient_norm_sq(grid, psi_hat),
            )
        )
    return TestBasket(
        seed=int(seed), size=int(size), max_mode=int(max_mode), t_end=float(t_end),
        elements=tuple(elements),
    )


def window_l2_sq(element, times):
    """int s_j(t)^2 dt by trapezoid quadrature on the snapshot grid."""
    s = element.window(times)
    return float(np.trapezoid(s * s, times))


def spacetime_gradient_norm(element, times):
    """sqrt( int s^2 dt * int |grad psi|^2 dx ), the L^2_t V_x norm of phi_j."""
    return float(np.sqrt(window_l2_sq(element, times) * element.grad_norm_sq))
