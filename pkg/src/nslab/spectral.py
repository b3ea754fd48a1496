"""Spectral substrate for incompressible fields on the periodic box [0, 2*pi)^3.

The box edge is fixed at 2*pi so wavevectors are integer triples.  Real fields
live on an n^3 collocation grid; spectral fields use the half-complex rfftn
layout with shape (..., n, n, n//2 + 1).  Transforms follow the *coefficient*
convention

    u_hat(k) = (1/n^3) * sum_x u(x) exp(-i k.x),
    u(x)     = sum_k u_hat(k) exp(+i k.x),

so a single Fourier mode's coefficient is its analytic series coefficient
(e.g. sin(x1) has coefficients -i/2 at k=(1,0,0) and +i/2 at k=(-1,0,0)).
With this convention Parseval reads

    integral(f * g) = (2*pi)^3 * sum_k Re(f_hat(k) * conj(g_hat(k))),

where the sum runs over the full wavevector lattice; the half-complex layout
accounts for the missing conjugate modes with a weight of 2 on interior
planes of the last axis.  Every norm and inner product in the package routes
through :func:`inner_product` (or its gradient-weighted variant) so Parseval
is a single-point invariant.
"""

from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi
#: Volume of the computational box [0, 2*pi)^3.
VOLUME = TWO_PI**3
#: Extent of the RK4 stability region on the negative real axis.  With the
#: exact viscous integrating factor the viscous term imposes no sharp step
#: restriction; this bound is used as a construction-time sanity guard on
#: dt * nu * k_max^2 for the retained (dealiased) modes.
RK4_REAL_AXIS_BOUND = 2.785


class GridError(ValueError):
    """Raised when grid or time-stepping parameters are inconsistent."""


class Grid:
    """Collocation grid, wavevectors and transform plumbing for one resolution.

    Args:
        n: collocation points per axis; must be even and >= 16.  Powers of two
            give the fastest transforms and are recommended.
        nu: kinematic viscosity (> 0).
        dt: time step (> 0); t_end must be an integer multiple of dt.
        t_end: final time (> 0).
        snapshot_stride: steps between retained snapshots (>= 1).
    """

    def __init__(self, n, nu, dt, t_end, snapshot_stride=10):
        if int(n) != n or n < 16 or n % 2 != 0:
            raise GridError(f"n must be an even integer >= 16, got {n}")
        if nu <= 0.0:
            raise GridError(f"nu must be positive, got {nu}")
        if dt <= 0.0 or t_end <= 0.0:
            raise GridError("dt and t_end must be positive")
        if int(snapshot_stride) != snapshot_stride or snapshot_stride < 1:
            raise GridError(f"snapshot_stride must be an integer >= 1, got {snapshot_stride}")
        steps = round(t_end / dt)
        if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(t_end, 1.0):
            raise GridError(f"t_end={t_end} is not an integer multiple of dt={dt}")

        self.n = int(n)
        self.nu = float(nu)
        self.dt = float(dt)
        self.t_end = float(t_end)
        self.snapshot_stride = int(snapshot_stride)
        self.steps = steps
        self.h = TWO_PI / self.n
        self.shape = (self.n, self.n, self.n)
        self.nh = self.n // 2 + 1
        self.spectral_shape = (self.n, self.n, self.nh)

        k_full = np.fft.fftfreq(self.n, d=1.0 / self.n).astype(np.float64)
        k_half = np.arange(self.nh, dtype=np.float64)
        self.k1 = k_full[:, None, None]
        self.k2 = k_full[None, :, None]
        self.k3 = k_half[None, None, :]
        #: Wavevector components broadcast to full spectral shape, (3, n, n, nh).
        self.k_vec = np.empty((3,) + self.spectral_shape, dtype=np.float64)
        self.k_vec[0] = self.k1
        self.k_vec[1] = self.k2
        self.k_vec[2] = self.k3
        self.k_sq = self.k_vec[0] ** 2 + self.k_vec[1] ** 2 + self.k_vec[2] ** 2
        # 1/|k|^2 with the zero mode mapped to 0: the inverse Laplacian is
        # defined on zero-mean data and pins the zero-mean gauge.
        with np.errstate(divide="ignore"):
            inv = np.where(self.k_sq > 0.0, 1.0 / np.where(self.k_sq > 0.0, self.k_sq, 1.0), 0.0)
        self.inv_k_sq = inv

        self.dealias_cutoff = self.n // 3
        cut = self.dealias_cutoff
        self.dealias_mask = (
            (np.abs(self.k1) <= cut) & (np.abs(self.k2) <= cut) & (np.abs(self.k3) <= cut)
        )

        # Parseval weights for the half-complex layout: planes k3=0 and k3=n/2
        # are self-conjugate, every interior plane stands in for two modes.
        w = np.full(self.nh, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        self.parseval_w = w[None, None, :]

        stability = self.dt * self.nu * 3.0 * cut**2
        if stability > RK4_REAL_AXIS_BOUND:
            raise GridError(
                f"dt*nu*k_max^2 = {stability:.3g} exceeds the RK4 bound "
                f"{RK4_REAL_AXIS_BOUND}; reduce dt or the resolution"
            )

        x1 = np.arange(self.n) * self.h
        self.x = np.meshgrid(x1, x1, x1, indexing="ij")

    def forward(self, field):
        """Real field(s) (..., n, n, n) -> spectral coefficients (..., n, n, nh)."""
        return np.fft.rfftn(field, axes=(-3, -2, -1)) / self.n**3

    def inverse(self, field_hat):
        """Spectral coefficients (..., n, n, nh) -> real field(s) (..., n, n, n)."""
        return np.fft.irfftn(field_hat * self.n**3, s=self.shape, axes=(-3, -2, -1))

    def __repr__(self):
        return (
            f"Grid(n={self.n}, nu={self.nu}, dt={self.dt}, "
            f"t_end={self.t_end}, snapshot_stride={self.snapshot_stride})"
        )


def gradient(grid, f_hat):
    """Spectral gradient.  Scalar (n,n,nh) -> (3,n,n,nh); a leading component
    axis is preserved, e.g. vector (3,n,n,nh) -> (3,3,n,n,nh) with layout
    out[i, j] = (d/dx_i f_j)_hat."""
    return 1j * grid.k_vec.reshape((3,) + (1,) * (f_hat.ndim - 3) + grid.spectral_shape) * f_hat


def sym_gradient(grid, v_hat):
    """Symmetric spectral gradient of a vector field:
    (3, n, n, nh) -> (3, 3, n, n, nh), out[i, j] = ((d_i v_j + d_j v_i)/2)_hat."""
    g = gradient(grid, v_hat)
    return 0.5 * (g + np.swapaxes(g, 0, 1))


def divergence(grid, v_hat):
    """Spectral divergence of a vector field (3, n, n, nh) -> (n, n, nh)."""
    return 1j * (
        grid.k_vec[0] * v_hat[0] + grid.k_vec[1] * v_hat[1] + grid.k_vec[2] * v_hat[2]
    )


def tensor_divergence(grid, t_hat):
    """Divergence of a rank-2 field, contracting the first index:
    (3, 3, n, n, nh) -> (3, n, n, nh), out[j] = (d/dx_i T_ij)_hat."""
    return 1j * np.einsum("ixyz,ijxyz->jxyz", grid.k_vec, t_hat)


def laplacian(grid, f_hat):
    """Spectral Laplacian, -|k|^2 multiplier."""
    return -grid.k_sq * f_hat


def inverse_laplacian(grid, f_hat):
    """Solve lap(u) = f in the zero-mean gauge: the k=0 mode of the result is 0
    (and any k=0 content of f is discarded, consistent with solvability)."""
    return -grid.inv_k_sq * f_hat


def curl(grid, v_hat):
    """Spectral curl of a vector field (3, n, n, nh)."""
    k1, k2, k3 = grid.k_vec
    out = np.empty_like(v_hat)
    out[0] = 1j * (k2 * v_hat[2] - k3 * v_hat[1])
    out[1] = 1j * (k3 * v_hat[0] - k1 * v_hat[2])
    out[2] = 1j * (k1 * v_hat[1] - k2 * v_hat[0])
    return out


def leray_project(grid, v_hat):
    """Leray projection u_hat -> (I - k k^T/|k|^2) u_hat, zero mode set to 0.

    Idempotent and self-adjoint; annihilates gradient fields and the mean.
    """
    kdotv = (
        grid.k_vec[0] * v_hat[0] + grid.k_vec[1] * v_hat[1] + grid.k_vec[2] * v_hat[2]
    )
    coef = kdotv * grid.inv_k_sq
    out = v_hat - grid.k_vec * coef
    out[..., 0, 0, 0] = 0.0
    return out


def dealias(grid, f_hat):
    """Two-thirds-rule truncation: zero every mode with any |k_i| > floor(n/3)."""
    return f_hat * grid.dealias_mask


def inner_product(grid, f_hat, g_hat):
    """L2 inner product integral(f . g) over the box via Parseval.

    Component axes (any leading dims) are summed over, so vector and tensor
    fields contract fully.  Both arguments must be spectral.
    """
    s = np.sum(grid.parseval_w * (f_hat * np.conj(g_hat)).real, axis=(-3, -2, -1))
    return VOLUME * float(np.sum(s))


def norm_sq(grid, f_hat):
    """Squared L2 norm integral(|f|^2), nonnegative by construction."""
    s = np.sum(
        grid.parseval_w * (f_hat.real**2 + f_hat.imag**2), axis=(-3, -2, -1)
    )
    return VOLUME * float(np.sum(s))


def gradient_inner_product(grid, f_hat, g_hat):
    """Pairing of gradients integral(grad f : grad g) = sum_k |k|^2 <f,g>_k.

    Avoids forming the gradients; exactly equals
    inner_product(gradient(f), gradient(g)).
    """
    s = np.sum(
        grid.parseval_w * grid.k_sq * (f_hat * np.conj(g_hat)).real, axis=(-3, -2, -1)
    )
    return VOLUME * float(np.sum(s))


def gradient_norm_sq(grid, f_hat):
    """integral(|grad f|^2) via the |k|^2-weighted Parseval sum."""
    s = np.sum(
        grid.parseval_w * grid.k_sq * (f_hat.real**2 + f_hat.imag**2),
        axis=(-3, -2, -1),
    )
    return VOLUME * float(np.sum(s))


def grid_inner_product(grid, f, g):
    """Collocation quadrature h^3 * sum(f * g) for *real* fields.

    By discrete Parseval this equals inner_product(forward(f), forward(g))
    exactly; a unit test pins the two code paths together.
    """
    return grid.h**3 * float(np.sum(f * g))


def divergence_max(grid, v_hat):
    """Scale-free divergence defect max_k |k . v_hat| / max_k (|k| |v_hat|)."""
    d = np.abs(divergence(grid, v_hat))
    mag = np.sqrt(np.sum(np.abs(v_hat) ** 2, axis=0))
    scale = float((np.sqrt(grid.k_sq) * mag).max())
    return float(d.max()) / max(scale, 1e-300)


def hermitian_defect(grid, f_hat):
    """Max deviation from conjugate symmetry on the self-conjugate planes.

    In the half-complex layout only the k3 = 0 and k3 = n/2 planes contain
    redundant modes; on those planes f(-k1, -k2) must equal conj(f(k1, k2)).
    Returns the max absolute defect relative to the field's max magnitude.
    """
    defect = 0.0
    for plane in (0, grid.nh - 1):
        sl = f_hat[..., plane]
        mirrored = np.flip(np.roll(sl, (-1, -1), axis=(-2, -1)), axis=(-2, -1))
        defect = max(defect, float(np.abs(sl - np.conj(mirrored)).max()))
    scale = float(np.abs(f_hat).max())
    return defect / max(scale, 1e-300)


def trapezoid_weights(times):
    """Composite-trapezoid quadrature weights for a 1-D increasing time grid."""
    t = np.asarray(times, dtype=np.float64)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0.0):
        raise GridError("times must be a 1-D strictly increasing array of length >= 2")
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def random_divergence_free(grid, rng, max_k_sq, amplitude=1.0):
    """Random real divergence-free band-limited vector field (spectral).

    White Gaussian grid noise is transformed, truncated to 0 < |k|^2 <=
    max_k_sq and Leray-projected, then rescaled to L2 norm `amplitude`.
    Hermitian symmetry is inherited from the real-space construction.
    """
    noise = rng.standard_normal((3,) + grid.shape)
    v_hat = grid.forward(noise)
    band = (grid.k_sq > 0.0) & (grid.k_sq <= max_k_sq)
    v_hat *= band
    v_hat = leray_project(grid, v_hat)
    nrm = np.sqrt(norm_sq(grid, v_hat))
    if nrm == 0.0:
        raise GridError("empty band in random_divergence_free")
    return v_hat * (amplitude / nrm)
