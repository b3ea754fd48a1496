#!/usr/bin/env python3
"""Independent oracle for the dissipation-defect estimators on an n=16 grid.

Recomputes both transfer integrals for a hand-built divergence-free
trigonometric field without any FFT, np.roll, or package import:

* filtering is done as an explicit circular convolution
  ubar(x) = h^3 * sum_y eta(y) u(x - y) over all n^3 grid shifts, which is
  what multiplication by the spectral multiplier m(k) = h^3 sum eta e^{-ikx}
  amounts to;
* gradients of the unfiltered field are coded analytically and filtered by
  the same convolution (the two operations commute);
* the structure-function sum enumerates the offset ball with modular index
  arithmetic and evaluates the kernel-gradient factor from the formula.

The velocity is

    u(x) = ( b cos x2,  0,  a cos x1 + c sin(x1+x2) )

with wavevectors (1,0,0), (0,1,0), (1,1,0) forming a closed triad.  The
polarizations matter: the b mode advects the a mode into the (1,1,0) leg
(nonzero transfer across shells |k|=1 -> sqrt(2), which is what both
estimators detect; by hand the stress integral is
VOLUME * abc * (m(e1)^2 - m(e12)^2) / 4), and the single sin phase keeps the
triple correlation real.  A single-mode field (a only) is also checked:
there every cubic average cancels by parity and both integrals vanish.

Run with no arguments to print the frozen reference values consumed by
tests/test_dissipation.py.
"""

import numpy as np

N = 16
H = 2.0 * np.pi / N
VOLUME = (2.0 * np.pi) ** 3
A, B, C = 1.1, 0.8, 0.6


def velocity(x1, x2):
    u1 = B * np.cos(x2)
    u2 = np.zeros_like(x1)
    u3 = A * np.cos(x1) + C * np.sin(x1 + x2)
    return np.stack([u1, u2, u3])


def velocity_gradient(x1, x2):
    """grad[i, j] = d_i u_j, from the formula."""
    grad = np.zeros((3, 3) + x1.shape)
    cos12 = np.cos(x1 + x2)
    grad[1, 0] = -B * np.sin(x2)
    grad[0, 2] = -A * np.sin(x1) + C * cos12
    grad[1, 2] = C * cos12
    return grad


def grid_points():
    x = H * np.arange(N)
    return np.meshgrid(x, x, x, indexing="ij")[:2]


def wrapped():
    """Minimal-image displacement for each index shift (matches x <= pi -> x)."""
    coords = H * np.arange(N)
    return np.where(coords <= np.pi, coords, coords - 2.0 * np.pi)


def kernel_samples(delta):
    d = wrapped()
    r_sq = d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
    rho_sq = r_sq / delta**2
    raw = np.zeros((N, N, N))
    inside = rho_sq < 1.0
    raw[inside] = np.exp(-1.0 / (1.0 - rho_sq[inside]))
    norm_const = 1.0 / (H**3 * raw.sum())
    return norm_const * raw, norm_const


def shift_field(f, s):
    """f evaluated at x + s*h, via modular gathers along the last three axes."""
    idx = np.arange(N)
    out = np.take(f, (idx + s[0]) % N, axis=-3)
    out = np.take(out, (idx + s[1]) % N, axis=-2)
    return np.take(out, (idx + s[2]) % N, axis=-1)


def convolve(eta, f):
    """h^3 * sum_y eta(y) f(x - y), looped over every grid shift."""
    acc = np.zeros_like(f)
    for s0 in range(N):
        for s1 in range(N):
            for s2 in range(N):
                w = eta[s0, s1, s2]
                if w != 0.0:
                    acc += w * shift_field(f, (-s0, -s1, -s2))
    return H**3 * acc


def stress_integral(u, grad_u, delta):
    """-int R_ij d_i ubar_j dx with R = conv(u_i u_j) - ub_i ub_j."""
    eta, _ = kernel_samples(delta)
    ub = convolve(eta, u)
    grad_ub = convolve(eta, grad_u)
    density = np.zeros(u.shape[1:])
    for i in range(3):
        for j in range(3):
            r_ij = convolve(eta, u[i] * u[j]) - ub[i] * ub[j]
            density -= r_ij * grad_ub[i, j]
    return H**3 * density.sum()


def structure_integral(u, delta):
    """1/4 h^3 sum_y g(y).du |du|^2 integrated over x, 0 < |y| < delta."""
    d = wrapped()
    _, norm_const = kernel_samples(delta)
    total = 0.0
    for s0 in range(N):
        for s1 in range(N):
            for s2 in range(N):
                y = np.array([d[s0], d[s1], d[s2]])
                r = np.sqrt(np.dot(y, y))
                if r <= 0.0 or r >= delta:
                    continue
                rho = r / delta
                amp = (
                    norm_const
                    * (-2.0 * rho / (1.0 - rho**2) ** 2)
                    * np.exp(-1.0 / (1.0 - rho**2))
                    / (r * delta)
                )
                du = shift_field(u, (s0, s1, s2)) - u
                mag = du[0] ** 2 + du[1] ** 2 + du[2] ** 2
                proj = amp * (y[0] * du[0] + y[1] * du[1] + y[2] * du[2])
                total += (mag * proj).sum()
    return 0.25 * H**3 * H**3 * total


def main():
    x1, x2 = grid_points()
    u = velocity(x1, x2)
    grad_u = velocity_gradient(x1, x2)
    div_max = np.abs(grad_u[0, 0] + grad_u[1, 1] + grad_u[2, 2]).max()
    print(f"# n={N}, coefficients a={A}, b={B}, c={C}")
    print(f"# max |div u| = {div_max:.3e}")
    for delta in (np.pi, np.pi / 2.0):
        s = structure_integral(u, delta)
        t = stress_integral(u, grad_u, delta)
        eta, _ = kernel_samples(delta)
        x = H * np.arange(N)
        m1 = H**3 * (eta * np.cos(x)[:, None, None]).sum()
        m2 = H**3 * (eta * np.cos(x[:, None] + x[None, :])[:, :, None]).sum()
        closed = VOLUME * A * B * C * (m1**2 - m2**2) / 4.0
        print(f"delta = {delta!r}")
        print(f"  structure = {s!r}")
        print(f"  stress    = {t!r}")
        print(f"  closed-form stress = {closed!r}")
    zero = np.zeros_like(x1)
    single = np.stack([zero, zero, A * np.cos(x1)])
    grad_single = np.zeros((3, 3) + x1.shape)
    grad_single[0, 2] = -A * np.sin(x1)
    s0 = structure_integral(single, np.pi / 2.0)
    t0 = stress_integral(single, grad_single, np.pi / 2.0)
    print(f"single mode: structure = {s0!r}, stress = {t0!r}")


if __name__ == "__main__":
    main()
