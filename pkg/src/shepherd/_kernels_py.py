"""Pure-NumPy implementations of the hot inner-loop kernels.

The compiled extension ``shepherd._kernels`` mirrors these signatures;
``shepherd._backend`` picks whichever is importable. Both backends must
agree to near machine precision (see tests/test_backend_parity.py).
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import cho_solve


class CoincidentAgentsError(ArithmeticError):
    """Two interacting agents are closer than the singularity guard."""


def flock_terms(sheep, dogs, k_s, k_d, r_s, v_bar, eps, want_jacobians):
    """Sheep velocities and (optionally) their analytic Jacobian blocks.

    sheep : (n, 2) positions, dogs : (m, 2) positions.

    Returns (vel, raw, jac_s, jac_d):
      vel    (n, 2)       saturated velocities, each component in (-v_bar, v_bar)
      raw    (n, 2)       unsaturated velocities (the tanh argument times v_bar)
      jac_s  (n, n, 2, 2) d vel_i / d sheep_k, zero diagonal blocks
      jac_d  (n, m, 2, 2) d vel_i / d dog_j

    jac_s/jac_d are None unless want_jacobians. Raises CoincidentAgentsError
    when any interacting pair is closer than eps.
    """
    sheep = np.asarray(sheep, dtype=float)
    dogs = np.asarray(dogs, dtype=float).reshape(-1, 2)
    n = sheep.shape[0]
    m = dogs.shape[0]

    raw = np.zeros((n, 2))
    if n > 1:
        d_ss = sheep[None, :, :] - sheep[:, None, :]  # d[i, k] = x_k - x_i
        dist_ss = np.linalg.norm(d_ss, axis=2)
        off = ~np.eye(n, dtype=bool)
        if np.any(dist_ss[off] < eps):
            raise CoincidentAgentsError(
                f"sheep pair closer than {eps:g} m")
        safe = np.where(off, dist_ss, 1.0)
        w = np.where(off, 1.0 - r_s**3 / safe**3, 0.0)
        raw += k_s * np.einsum("ik,ikc->ic", w, d_ss)
    if m > 0:
        e_sd = sheep[:, None, :] - dogs[None, :, :]  # e[i, j] = x_i - x_dj
        dist_sd = np.linalg.norm(e_sd, axis=2)
        if np.any(dist_sd < eps):
            raise CoincidentAgentsError(
                f"sheep-dog pair closer than {eps:g} m")
        raw += k_d * np.einsum("ijc,ij->ic", e_sd, dist_sd**-3)

    vel = v_bar * np.tanh(raw / v_bar)
    if not want_jacobians:
        return vel, raw, None, None

    sat = 1.0 / np.cosh(raw / v_bar) ** 2  # (n, 2) per-axis saturation slope

    jac_s = np.zeros((n, n, 2, 2))
    if n > 1:
        eye = np.eye(2)
        outer = np.einsum("ikc,ikd->ikcd", d_ss, d_ss)
        base = (w[:, :, None, None] * eye
                + 3.0 * r_s**3 * outer / np.where(off, safe, 1.0)[:, :, None, None] ** 5)
        base = k_s * np.where(off[:, :, None, None], base, 0.0)
        jac_s = sat[:, None, :, None] * base  # row scaling by diag(sat_i)

    jac_d = np.zeros((n, m, 2, 2))
    if m > 0:
        eye = np.eye(2)
        outer = np.einsum("ijc,ijd->ijcd", e_sd, e_sd)
        base = (eye * (dist_sd**-3)[:, :, None, None]
                - 3.0 * outer * (dist_sd**-5)[:, :, None, None])
        jac_d = sat[:, None, :, None] * (-k_d) * base

    return vel, raw, jac_s, jac_d


def admm_chunk(chol_lower, a_mat, q, lo, hi, rho, sigma, relax, x, z, y, iters):
    """Run `iters` operator-splitting iterations in place.

    Solves min 0.5 x'Hx + q'x  s.t.  lo <= a_mat x <= hi, where chol_lower is
    the lower Cholesky factor of (H + sigma I + rho a_mat' a_mat). x, z, y are
    updated in place; returns nothing. Residual checks live in the driver.
    """
    at = a_mat.T
    for _ in range(iters):
        rhs = sigma * x - q + at @ (rho * z - y)
        x_tilde = cho_solve((chol_lower, True), rhs, check_finite=False)
        z_tilde = a_mat @ x_tilde
        x[:] = relax * x_tilde + (1.0 - relax) * x
        z_hat = relax * z_tilde + (1.0 - relax) * z
        z[:] = np.clip(z_hat + y / rho, lo, hi)
        y += rho * (z_hat - z)
