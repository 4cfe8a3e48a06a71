"""Replica-ensemble estimation of the effective drift vector and diffusion
matrix from unwrapped displacements, plus the small-eta quadratic analysis.
"""

import math
from dataclasses import dataclass

import numpy as np

from .integrator import derive_stream, run_trajectory, sample_gibbs


@dataclass
class DiffusionEstimate:
    drift: np.ndarray
    drift_stderr: np.ndarray
    diffusion: np.ndarray          # symmetric by construction
    diffusion_stderr: np.ndarray   # per entry, delta method over replicas
    eigenvalues: np.ndarray        # descending
    flagged: bool                  # smallest eigenvalue <= 0 (noise), kept
    M_rep: int
    tau_neq: float
    tau_sim: float


def _steps_of(tau, dt, name):
    n = round(tau / dt)
    if abs(tau - n * dt) > 1e-9 * max(1.0, abs(tau)):
        raise ValueError(f"{name}: must be an integer multiple of dt")
    return int(n)


def replica_displacements(params, pot, field, eta, n_replicas, tau_neq, tau_sim,
                          master_seed, stream_base=0, k0=0):
    """Displacement vectors for replicas k0..k0+n_replicas-1.

    Each replica: Gibbs draw, burn-in tau_neq under the forced dynamics,
    unwrapped position reset to the wrapped one, then tau_sim of recording.
    Deterministic per (master_seed, stream_base + k).
    """
    n_neq = _steps_of(tau_neq, params.dt, "tau_neq")
    n_sim = _steps_of(tau_sim, params.dt, "tau_sim")
    if tau_neq > 0 and n_neq % params.steps_per_period != 0:
        raise ValueError("tau_neq: must be a multiple of period_T")
    Z = np.empty((n_replicas, params.d))
    for j in range(n_replicas):
        k = k0 + j
        stream = derive_stream(master_seed, stream_base + k)
        state = sample_gibbs(params, pot, stream)
        state = run_trajectory(state, n_neq, params, pot, field, eta, stream)
        state.Q = state.q.copy()
        q_start = state.Q.copy()
        state = run_trajectory(state, n_sim, params, pot, field, eta, stream)
        Z[j] = state.Q - q_start
    return Z


def estimate_from_displacements(Z, tau_neq, tau_sim):
    M, d = Z.shape
    if M < 2:
        raise ValueError("need at least 2 replicas")
    mean = Z.mean(axis=0)
    drift = mean / tau_sim
    drift_stderr = Z.std(axis=0, ddof=1) / math.sqrt(M) / tau_sim
    Zc = Z - mean
    cov = (Zc.T @ Zc) / M  # 1/M on both moments, matching the estimator
    D = cov / (2.0 * tau_sim)
    D = 0.5 * (D + D.T)  # bit-exact symmetry
    # delta method: variance of each centered product over replicas
    W = Zc[:, :, None] * Zc[:, None, :]
    D_stderr = W.std(axis=0, ddof=1) / math.sqrt(M) / (2.0 * tau_sim)
    eig = spectrum(D)
    return DiffusionEstimate(
        drift=drift,
        drift_stderr=drift_stderr,
        diffusion=D,
        diffusion_stderr=D_stderr,
        eigenvalues=eig,
        flagged=bool(eig[-1] <= 0.0),
        M_rep=M,
        tau_neq=tau_neq,
        tau_sim=tau_sim,
    )


def estimate_drift_diffusion(params, pot, field, eta, M_rep, tau_neq, tau_sim,
                             master_seed, stream_base=0):
    """Drift and diffusion matrix from M_rep independent replicas."""
    if M_rep < 2:
        raise ValueError("M_rep must be >= 2")
    Z = replica_displacements(
        params, pot, field, eta, M_rep, tau_neq, tau_sim, master_seed, stream_base
    )
    return estimate_from_displacements(Z, tau_neq, tau_sim)


def quadratic_fit(etas, dxx, errs=None):
    """Weighted least squares of dxx(eta) = D0 + a*eta + b*eta^2.

    Returns (D0, a, b, stderrs[3]). Parameter covariance is (X^T W X)^{-1}
    with W = 1/err^2 (known-variance convention); unweighted when errs is
    None (stderrs then scale with the residual variance).
    """
    etas = np.asarray(etas, dtype=float)
    y = np.asarray(dxx, dtype=float)
    n_distinct = np.unique(etas).size
    if n_distinct < 3:
        raise ValueError("rank deficient: need at least 3 distinct eta values")
    if n_distinct < 4:
        raise ValueError("need at least 4 distinct eta values")
    if not np.any(np.abs(etas) <= 0.25 * np.max(np.abs(etas))):
        raise ValueError("need eta values near 0 to anchor D0")
    X = np.column_stack([np.ones_like(etas), etas, etas * etas])
    if errs is not None:
        w = 1.0 / np.asarray(errs, dtype=float) ** 2
    else:
        w = np.ones_like(etas)
    sw = np.sqrt(w)
    coef, _, _, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    cov = np.linalg.inv((X * w[:, None]).T @ X)
    if errs is None:
        dof = len(etas) - 3
        resid = y - X @ coef
        sigma2 = float(resid @ resid) / dof if dof > 0 else np.nan
        cov = cov * sigma2
    stderrs = np.sqrt(np.diag(cov))
    D0, a, b = coef
    return float(D0), float(a), float(b), stderrs


def spectrum(D):
    """Real eigenvalues of a symmetric matrix, descending; closed form for
    d=2 via trace and determinant."""
    D = np.asarray(D, dtype=float)
    asym = np.linalg.norm(D - D.T)
    if asym > 1e-12 * max(np.linalg.norm(D), 1e-300):
        raise ValueError(f"asymmetric matrix: |D - D^T| = {asym:g}")
    if D.shape == (2, 2):
        h = 0.5 * (D[0, 0] + D[1, 1])
        det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
        disc = math.sqrt(max(h * h - det, 0.0))
        return np.array([h + disc, h - disc])
    return np.linalg.eigvalsh(D)[::-1]
