"""Multiple-response sparse Bayesian learning (M-SBL).

Each atom n carries a variance γ_n shared across the T' responses. The EM
iteration is

    Σ_y   = σ²I + Ψ diag(γ) Ψᴴ
    μ     = diag(γ) Ψᴴ Σ_y⁻¹ Y
    γ_n  ← ‖μ_n‖² / T' + γ_n − γ_n² [Ψᴴ Σ_y⁻¹ Ψ]_nn

and the support is read off the peaks of the final γ profile. Each iterate is
scored by the negative log evidence

    L(γ) = T' log|Σ_y| + tr(Yᴴ Σ_y⁻¹ Y)

which EM does not increase; when the iteration cap is hit the lowest-L
iterate is returned.
"""

import logging

import numpy as np
import scipy.linalg
from numpy.typing import NDArray
from scipy.signal import find_peaks

from csdml.array import ComplexArray, CovarianceMatrix, estimate_noise_power
from csdml.errors import DomainError
from csdml.models import RecoveryMethodName, SblOptions
from csdml.recovery.base import RecoveryMethod, RecoveryResult, support_result
from csdml.recovery.grid import Dictionary

logger = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8


def _noise_variance(
    y: ComplexArray, k: int, given: float | None, covariance: CovarianceMatrix | None
) -> float:
    """σ² from the options, else from R̂, else from raw (unreduced) snapshots."""
    m, t = y.shape
    power = float(np.real(np.vdot(y, y))) / (m * t)
    if given is None:
        if covariance is not None:
            given = estimate_noise_power(covariance, k)
        elif t > k:
            eigenvalues = scipy.linalg.eigh(y @ y.conj().T / t, eigvals_only=True)
            given = float(np.mean(eigenvalues[: m - k]))
        else:
            # SVD-reduced data has rank K, so its noise subspace is empty
            raise DomainError(
                f"cannot estimate σ² from {t}-column data with K={k}; "
                "pass noise_variance or the sample covariance"
            )
    return max(given, NOISE_FLOOR * power)


def _evaluate(
    psi: ComplexArray, y: ComplexArray, gamma: NDArray[np.float64], sigma2: float
) -> tuple[tuple[ComplexArray, bool], ComplexArray, float]:
    """Cholesky factor of Σ_y, posterior mean and negative log evidence at ``gamma``."""
    m, t = y.shape
    sigma_y = sigma2 * np.eye(m) + (psi * gamma) @ psi.conj().T
    factor = scipy.linalg.cho_factor(sigma_y, lower=True)
    solved = scipy.linalg.cho_solve(factor, y)
    mu = gamma[:, None] * (psi.conj().T @ solved)
    log_det = 2.0 * float(np.sum(np.log(np.real(np.diag(factor[0])))))
    cost = t * log_det + float(np.real(np.vdot(y, solved)))
    return factor, mu, cost


def pick_peaks(profile: NDArray[np.float64], k: int) -> list[int]:
    """Indices of the K highest local maxima, topped up with the largest remaining values."""
    padded = np.concatenate(([-1.0], profile, [-1.0]))
    peaks, _ = find_peaks(padded)
    peaks = peaks - 1
    ranked = peaks[np.argsort(-profile[peaks], kind="stable")]
    chosen = [int(i) for i in ranked[:k]]
    if len(chosen) < k:
        for i in np.argsort(-profile, kind="stable"):
            if int(i) not in chosen:
                chosen.append(int(i))
            if len(chosen) == k:
                break
    return chosen


def m_sbl(
    dictionary: Dictionary,
    y: ComplexArray,
    k: int,
    options: SblOptions | None = None,
    covariance: CovarianceMatrix | None = None,
) -> RecoveryResult:
    """Run M-SBL and return the K strongest atoms.

    σ² is ``options.noise_variance`` when set. Otherwise it is the mean of
    the M−K smallest eigenvalues of ``covariance`` (R̂ of the unreduced
    snapshots), or of ``y yᴴ/T'`` when ``y`` itself has more than K columns.
    SVD-reduced ``y`` without either raises ``DomainError``.

    When the iteration limit is hit, the iterate with the lowest negative
    log evidence is returned with ``converged`` false and a ``max-iters`` flag.
    """
    options = options or SblOptions()
    psi = dictionary.psi
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    m, n = psi.shape
    t = y.shape[1]
    if y.shape[0] != m:
        raise DomainError(f"data has {y.shape[0]} rows, dictionary has {m}")
    if not 1 <= k < m:
        raise DomainError(f"need 1 <= K < M, got K={k} with M={m}")

    if not np.any(y):
        logger.warning("M-SBL got all-zero data; returning an empty support")
        return RecoveryResult.empty(t, "zero-input")

    sigma2 = _noise_variance(y, k, options.noise_variance, covariance)
    gamma = np.full(n, float(np.real(np.vdot(y, y))) / (m * t))
    mu = np.zeros((n, t), dtype=complex)
    best_cost, best_gamma, best_mu = np.inf, gamma, mu
    converged = False
    iterations = 0

    for iterations in range(1, options.max_iters + 1):
        factor, mu, cost = _evaluate(psi, y, gamma, sigma2)
        if cost < best_cost:
            best_cost, best_gamma, best_mu = cost, gamma, mu
        weighted = scipy.linalg.cho_solve(factor, psi)
        diag = np.real(np.sum(psi.conj() * weighted, axis=0))

        updated = np.sum(np.abs(mu) ** 2, axis=1) / t + gamma - gamma**2 * diag
        updated = np.maximum(updated, 0.0)
        change = np.linalg.norm(updated - gamma) / max(np.linalg.norm(gamma), np.finfo(float).tiny)
        gamma = updated
        if change < options.tol:
            converged = True
            break

    flags = [] if converged else ["max-iters"]
    if not converged:
        _, mu, cost = _evaluate(psi, y, gamma, sigma2)
        if cost > best_cost:
            gamma, mu = best_gamma, best_mu
        logger.warning("M-SBL stopped after %d iterations without converging", iterations)

    support = pick_peaks(gamma, k)
    logger.debug("M-SBL support %s after %d iterations (σ²=%.3g)", support, iterations, sigma2)
    return support_result(
        dictionary,
        support,
        mu[support],
        converged=converged,
        iterations=iterations,
        gamma_profile=gamma,
        flags=flags,
    )


class SBLRecovery(RecoveryMethod):
    """M-SBL as a pluggable coarse stage."""

    name = RecoveryMethodName.SBL

    def __init__(self, options: SblOptions | None = None):
        self.options = options or SblOptions()

    def recover(
        self,
        dictionary: Dictionary,
        y: ComplexArray,
        k: int,
        covariance: CovarianceMatrix | None = None,
    ) -> RecoveryResult:
        return m_sbl(dictionary, y, k, self.options, covariance)
