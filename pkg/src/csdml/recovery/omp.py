"""Multiple-response orthogonal matching pursuit (M-OMP)."""

import logging

import numpy as np
import scipy.linalg

from csdml.array import ComplexArray, CovarianceMatrix
from csdml.errors import DomainError, IllConditionedError
from csdml.models import RecoveryMethodName
from csdml.recovery.base import RecoveryMethod, RecoveryResult, support_result
from csdml.recovery.grid import Dictionary

logger = logging.getLogger(__name__)


def m_omp(dictionary: Dictionary, y: ComplexArray, k: int) -> RecoveryResult:
    """Greedy support selection shared across all T' responses.

    Each of the K iterations picks the atom with the largest row ℓ2-norm of
    Ψᴴ·residual (lowest index on ties, selected atoms excluded), then refits
    the coefficients by least squares on the whole support. ``residual_norms``
    holds the Frobenius norm of the residual before the first pick and after
    each iteration.
    """
    psi = dictionary.psi
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    m, n = psi.shape
    if y.shape[0] != m:
        raise DomainError(f"data has {y.shape[0]} rows, dictionary has {m}")
    if not 1 <= k < m:
        raise DomainError(f"need 1 <= K < M, got K={k} with M={m}")

    if not np.any(y):
        logger.warning("M-OMP got all-zero data; returning an empty support")
        return RecoveryResult.empty(y.shape[1], "zero-input")

    residual = y.copy()
    support: list[int] = []
    coefficients = np.zeros((0, y.shape[1]), dtype=complex)
    norms = [float(np.linalg.norm(residual))]
    available = np.ones(n, dtype=bool)

    for _ in range(k):
        scores = np.linalg.norm(psi.conj().T @ residual, axis=1)
        scores[~available] = -np.inf
        pick = int(np.argmax(scores))
        support.append(pick)
        available[pick] = False

        sub = psi[:, support]
        coefficients, _, rank, _ = scipy.linalg.lstsq(sub, y)
        if rank < len(support):
            raise IllConditionedError(
                f"M-OMP selected linearly dependent atoms {sorted(support)}"
            )
        residual = y - sub @ coefficients
        norms.append(float(np.linalg.norm(residual)))

    logger.debug("M-OMP support %s, residual norms %s", support, norms)
    return support_result(
        dictionary, support, coefficients, iterations=k, residual_norms=norms
    )


class OMPRecovery(RecoveryMethod):
    """M-OMP as a pluggable coarse stage."""

    name = RecoveryMethodName.OMP

    def recover(
        self,
        dictionary: Dictionary,
        y: ComplexArray,
        k: int,
        covariance: CovarianceMatrix | None = None,
    ) -> RecoveryResult:
        return m_omp(dictionary, y, k)
