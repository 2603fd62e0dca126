"""Abstract base class for sparse recovery methods."""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from csdml.array import ComplexArray, CovarianceMatrix
from csdml.models import RecoveryMethodName
from csdml.recovery.grid import Dictionary


@dataclass
class RecoveryResult:
    """Support found on the grid and the coefficients fitted on it."""

    support: list[int]
    coarse_doas: NDArray[np.float64]
    coefficients: ComplexArray
    converged: bool = True
    iterations: int = 0
    residual_norms: list[float] = field(default_factory=list)
    gamma_profile: NDArray[np.float64] | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def coarse_doas_deg(self) -> list[float]:
        return [math.degrees(d) for d in self.coarse_doas]

    @classmethod
    def empty(cls, n_responses: int, reason: str) -> "RecoveryResult":
        """Result carrying no support, used for degenerate input."""
        return cls(
            support=[],
            coarse_doas=np.zeros(0),
            coefficients=np.zeros((0, n_responses), dtype=complex),
            converged=False,
            flags=[reason],
        )


def support_result(
    dictionary: Dictionary, support: list[int], coefficients: ComplexArray, **extra: object
) -> RecoveryResult:
    """Order a support by grid angle and attach the matching DOAs and coefficient rows."""
    order = np.argsort(support, kind="stable")
    ordered = [int(support[i]) for i in order]
    return RecoveryResult(
        support=ordered,
        coarse_doas=dictionary.grid.angles[ordered],
        coefficients=np.asarray(coefficients)[order],
        **extra,  # type: ignore[arg-type]
    )


class RecoveryMethod(ABC):
    """Coarse DOA estimation on a fixed grid."""

    name: RecoveryMethodName

    @abstractmethod
    def recover(
        self,
        dictionary: Dictionary,
        y: ComplexArray,
        k: int,
        covariance: CovarianceMatrix | None = None,
    ) -> RecoveryResult:
        """Find K atoms of the dictionary explaining the M×T' data ``y``.

        ``covariance`` is the sample covariance of the unreduced snapshots,
        for methods that need a noise level.
        """
        pass
