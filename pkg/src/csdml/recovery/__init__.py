"""Coarse-stage sparse recovery on a fixed angle grid."""

from csdml.models import RecoveryMethodName, SblOptions
from csdml.recovery.base import RecoveryMethod, RecoveryResult
from csdml.recovery.grid import (
    AngleGrid,
    Dictionary,
    build_dictionary,
    build_grid,
    build_grid_explicit,
    grid_gamma,
    svd_reduce,
)
from csdml.recovery.omp import OMPRecovery, m_omp
from csdml.recovery.sbl import SBLRecovery, m_sbl


def get_recovery_method(
    name: RecoveryMethodName | str, sbl_options: SblOptions | None = None
) -> RecoveryMethod:
    """Instantiate a recovery method by its config name ('omp' or 'sbl')."""
    method = RecoveryMethodName(name)
    if method is RecoveryMethodName.SBL:
        return SBLRecovery(sbl_options)
    return OMPRecovery()


__all__ = [
    "AngleGrid",
    "Dictionary",
    "OMPRecovery",
    "RecoveryMethod",
    "RecoveryResult",
    "SBLRecovery",
    "build_dictionary",
    "build_grid",
    "build_grid_explicit",
    "get_recovery_method",
    "grid_gamma",
    "m_omp",
    "m_sbl",
    "svd_reduce",
]
