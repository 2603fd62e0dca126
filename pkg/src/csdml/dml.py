"""Deterministic maximum likelihood objective and its Newton refinement.

For a candidate DOA vector ϑ with steering matrix B = A(ϑ), the DML cost is
tr(P⊥R) where P⊥ = I − BB† and B† = (BᴴB)⁻¹Bᴴ. With D and F the first and
second derivatives of B:

    ∇ = −2 Re diag(B†RP⊥D)
    H = 2 Re C,  C = (DᴴP⊥D) ⊙ (B†RB†ᴴ)ᵀ − (DᴴP⊥RP⊥D) ⊙ (B†B†ᴴ)ᵀ
                     + (B†D) ⊙ (B†RP⊥D)ᵀ + (B†D)ᵀ ⊙ (B†RP⊥D)
                     − I ⊙ (B†RP⊥F)ᵀ

Every function here accepts ϑ with leading batch axes, so a whole lattice
of candidate vectors can be evaluated in one call.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from csdml.array import (
    ComplexArray,
    CovarianceMatrix,
    check_angles,
    derivative_matrix,
    second_derivative_matrix,
    steering_matrix,
)
from csdml.errors import DomainError, IllConditionedError
from csdml.models import ArrayGeometry, NewtonConfig

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e6  # cond(B); cond(BᴴB) is the square
ANGLE_MARGIN = 1e-6
ACCEPT_SLACK = 1e-12

FloatArray = NDArray[np.float64]


def _h(x: ComplexArray) -> ComplexArray:
    return np.swapaxes(x.conj(), -1, -2)


def _t(x: ComplexArray) -> ComplexArray:
    return np.swapaxes(x, -1, -2)


def _diag(x: ComplexArray) -> ComplexArray:
    return np.diagonal(x, axis1=-2, axis2=-1)


def _covariance(r: CovarianceMatrix | ArrayLike) -> ComplexArray:
    if isinstance(r, CovarianceMatrix):
        return r.data
    return np.asarray(r, dtype=complex)


def _squeeze(values: FloatArray) -> float | FloatArray:
    return float(values) if values.ndim == 0 else values


@dataclass
class ProjectorBundle:
    """Matrices derived from one candidate ϑ (or a batch of them)."""

    vartheta: FloatArray
    B: ComplexArray
    B_pinv: ComplexArray
    P_perp: ComplexArray
    D: ComplexArray
    F: ComplexArray

    @property
    def k(self) -> int:
        return int(self.vartheta.shape[-1])

    @property
    def m(self) -> int:
        return int(self.B.shape[-2])

    @property
    def projector(self) -> ComplexArray:
        """P = BB†, the projector onto the span of B."""
        return np.eye(self.m) - self.P_perp


def condition_numbers(geometry: ArrayGeometry, vartheta: ArrayLike) -> FloatArray:
    """cond(B) for each candidate vector; inf where B is rank deficient."""
    b = steering_matrix(geometry, vartheta)
    s = np.linalg.svd(b, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.asarray(s[..., 0] / s[..., -1])


def projector_bundle(geometry: ArrayGeometry, vartheta: ArrayLike) -> ProjectorBundle:
    """Build B, B†, P⊥, D and F at ϑ.

    B† comes from a QR factorization of B rather than an explicit inverse
    of BᴴB. Raises IllConditionedError when any cond(B) exceeds 1e6.
    """
    theta = check_angles(vartheta)
    if theta.ndim == 0 or theta.shape[-1] == 0:
        raise DomainError("need at least one angle")
    if theta.shape[-1] >= geometry.m:
        raise DomainError(f"need K < M, got K={theta.shape[-1]} with M={geometry.m}")

    cond = condition_numbers(geometry, theta)
    if not np.all(cond <= MAX_CONDITION):
        worst = float(np.max(np.where(np.isfinite(cond), cond, np.inf)))
        raise IllConditionedError(
            f"steering matrix is ill-conditioned (cond={worst:.3g}); DOAs too close together"
        )

    b = steering_matrix(geometry, theta)
    q, rq = np.linalg.qr(b)
    b_pinv = np.linalg.solve(rq, _h(q))
    p_perp = np.eye(geometry.m) - q @ _h(q)
    return ProjectorBundle(
        vartheta=theta,
        B=b,
        B_pinv=b_pinv,
        P_perp=(p_perp + _h(p_perp)) / 2,
        D=derivative_matrix(geometry, theta),
        F=second_derivative_matrix(geometry, theta),
    )


def dml_objective(bundle: ProjectorBundle, r: CovarianceMatrix | ArrayLike) -> float | FloatArray:
    """tr(P⊥R); the imaginary residue is discarded."""
    value = np.trace(bundle.P_perp @ _covariance(r), axis1=-2, axis2=-1)
    return _squeeze(np.asarray(value.real))


def dml_gradient(bundle: ProjectorBundle, r: CovarianceMatrix | ArrayLike) -> FloatArray:
    """∇ = −2 Re diag(B†RP⊥D)."""
    rp = _covariance(r) @ bundle.P_perp
    return np.asarray(-2.0 * _diag(bundle.B_pinv @ rp @ bundle.D).real)


def dml_hessian(
    bundle: ProjectorBundle,
    r: CovarianceMatrix | ArrayLike,
    include_second_order: bool = True,
) -> FloatArray:
    """Exact Hessian H = 2 Re C, symmetrized.

    With ``include_second_order`` false the −I ⊙ (B†RP⊥F)ᵀ term is dropped.
    """
    r = _covariance(r)
    b_pinv, p_perp, d = bundle.B_pinv, bundle.P_perp, bundle.D

    dpd = _h(d) @ p_perp @ d
    dprpd = _h(d) @ p_perp @ r @ p_perp @ d
    brb = b_pinv @ r @ _h(b_pinv)
    bb = b_pinv @ _h(b_pinv)
    bd = b_pinv @ d
    brpd = b_pinv @ r @ p_perp @ d

    c = dpd * _t(brb) - dprpd * _t(bb) + bd * _t(brpd) + _t(bd) * brpd
    if include_second_order:
        second = _diag(b_pinv @ r @ p_perp @ bundle.F)
        c = c - second[..., :, None] * np.eye(bundle.k)

    hessian = 2.0 * c.real
    return np.asarray((hessian + _t(hessian)) / 2)


@dataclass
class DmlEvaluation:
    """Objective, gradient and Hessian at one ϑ (or a batch)."""

    objective: float | FloatArray
    gradient: FloatArray
    hessian: FloatArray

    @property
    def gradient_norm(self) -> float | FloatArray:
        return _squeeze(np.asarray(np.linalg.norm(self.gradient, axis=-1)))

    @property
    def min_eigenvalue(self) -> float | FloatArray:
        return _squeeze(np.asarray(np.linalg.eigvalsh(self.hessian)[..., 0]))


def evaluate(
    bundle: ProjectorBundle,
    r: CovarianceMatrix | ArrayLike,
    include_second_order: bool = True,
) -> DmlEvaluation:
    r = _covariance(r)
    return DmlEvaluation(
        objective=dml_objective(bundle, r),
        gradient=dml_gradient(bundle, r),
        hessian=dml_hessian(bundle, r, include_second_order),
    )


@dataclass
class NewtonDiagnostics:
    """What happened during one Newton refinement."""

    iterations: int = 0
    converged: bool = False
    gradient_norm: float = math.nan
    objective: float = math.nan
    pd_fallbacks: int = 0
    step_halvings: int = 0
    clamped: bool = False
    stalled: bool = False
    history: list[float] = field(default_factory=list)


def _try_objective(
    geometry: ArrayGeometry, vartheta: FloatArray, r: ComplexArray
) -> float | None:
    try:
        return float(dml_objective(projector_bundle(geometry, vartheta), r))
    except IllConditionedError:
        return None


def newton_refine(
    geometry: ArrayGeometry,
    r: CovarianceMatrix | ArrayLike,
    init: ArrayLike,
    config: NewtonConfig | None = None,
) -> tuple[FloatArray, NewtonDiagnostics]:
    """Newton iteration ϑ ← ϑ − H⁻¹∇ from ``init``.

    A Hessian that is not positive definite is shifted by (ε − λ_min)I
    before solving. A step that raises the objective is halved up to
    ``max_halvings`` times; if none is accepted the iteration stops with
    ``stalled`` set. Iterates are clamped to ±(π/2 − 1e-6). The estimate
    is returned sorted ascending.
    """
    config = config or NewtonConfig()
    r = _covariance(r)
    theta = np.sort(check_angles(np.atleast_1d(np.asarray(init, dtype=float))))
    if theta.ndim != 1:
        raise DomainError(f"init must be a vector, got shape {theta.shape}")

    epsilon = config.damping or 1e-12 * float(np.trace(r).real)
    if epsilon <= 0:
        epsilon = 1e-12
    bound = math.pi / 2 - ANGLE_MARGIN
    diag = NewtonDiagnostics()

    for _ in range(config.max_iters):
        ev = evaluate(projector_bundle(geometry, theta), r)
        f = float(ev.objective)
        if not diag.history:
            diag.history.append(f)

        hessian = ev.hessian
        lam_min = float(np.linalg.eigvalsh(hessian)[0])
        if lam_min <= 0:
            hessian = hessian + (epsilon - lam_min) * np.eye(theta.size)
            diag.pd_fallbacks += 1
            logger.debug("Hessian not PD (λ_min=%.3g); shifted", lam_min)
        try:
            step = scipy.linalg.solve(hessian, ev.gradient, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            raise IllConditionedError(f"damped Newton system is singular at {theta}") from e

        scale = 1.0
        accepted: FloatArray | None = None
        f_new = f
        for attempt in range(config.max_halvings + 1):
            candidate = theta - scale * step
            clipped = np.clip(candidate, -bound, bound)
            value = _try_objective(geometry, clipped, r)
            if value is not None and value <= f + ACCEPT_SLACK * max(1.0, abs(f)):
                accepted, f_new = clipped, value
                if not np.array_equal(clipped, candidate):
                    diag.clamped = True
                break
            if attempt < config.max_halvings:
                scale /= 2
                diag.step_halvings += 1

        if accepted is None:
            diag.stalled = True
            logger.warning("Newton line search stalled at ϑ=%s°", np.degrees(theta))
            break

        diag.iterations += 1
        diag.history.append(f_new)
        moved = float(np.linalg.norm(accepted - theta))
        theta = accepted
        if moved <= config.tol:
            diag.converged = True
            break

    final = evaluate(projector_bundle(geometry, theta), r)
    diag.objective = float(final.objective)
    diag.gradient_norm = float(final.gradient_norm)
    if diag.clamped:
        logger.warning("Newton iterate left the visible region and was clamped")
    logger.debug(
        "Newton finished: %d iterations, converged=%s, |∇|=%.3g",
        diag.iterations,
        diag.converged,
        diag.gradient_norm,
    )
    return np.sort(theta), diag
