"""Boundary feedback as a rank-one perturbation of the generator.

The Dirichlet column d solves the shifted boundary problem cell by cell, the
injection b = (lam I - A) d turns out independent of lam (it concentrates
1/h in cell 0), and the feedback row beta_j h closes the loop: A_S = A + P
with P = outer(b, beta h).  The loop gain that decides stability is the
spectral radius of K = R(0, A) P, which for this rank-one structure collapses
to the scalar sum_j beta_j h d0_j.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .control import ControlOperator
from .errors import PowerIterationError, SingularSystemError
from .generators import GeneratorModel, _solve_shifted, spectral_bound, resolvent_matrix
from .lattice import POSITIVITY_TOL, GridSpace, GridVector, _readonly, weighted_l1


@dataclass(frozen=True)
class DirichletOperator:
    """Column d_j with (lam - A_m) d = 0 and unit boundary trace.

    For the upwind stencil the recursion is
    d_j = prod_{k<=j} (1 + h (lam + q_k))^{-1}, the grid analogue of the
    kernel exp(-integral of q - lam x); entries lie in (0, 1] for lam >= 0.
    """

    lam: float
    space: GridSpace
    column: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "column", _readonly(self.column))

    def vector(self) -> GridVector:
        return self.space.vector(self.column)


def dirichlet_operator(space: GridSpace, q, lam: float) -> DirichletOperator:
    """Forward recursion for the boundary column; first-order accurate in h."""
    h = space.spacing
    q = np.broadcast_to(np.asarray(q, dtype=float), (space.cells,))
    denom = 1.0 + h * (lam + q)
    if np.any(denom <= 0):
        raise ValueError(f"recursion denominator <= 0 at lam = {lam}; lam too negative")
    return DirichletOperator(lam=float(lam), space=space, column=np.cumprod(1.0 / denom))


def boundary_control_operator(
    model: GeneratorModel, lam: float = 0.0, check_lam: Optional[float] = None
) -> ControlOperator:
    """b = (lam I - A) d, which the Dirichlet recursion makes lam-free.

    Computed at two distinct lam values and compared within 1e-10 to catch a
    model whose matrix and absorption profile disagree.
    """
    if model.absorption is None:
        raise ValueError("boundary control needs the absorption profile (upwind build)")
    if model.boundary != "zero_inflow":
        raise ValueError("boundary control is defined against the zero-inflow generator")

    def at(l: float) -> np.ndarray:
        d = dirichlet_operator(model.space, model.absorption, l).column
        return l * d - model.matrix @ d

    if check_lam is None:
        check_lam = lam + 3.0
    col, col2 = at(lam), at(check_lam)
    scale = max(1.0, float(np.max(np.abs(col))))
    if np.max(np.abs(col - col2)) > 1e-10 * scale:
        raise ValueError(
            f"injection column differs between lam = {lam} and lam = {check_lam}"
        )
    return ControlOperator(space=model.space, column=col, provenance="boundary_dirichlet")


@dataclass(frozen=True)
class PerturbedSystem:
    """A_S = A + P with the pieces kept for audits.

    `small_gain_radius` holds the rank-one scalar when the system was
    assembled from an injection column and a feedback row; matrix-built
    systems leave it None and rely on power iteration.
    """

    base: GeneratorModel
    perturbation: np.ndarray
    perturbed: GeneratorModel
    injection: Optional[np.ndarray] = None
    feedback: Optional[np.ndarray] = None
    small_gain_radius: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "perturbation", _readonly(self.perturbation))
        if self.injection is not None:
            object.__setattr__(self, "injection", _readonly(self.injection))
        if self.feedback is not None:
            object.__setattr__(self, "feedback", _readonly(self.feedback))

    @classmethod
    def from_matrix(cls, base: GeneratorModel, perturbation) -> "PerturbedSystem":
        p = np.asarray(perturbation, dtype=float)
        if p.shape != base.matrix.shape:
            raise ValueError("perturbation shape does not match the generator")
        if np.min(p) < -POSITIVITY_TOL:
            warnings.warn("perturbation has negative entries; positivity audits will flag it")
        perturbed = GeneratorModel(
            space=base.space, matrix=base.matrix + p, boundary="custom",
            absorption=base.absorption,
        )
        return cls(base=base, perturbation=p, perturbed=perturbed)


def assemble_perturbed(model: GeneratorModel, b, beta) -> PerturbedSystem:
    """Close the loop: the scalar beta-weighted population integral feeds the
    injection column b.  P = outer(b, beta h)."""
    col = b.column if isinstance(b, ControlOperator) else np.asarray(b, dtype=float)
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (model.cells,)).astype(float)
    if not np.all(np.isfinite(beta)):
        raise ValueError("feedback profile must be finite")
    if np.min(beta) < 0:
        warnings.warn("negative feedback rates leave the positive cone; audits will flag it")
    h = model.space.spacing
    p = np.outer(col, beta * h)

    boundary = "nonlocal" if model.boundary == "zero_inflow" else "custom"
    perturbed = GeneratorModel(
        space=model.space, matrix=model.matrix + p, boundary=boundary,
        absorption=model.absorption,
    )
    scalar = None
    try:
        d0 = _solve_shifted(model, 0.0, col)
        # rank-one K = d0 (beta h)^T has spectral radius |sum beta_j h d0_j|
        scalar = float(abs(np.dot(beta * h, d0)))
    except SingularSystemError:
        pass
    return PerturbedSystem(
        base=model,
        perturbation=p,
        perturbed=perturbed,
        injection=col,
        feedback=beta,
        small_gain_radius=scalar,
    )


def small_gain_radius(
    system: PerturbedSystem,
    tol: float = 1e-10,
    max_iter: int = 10_000,
    rng=None,
) -> float:
    """Spectral radius of K = R(0, A) P by power iteration.

    K is entrywise nonnegative for nonnegative P, so a positive start
    converges to the Perron value; the iterate history travels with the
    non-convergence error.  Rank-one assemblies are cross-checked against
    the exact scalar.
    """
    base = system.base
    p = system.perturbation
    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.random(base.cells) + 0.5
    v /= np.sum(np.abs(v))
    history: list[float] = []
    rate = math.nan
    for _ in range(max_iter):
        kv = _solve_shifted(base, 0.0, p @ v)
        rate = float(np.sum(np.abs(kv)))
        history.append(rate)
        if rate <= 1e-300:
            rate = 0.0
            break
        w = kv / rate
        # direction settled (possibly up to sign, for signed perturbations)
        if min(np.sum(np.abs(w - v)), np.sum(np.abs(w + v))) <= tol:
            break
        v = w
    else:
        raise PowerIterationError(
            f"power iteration did not converge within {max_iter} iterations", history
        )
    if system.small_gain_radius is not None:
        expected = system.small_gain_radius
        if abs(rate - expected) > 1e-8 * max(1.0, abs(expected)):
            raise PowerIterationError(
                f"power iteration value {rate} disagrees with the rank-one scalar {expected}",
                history,
            )
    return rate


@dataclass(frozen=True)
class DominationReport:
    """Entrywise comparison T(t) <= S(t) and R(lam, A) <= R(lam, A_S)."""

    ok: bool
    spectral_ok: bool
    s_base: float
    s_perturbed: float
    exponential_violations: tuple
    resolvent_violations: tuple


def domination_check(
    system: PerturbedSystem, t_grid, lambda_grid, tol: float = 1e-10
) -> DominationReport:
    """Check the order relations a nonnegative perturbation must produce."""
    import scipy.linalg

    if np.min(system.perturbation) < -POSITIVITY_TOL:
        raise ValueError("domination requires a nonnegative perturbation")
    a, a_s = system.base.matrix, system.perturbed.matrix
    exp_bad = []
    for t in np.atleast_1d(np.asarray(t_grid, dtype=float)):
        gap = scipy.linalg.expm(a * t) - scipy.linalg.expm(a_s * t)
        worst = float(np.max(gap))
        if worst > tol:
            i, j = np.unravel_index(np.argmax(gap), gap.shape)
            exp_bad.append((float(t), int(i), int(j), worst))
    s_base = spectral_bound(system.base)
    s_pert = spectral_bound(system.perturbed)
    res_bad = []
    for lam in np.atleast_1d(np.asarray(lambda_grid, dtype=float)):
        if lam <= s_pert:
            raise ValueError(f"lambda = {lam} is not above s(A_S) = {s_pert}")
        gap = resolvent_matrix(system.base, float(lam)) - resolvent_matrix(
            system.perturbed, float(lam)
        )
        worst = float(np.max(gap))
        if worst > tol:
            i, j = np.unravel_index(np.argmax(gap), gap.shape)
            res_bad.append((float(lam), int(i), int(j), worst))
    spectral_ok = s_base <= s_pert + 1e-12
    return DominationReport(
        ok=not exp_bad and not res_bad and spectral_ok,
        spectral_ok=spectral_ok,
        s_base=s_base,
        s_perturbed=s_pert,
        exponential_violations=tuple(exp_bad),
        resolvent_violations=tuple(res_bad),
    )


@dataclass(frozen=True)
class VariationResidual:
    """Residual of the perturbed-vs-base convolution identity at step dt;
    `rate` = residual / dt is the first-order quadrature constant."""

    residual: float
    dt: float
    rate: float


def variation_of_constants_check(
    system: PerturbedSystem, x: GridVector, t: float, dt: float
) -> VariationResidual:
    """Compare S(t) x with T(t) x + int_0^t T(t-s) P S(s) x ds.

    Both semigroups step exactly; the convolution uses left-endpoint
    quadrature, so the residual shrinks linearly with dt.
    """
    import scipy.linalg

    if x.space != system.base.space:
        raise ValueError("state lives on a different grid")
    steps = round(t / dt)
    if steps < 1 or abs(steps * dt - t) > 1e-9 * max(1.0, t):
        raise ValueError(f"t = {t} is not a multiple of dt = {dt}")
    e_t = scipy.linalg.expm(system.base.matrix * dt)
    e_s = scipy.linalg.expm(system.perturbed.matrix * dt)
    z = x.values.copy()          # S(s) x
    base_only = x.values.copy()  # T(s) x
    conv = np.zeros_like(z)
    for _ in range(steps):
        conv = e_t @ (conv + dt * (system.perturbation @ z))
        z = e_s @ z
        base_only = e_t @ base_only
    residual = weighted_l1(z - base_only - conv, system.base.space)
    return VariationResidual(residual=residual, dt=dt, rate=residual / dt)
