"""Generator matrices for transport with absorption, and their resolvents.

The continuous model is f' = -df/dx - q(x) f on [0, L] with one of three
inflow rules at x = 0; the upwind finite-volume truncation turns it into a
Metzler matrix acting on grid vectors.  Everything downstream (resolvent
positivity, spectral bounds, inverse estimates) is phrased against the
matrix, so custom generators can be wrapped with `GeneratorModel.from_matrix`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import EigensolverError, SingularSystemError
from .lattice import (
    POSITIVITY_TOL,
    GridSpace,
    GridVector,
    _readonly,
    positive_column_scores,
)

# eigenvalue proximity below which a resolvent solve is refused
SINGULARITY_TOL = 1e-12
# relative residual allowed on a resolvent solve
RESIDUAL_TOL = 1e-10
# largest n for a dense eigensolve; beyond it only Metzler matrices are handled
DENSE_EIG_LIMIT = 2000


@dataclass(frozen=True)
class ZeroInflow:
    """Dirichlet boundary: nothing enters at x = 0."""

    kind: str = field(default="zero_inflow", init=False)


@dataclass(frozen=True)
class ProportionalWrap:
    """Inflow proportional to the outflow at x = L (a ring for gain >= 1)."""

    gain: float
    kind: str = field(default="proportional", init=False)

    def __post_init__(self):
        if not np.isfinite(self.gain) or self.gain < 0:
            raise ValueError(f"wrap gain must be finite and >= 0, got {self.gain}")


@dataclass(frozen=True)
class NonlocalBirth:
    """Inflow equals the weighted population integral, sum_j beta_j h f_j."""

    rates: np.ndarray
    kind: str = field(default="nonlocal", init=False)

    def __post_init__(self):
        object.__setattr__(self, "rates", _readonly(self.rates))


@dataclass(frozen=True)
class GeneratorModel:
    """A generator matrix together with the grid it acts on.

    `absorption` keeps the cell-wise rates q_j when the matrix came from the
    upwind builder; custom matrices leave it None.  `metzler` is recomputed
    from the entries, never trusted from the caller.
    """

    space: GridSpace
    matrix: np.ndarray
    boundary: str = "custom"
    absorption: Optional[np.ndarray] = None

    def __post_init__(self):
        mat = _readonly(self.matrix)
        n = self.space.cells
        if mat.shape != (n, n):
            raise ValueError(f"matrix shape {mat.shape} does not match {n} cells")
        if not np.all(np.isfinite(mat)):
            raise ValueError("generator entries must be finite")
        object.__setattr__(self, "matrix", mat)
        if self.absorption is not None:
            q = _readonly(self.absorption)
            if q.shape != (n,):
                raise ValueError("absorption profile length does not match the grid")
            object.__setattr__(self, "absorption", q)

    @classmethod
    def from_matrix(cls, space: GridSpace, matrix, boundary: str = "custom") -> "GeneratorModel":
        return cls(space=space, matrix=np.asarray(matrix, dtype=float), boundary=boundary)

    @property
    def metzler(self) -> bool:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return bool(np.min(off) >= -POSITIVITY_TOL)

    @property
    def cells(self) -> int:
        return self.space.cells


def build_upwind_generator(space: GridSpace, q, boundary=None) -> GeneratorModel:
    """Upwind truncation of -d/dx - q(x) with the given inflow rule.

    Cell j gets diagonal -1/h - q_j and receives the upwind flux f_{j-1}/h;
    the inflow rule decides what cell 0 receives.  The result is Metzler for
    any q >= 0 and nonnegative boundary data.
    """
    boundary = boundary if boundary is not None else ZeroInflow()
    n = space.cells
    h = space.spacing
    q = np.broadcast_to(np.asarray(q, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(q)):
        raise ValueError("absorption profile must be finite")
    if np.min(q) < 0:
        raise ValueError("absorption profile must be nonnegative")

    a = np.zeros((n, n))
    np.fill_diagonal(a, -1.0 / h - q)
    idx = np.arange(n - 1)
    a[idx + 1, idx] = 1.0 / h

    if isinstance(boundary, ZeroInflow):
        pass
    elif isinstance(boundary, ProportionalWrap):
        a[0, n - 1] += boundary.gain / h
    elif isinstance(boundary, NonlocalBirth):
        rates = np.broadcast_to(boundary.rates, (n,))
        if np.min(rates) < 0:
            raise ValueError("birth rates must be nonnegative")
        # ghost inflow (sum_j beta_j h f_j) / h contributes beta_j to row 0
        a[0, :] += rates
    else:
        raise TypeError(f"unknown boundary rule {boundary!r}")

    return GeneratorModel(space=space, matrix=a, boundary=boundary.kind, absorption=q)


def _lower_triangular(a: np.ndarray) -> bool:
    return np.count_nonzero(np.triu(a, 1)) == 0


def _upper_triangular(a: np.ndarray) -> bool:
    return np.count_nonzero(np.tril(a, -1)) == 0


def _shifted(model: GeneratorModel, lam: float) -> np.ndarray:
    m = lam * np.eye(model.cells) - model.matrix
    if _lower_triangular(m) or _upper_triangular(m):
        gap = np.min(np.abs(np.diag(m)))
        if gap <= SINGULARITY_TOL:
            raise SingularSystemError(
                f"lambda = {lam} is within {gap:.3e} of an eigenvalue"
            )
    return m


def _solve_shifted(model: GeneratorModel, lam: float, rhs: np.ndarray) -> np.ndarray:
    m = _shifted(model, lam)
    try:
        if _lower_triangular(m):
            return scipy.linalg.solve_triangular(m, rhs, lower=True)
        if _upper_triangular(m):
            return scipy.linalg.solve_triangular(m, rhs, lower=False)
        return np.linalg.solve(m, rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularSystemError(f"resolvent solve failed at lambda = {lam}: {exc}") from exc


def _backward_error(model: GeneratorModel, lam: float, g: np.ndarray, rhs: np.ndarray) -> float:
    # residual scaled the way backward stability predicts: huge resolvents
    # are fine as long as the solve is exact for a nearby problem
    if not np.all(np.isfinite(g)):
        return math.inf
    resid = np.linalg.norm(lam * g - model.matrix @ g - rhs, ord=1)
    scale = np.linalg.norm(rhs, ord=1) + (abs(lam) + np.linalg.norm(model.matrix, 1)) * np.linalg.norm(g, ord=1)
    return resid / scale if scale > 0 else resid


def resolvent_matrix(model: GeneratorModel, lam: float) -> np.ndarray:
    """Dense (lam I - A)^{-1}, with a probe check on the solve residual."""
    r = _solve_shifted(model, lam, np.eye(model.cells))
    # probe the solve with a single vector; a full matrix residual is O(n^3)
    probe = r @ np.ones(model.cells)
    err = _backward_error(model, lam, probe, np.ones(model.cells))
    if not np.isfinite(err) or err > RESIDUAL_TOL:
        raise SingularSystemError(
            f"resolvent at lambda = {lam} has backward error {err:.3e}"
        )
    return r


def resolvent_apply(model: GeneratorModel, lam: float, f) -> GridVector:
    """g = (lam I - A)^{-1} f, refused unless the backward error is <= 1e-10."""
    vals = f.values if isinstance(f, GridVector) else np.asarray(f, dtype=float)
    g = _solve_shifted(model, lam, vals)
    err = _backward_error(model, lam, g, vals)
    if np.any(vals) and (not np.isfinite(err) or err > RESIDUAL_TOL):
        raise SingularSystemError(
            f"resolvent solve at lambda = {lam} has backward error {err:.3e}"
        )
    return model.space.vector(g)


def spectral_bound(model: GeneratorModel) -> float:
    """max Re(spectrum).

    Triangular matrices read it off the diagonal (exact for the zero-inflow
    upwind generator).  Dense eigensolve up to n = 2000; above that a Perron
    power iteration on exp(t0 A) handles the Metzler case.
    """
    a = model.matrix
    if _lower_triangular(a) or _upper_triangular(a):
        return float(np.max(np.diag(a)))
    n = model.cells
    if n <= DENSE_EIG_LIMIT:
        try:
            ev = np.linalg.eigvals(a)
        except np.linalg.LinAlgError as exc:
            raise EigensolverError(f"dense eigensolve failed: {exc}") from exc
        return float(np.max(ev.real))
    if not model.metzler:
        raise EigensolverError(
            f"n = {n} exceeds the dense eigensolve limit and the matrix is not Metzler"
        )
    return _perron_growth_rate(a)


def _perron_growth_rate(a: np.ndarray, tol: float = 1e-9, max_iter: int = 500) -> float:
    """s(A) for large Metzler A via the growth rate of exp(t0 A) on the cone.

    t0 is order one: the contrast between eigenvalues separated by an O(1)
    gap is what drives convergence, not the norm of A.  The iterate is
    accepted once it is an eigenvector up to residual tol.
    """
    from scipy.sparse.linalg import expm_multiply

    t0 = 1.0
    rng = np.random.default_rng(0)
    v = rng.random(a.shape[0]) + 0.1
    v /= np.sum(v)
    for _ in range(max_iter):
        w = expm_multiply(a * t0, v)
        growth = float(np.sum(np.abs(w)))
        v = np.abs(w) / growth
        rate = math.log(growth) / t0
        resid = float(np.sum(np.abs(a @ v - rate * v)))
        if resid <= tol * (1.0 + abs(rate)):
            return rate
    raise EigensolverError("Perron growth iteration did not converge")


def perron_mode(model: GeneratorModel, tol: float = 1e-10, max_iter: int = 10_000) -> tuple[float, np.ndarray]:
    """Rightmost eigenvalue with a nonnegative eigenvector.

    Metzler matrices use power iteration on one implicit-Euler resolvent
    step, whose dominant eigenvalue is 1/(1 - dt s(A)); this stays O(n^2)
    per sweep after one factorization.  Other matrices fall back to a dense
    eigensolve.
    """
    a = model.matrix
    n = model.cells
    if not model.metzler:
        ev, vecs = np.linalg.eig(a)
        i = int(np.argmax(ev.real))
        v = np.abs(vecs[:, i].real)
        total = float(np.sum(v))
        return float(ev[i].real), v / total if total else v
    # column sums bound s(A) from above for Metzler A, so 1/dt stays in the
    # resolvent set; dt of order one keeps the eigenvalue contrast usable
    col_bound = max(0.0, float(np.max(np.sum(a, axis=0))))
    dt = 1.0 / (1.0 + col_bound)
    lu = scipy.linalg.lu_factor(np.eye(n) - dt * a)
    v = np.full(n, 1.0 / n)
    for k in range(max_iter):
        w = scipy.linalg.lu_solve(lu, v)
        rho = float(np.sum(np.abs(w)))
        v = np.abs(w) / rho
        rate = (1.0 - 1.0 / rho) / dt
        if k % 4 == 3:
            resid = float(np.sum(np.abs(a @ v - rate * v)))
            if resid <= 100.0 * tol * (1.0 + abs(rate)):
                return rate, v
    raise EigensolverError("Perron mode iteration did not converge")


def check_resolvent_positive(model: GeneratorModel, lambda_grid, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Entrywise nonnegativity of (lam I - A)^{-1} for each lam in the grid.

    A lam whose solve fails the backward-error check cannot be certified
    and is reported False.
    """
    flags = []
    for lam in np.atleast_1d(np.asarray(lambda_grid, dtype=float)):
        try:
            r = resolvent_matrix(model, float(lam))
        except SingularSystemError:
            flags.append(False)
            continue
        flags.append(bool(np.min(r) >= -tol))
    return np.array(flags, dtype=bool)


def inverse_estimate_constant(model: GeneratorModel, lambda0: float) -> float:
    """Largest c with ||R(lambda0, A) x|| >= c ||x|| for x in the cone.

    Only defined when the resolvent is entrywise nonnegative; then the bound
    is attained on a basis direction, so c is the smallest weighted column
    score of the resolvent matrix.
    """
    s = spectral_bound(model)
    if lambda0 <= s:
        raise ValueError(f"lambda0 = {lambda0} must exceed the spectral bound {s}")
    r = resolvent_matrix(model, lambda0)
    if np.min(r) < -POSITIVITY_TOL:
        raise ValueError(
            f"resolvent at lambda0 = {lambda0} is not entrywise nonnegative"
        )
    return float(np.min(positive_column_scores(r, model.space)))


def inverse_estimate_curve(model: GeneratorModel, lambda_grid) -> np.ndarray:
    return np.array(
        [inverse_estimate_constant(model, float(lam)) for lam in np.atleast_1d(lambda_grid)]
    )


@dataclass(frozen=True)
class SpectralReport:
    """Spectral bound, a finite-window growth estimate, and where the
    resolvent scan turned positive (nan if it never did)."""

    spectral_bound: float
    growth_estimate: float
    resolvent_positive_from: float

    def __post_init__(self):
        # finite-window slopes sit at or above the spectral bound
        if self.spectral_bound > self.growth_estimate + 0.05:
            raise ValueError(
                f"spectral bound {self.spectral_bound} exceeds growth estimate "
                f"{self.growth_estimate}"
            )


def spectral_report(model: GeneratorModel, lambda_scan=None) -> SpectralReport:
    """Bundle of the spectral audit quantities.

    The growth estimate is the log-slope of ||T(t)|| over the second half of
    a window scaled to the spectral bound; it upper-bounds s(A) for the
    non-normal truncations seen here.
    """
    from .semigroup import growth_estimate as _growth

    s = spectral_bound(model)
    est = _growth(model)
    if lambda_scan is None:
        lambda_scan = s + np.array([1e-2, 1e-1, 1.0, 10.0])
    lams = np.sort(np.atleast_1d(np.asarray(lambda_scan, dtype=float)))
    flags = check_resolvent_positive(model, lams)
    onset = math.nan
    for lam, ok in zip(lams[::-1], flags[::-1]):
        if not ok:
            break
        onset = float(lam)
    return SpectralReport(spectral_bound=s, growth_estimate=est, resolvent_positive_from=onset)
