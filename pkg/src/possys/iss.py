"""Input-to-state stability verdicts and gain envelopes.

The spectral route decides eISS from two numbers: the spectral bound of the
unperturbed generator and the small-gain radius of the loop operator.  The
trajectory route fits an envelope ||z(t)|| <= N exp(-mu t) ||x|| + G ||u||_L1
and validates it on random positive (x, u) pairs.  Both routes are kept and
compared; neither is allowed to stand in for the other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .control import InputSignal, step_input_operators, _as_column
from .errors import GainValidationError
from .generators import perron_mode, spectral_bound
from .lattice import induced_operator_norm, weighted_l1
from .perturbation import PerturbedSystem, small_gain_radius
from .semigroup import default_method, operator_norm_trajectory

EISS = "eISS"
NOT_EISS = "not_eISS"
INCONCLUSIVE = "inconclusive"
# spectral comparisons within this band are refused, not decided
GUARD_BAND = 1e-9


@dataclass(frozen=True)
class ISSReport:
    """Verdict with the two deciding scalars and, when fitted, the envelope.

    amplitude/decay_rate/gain are the (N, mu, G) of the estimate; they stay
    None until a gain fit runs.  witness carries a growing positive initial
    state for not_eISS verdicts.
    """

    verdict: str
    spectral_bound: float
    small_gain_radius: float
    p: float = 1
    amplitude: Optional[float] = None
    decay_rate: Optional[float] = None
    gain: Optional[float] = None
    witness: Optional[dict] = None

    def __post_init__(self):
        if self.verdict not in (EISS, NOT_EISS, INCONCLUSIVE):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == EISS:
            if not (self.spectral_bound < 0 and self.small_gain_radius < 1):
                raise ValueError("eISS verdict contradicts its own scalars")
            if self.decay_rate is not None and self.decay_rate <= 0:
                raise ValueError("eISS envelope needs a positive decay rate")
        if self.amplitude is not None and self.amplitude < 1:
            raise ValueError("envelope amplitude is >= 1 by T(0) = I")

    def with_envelope(self, amplitude: float, decay_rate: float, gain: float) -> "ISSReport":
        return ISSReport(
            verdict=self.verdict,
            spectral_bound=self.spectral_bound,
            small_gain_radius=self.small_gain_radius,
            p=self.p,
            amplitude=amplitude,
            decay_rate=decay_rate,
            gain=gain,
            witness=self.witness,
        )


def iss_verdict(system: PerturbedSystem, p: float = 1, guard: float = GUARD_BAND, rng=None) -> ISSReport:
    """Spectral eISS test: s(A) < 0 and loop radius < 1, with a guard band.

    Inside the band the verdict is inconclusive rather than a coin flip.
    not_eISS verdicts attach a nonnegative initial state whose zero-input
    trajectory grows; its growth rate is s(A_S).
    """
    s_a = spectral_bound(system.base)
    r = small_gain_radius(system, rng=rng)
    if s_a < -guard and r < 1.0 - guard:
        verdict = EISS
    elif r > 1.0 + guard or s_a > guard:
        verdict = NOT_EISS
    else:
        verdict = INCONCLUSIVE
    witness = None
    if verdict == NOT_EISS:
        rate, vec = perron_mode(system.perturbed)
        witness = {
            "initial_state": [float(v) for v in vec],
            "growth_rate": float(rate),
        }
    return ISSReport(
        verdict=verdict, spectral_bound=s_a, small_gain_radius=r, p=p, witness=witness
    )


def _norm_curves(e: np.ndarray, f: np.ndarray, col: np.ndarray, steps: int, space) -> tuple:
    """(||E^k||, ||E^k f||, ||E^k col||) for k = 0..steps in the weighted norm.

    Nonnegative systems ride the adjoint recursion y <- E^T y; anything
    signed falls back to accumulated matrix powers.
    """
    w = space.weights
    if np.min(e) >= 0 and np.min(f) >= 0 and np.min(col) >= 0:
        y = w.copy()
        op = np.empty(steps + 1)
        imp = np.empty(steps + 1)
        inj = np.empty(steps + 1)
        for k in range(steps + 1):
            op[k] = np.max(y / w)
            imp[k] = float(y @ f)
            inj[k] = float(y @ col)
            if k < steps:
                y = e.T @ y
        return op, imp, inj
    m = np.eye(len(col))
    op = np.empty(steps + 1)
    imp = np.empty(steps + 1)
    inj = np.empty(steps + 1)
    for k in range(steps + 1):
        op[k] = induced_operator_norm(m, space)
        imp[k] = weighted_l1(m @ f, space)
        inj[k] = weighted_l1(m @ col, space)
        if k < steps:
            m = e @ m
    return op, imp, inj


def iss_gain_fit(
    system: PerturbedSystem,
    b,
    trials: int = 100,
    horizon: Optional[float] = None,
    dt: Optional[float] = None,
    p: float = 1,
    rng=None,
    slack: float = 1e-8,
) -> tuple[float, float, float]:
    """Fit (N, mu, G) for the perturbed system and validate on random pairs.

    mu is the log-slope of ||S(t)|| over the tail half of the horizon, N
    lifts the envelope over the whole measured norm curve, and G combines
    max_k ||S(t_k) b|| with the per-step input operator so the estimate
    holds exactly on the grid.  `trials` random nonnegative (x, u) pairs are
    then checked; any violation beyond the slack raises GainValidationError.
    """
    if p != 1:
        raise ValueError("gain fitting is implemented for the L1 input norm only")
    rng = rng if rng is not None else np.random.default_rng(0)
    model = system.perturbed
    col = _as_column(b, model.space)
    if horizon is None:
        s_pert = spectral_bound(model) if model.cells <= 2000 else perron_mode(model)[0]
        horizon = min(max(20.0 / max(abs(s_pert), 1e-3), 10.0), 1e4)
    if dt is None:
        dt = horizon / 800
    steps = round(horizon / dt)
    method = default_method(model)
    e, f = step_input_operators(model, col, dt, method)

    op_norms, imp_norms, inj_norms = _norm_curves(e, f, col, steps, model.space)
    times = np.arange(steps + 1) * dt
    tail = times >= horizon / 2
    slope = np.polyfit(times[tail], np.log(np.maximum(op_norms[tail], 1e-300)), 1)[0]
    mu = -float(slope)
    if mu <= 0:
        raise GainValidationError(
            f"fit window produced nonpositive decay rate {mu}; lengthen the horizon",
            trial=-1,
        )
    amplitude = float(np.max(op_norms * np.exp(mu * times)))
    gain = float(max(np.max(inj_norms), np.max(imp_norms[:-1]) / dt if steps else 0.0))

    # validation: z_{k+1} = E z_k + F u_k for all trials at once
    n = model.cells
    x0 = rng.exponential(size=(n, trials)) * (10.0 ** rng.uniform(-1, 1, size=trials))
    x0[:, ::7] = 0.0
    u_mat = np.zeros((steps, trials))
    for i in range(trials):
        if i % 5 == 4:
            continue
        pieces = rng.integers(1, 6)
        marks = np.sort(rng.integers(0, steps + 1, size=2 * pieces))
        for a, bnd in zip(marks[::2], marks[1::2]):
            u_mat[a:bnd, i] += rng.exponential() * (10.0 ** rng.uniform(-1, 1))

    x_norm = model.space.spacing * np.sum(np.abs(x0), axis=0)
    u_norm = dt * np.sum(u_mat, axis=0)
    z = x0.copy()
    worst_gap = math.inf
    worst = (0, 0)
    for k in range(steps + 1):
        z_norm = model.space.spacing * np.sum(np.abs(z), axis=0)
        envelope = amplitude * math.exp(-mu * times[k]) * x_norm + gain * u_norm
        gaps = envelope - z_norm
        i = int(np.argmin(gaps))
        if gaps[i] < worst_gap:
            worst_gap, worst = float(gaps[i]), (k, i)
        if k < steps:
            z = e @ z + np.outer(f, u_mat[k])
    if worst_gap < -slack:
        k, i = worst
        raise GainValidationError(
            f"envelope violated by {-worst_gap:.3e} at t = {times[k]}",
            trial=i,
            state=x0[:, i].copy(),
            signal=InputSignal(np.arange(steps + 1) * dt, u_mat[:, i].copy()),
            time=float(times[k]),
            gap=worst_gap,
        )
    return amplitude, mu, gain


@dataclass(frozen=True)
class SweepEntry:
    """One family member: spectral verdict vs trajectory evidence."""

    label: str
    small_gain_radius: float
    s_perturbed: float
    verdict: str
    trajectory_stable: Optional[bool]
    agree: Optional[bool]
    skipped: bool


def iss_equivalence_sweep(
    family: Sequence[tuple[str, PerturbedSystem]],
    b=None,
    p: float = 1,
    horizon: Optional[float] = None,
    rng=None,
) -> list[SweepEntry]:
    """Run the spectral verdict against simulated evidence for each member.

    Evidence for stability: the fitted slope of ||S(t)|| is negative and the
    response to a constant input stays bounded.  Guard-band members are
    skipped, not judged.
    """
    rows = []
    for label, system in family:
        report = iss_verdict(system, p=p, rng=rng)
        s_pert = spectral_bound(system.perturbed)
        if report.verdict == INCONCLUSIVE:
            rows.append(
                SweepEntry(
                    label=str(label),
                    small_gain_radius=report.small_gain_radius,
                    s_perturbed=s_pert,
                    verdict=report.verdict,
                    trajectory_stable=None,
                    agree=None,
                    skipped=True,
                )
            )
            continue
        h = horizon if horizon is not None else min(max(20.0 / max(abs(s_pert), 0.05), 10.0), 1e3)
        grid = np.linspace(0.0, h, 201)
        norms = operator_norm_trajectory(system.perturbed, grid)
        tail = grid >= h / 2
        slope = np.polyfit(grid[tail], np.log(np.maximum(norms[tail], 1e-300)), 1)[0]

        col = _as_column(b, system.base.space) if b is not None else (
            system.injection if system.injection is not None else np.zeros(system.base.cells)
        )
        dt = h / 200
        e, f = step_input_operators(system.perturbed, col, dt)
        z = np.zeros(system.base.cells)
        response = np.empty(201)
        for k in range(201):
            response[k] = weighted_l1(z, system.base.space)
            if k < 200:
                z = e @ z + f
        bounded = bool(np.max(response[100:]) <= 2.0 * np.max(response[:100]) + 1.0)

        evidence = bool(slope < 0) and bounded
        rows.append(
            SweepEntry(
                label=str(label),
                small_gain_radius=report.small_gain_radius,
                s_perturbed=s_pert,
                verdict=report.verdict,
                trajectory_stable=evidence,
                agree=evidence == (report.verdict == EISS),
                skipped=False,
            )
        )
    return rows
