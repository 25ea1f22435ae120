"""Newton refinement of candidate waves on a fixed frequency support.

This is an independent check on the perturbative solvers: it knows nothing
about contour integrals or spectral projectors.  Given any reasonable
starting wave it solves the projected nonlinear system

    F_q = (mu_q - lam) psi_q + (V psi)_q + sigma (psi |psi|^2)_q = 0,
    q in the working support S,

for the coefficients and the eigenvalue simultaneously.  Solutions come in
a two-real-parameter family (amplitude and global phase), so the anchor
coefficient ``psi_0`` is pinned to its starting value; that removes both
gauge directions at once.  The remaining system is formally one equation
over-determined, but one real equation is identically redundant (the
imaginary part of <psi, F> vanishes for any real-valued potential), so a
least-squares solve drives the residual to machine zero when the starting
point is inside the Newton basin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ContractError, NewtonFailure
from .fixedpoint import Solution
from .lattice import (
    ModelContext,
    PeriodicFunction,
    abs_squared,
    momentum,
    multiply,
    star_norm,
)
from .nonres import energy_gaps

NEWTON_TOL = 1e-12
NEWTON_MAX_STEPS = 20
LINE_SEARCH_HALVINGS = 10


def _projected_residual(
    ctx: ModelContext,
    support: Tuple[Tuple[int, ...], ...],
    gaps: np.ndarray,
    psi: PeriodicFunction,
    dlam: float,
) -> np.ndarray:
    coupled = multiply(ctx.V, psi) + multiply(abs_squared(psi), psi).scale(ctx.sigma)
    return np.array(
        [
            (g - dlam) * psi.get(q) + coupled.get(q)
            for q, g in zip(support, gaps)
        ],
        dtype=complex,
    )


def newton_solve(
    ctx: ModelContext,
    t,
    j,
    psi_init: PeriodicFunction,
    lam_gap_init: float,
    tol: float = NEWTON_TOL,
    max_steps: int = NEWTON_MAX_STEPS,
) -> Tuple[Solution, int]:
    """Refine (psi, lam) by a damped least-squares Newton iteration.

    ``lam_gap_init`` is the eigenvalue measured from the unperturbed energy.
    Returns the refined solution and the number of Newton steps taken;
    raises ``NewtonFailure`` on a singular Jacobian, a failed line search,
    or an exhausted step budget.
    """
    j = tuple(int(c) for c in j)
    t = tuple(float(c) for c in np.asarray(t, dtype=float))
    zero = (0,) * ctx.n
    if abs(psi_init.get(zero)) == 0.0:
        raise ContractError("anchor coefficient psi_0 must be nonzero for gauge pinning")

    support = tuple(sorted(set(psi_init.coeffs) | {zero}))
    index = {q: i for i, q in enumerate(support)}
    nS = len(support)
    free = [q for q in support if q != zero]
    gaps = energy_gaps(ctx, t, j, np.array(support, dtype=int))
    gap_of = dict(zip(support, gaps))

    p = momentum(j, t)
    k = float(np.sqrt(p @ p))
    center = k ** (2 * ctx.l)
    amp = abs(ctx.A) if ctx.A else 1.0

    psi = psi_init
    dlam = float(lam_gap_init)
    F = _projected_residual(ctx, support, gaps, psi, dlam)
    steps = 0

    while True:
        if math.fsum(np.abs(F)) / amp < tol:
            break
        if steps >= max_steps:
            raise NewtonFailure(
                f"residual {math.fsum(np.abs(F)) / amp:.3e} still above {tol:.1e} "
                f"after {max_steps} steps"
            )
        steps += 1

        dens = abs_squared(psi)          # coefficients of |psi|^2
        pair = multiply(psi, psi)        # coefficients of psi^2
        J1 = np.zeros((nS, nS), dtype=complex)
        J2 = np.zeros((nS, nS), dtype=complex)
        for qi, q in enumerate(support):
            for pi, pq in enumerate(support):
                diff = tuple(a - b for a, b in zip(q, pq))
                tot = tuple(a + b for a, b in zip(q, pq))
                J1[qi, pi] = ctx.V.get(diff) + 2.0 * ctx.sigma * dens.get(diff)
                J2[qi, pi] = ctx.sigma * pair.get(tot)
            J1[qi, qi] += gap_of[q] - dlam

        # Real-imaginary split.  Columns: (Re psi_p, Im psi_p) for free p,
        # then dlam.  dF = J1 da+idb + J2 da-idb - psi ddlam.
        ncols = 2 * (nS - 1) + 1
        Jr = np.zeros((2 * nS, ncols))
        for ci, pq in enumerate(free):
            pi = index[pq]
            plus = J1[:, pi] + J2[:, pi]
            minus = J1[:, pi] - J2[:, pi]
            Jr[:nS, 2 * ci] = plus.real
            Jr[nS:, 2 * ci] = plus.imag
            Jr[:nS, 2 * ci + 1] = -minus.imag
            Jr[nS:, 2 * ci + 1] = minus.real
        psi_vec = np.array([psi.get(q) for q in support])
        Jr[:nS, -1] = -psi_vec.real
        Jr[nS:, -1] = -psi_vec.imag

        rhs = -np.concatenate([F.real, F.imag])
        step, _, rank, _ = np.linalg.lstsq(Jr, rhs, rcond=None)
        if rank < ncols:
            raise NewtonFailure(
                f"Jacobian rank {rank} < {ncols}: the projected system is degenerate"
            )

        # Damped update with a strict-decrease backtracking line search.
        f0 = float(np.linalg.norm(F))
        scale = 1.0
        for _ in range(LINE_SEARCH_HALVINGS + 1):
            trial_coeffs = dict(psi.coeffs)
            for ci, pq in enumerate(free):
                trial_coeffs[pq] = (
                    psi.get(pq) + scale * complex(step[2 * ci], step[2 * ci + 1])
                )
            trial_psi = PeriodicFunction(ctx.n, trial_coeffs)
            trial_dlam = dlam + scale * float(step[-1])
            trial_F = _projected_residual(ctx, support, gaps, trial_psi, trial_dlam)
            if float(np.linalg.norm(trial_F)) < f0:
                psi, dlam, F = trial_psi, trial_dlam, trial_F
                break
            scale *= 0.5
        else:
            raise NewtonFailure(
                f"line search found no descent after {LINE_SEARCH_HALVINGS} halvings "
                f"(|F| = {f0:.3e})"
            )

    w_mean = float(ctx.sigma * abs_squared(psi).get(zero).real)
    sol = Solution(
        t=t,
        j=j,
        k=k,
        center=center,
        lam=float(center + dlam),
        lam_gap=float(dlam),
        psi=psi,
        eigenpair=None,
        w_mean=w_mean,
        sigma_abs2=ctx.sigma * abs(ctx.A) ** 2,
        steps=steps,
        converged=True,
        certified=False,
        backend="galerkin",
        admission=None,
    )
    return sol, steps


@dataclass(frozen=True)
class RefinementComparison:
    """How far a candidate solution moved under Newton refinement."""

    d_lam_gap: float
    d_psi: float
    rel_lam_gap: float
    steps: int


def compare(ctx: ModelContext, sol: Solution, tol: float = NEWTON_TOL) -> RefinementComparison:
    """Refine ``sol`` and report the displacement; small means confirmed."""
    refined, steps = newton_solve(ctx, sol.t, sol.j, sol.psi, sol.lam_gap, tol=tol)
    d_lam = abs(refined.lam_gap - sol.lam_gap)
    denom = max(abs(refined.lam_gap), abs(sol.lam_gap), 1e-300)
    return RefinementComparison(
        d_lam_gap=d_lam,
        d_psi=star_norm(refined.psi - sol.psi),
        rel_lam_gap=d_lam / denom,
        steps=steps,
    )
