"""Isoenergetic surfaces: momenta that share one nonlinear eigenvalue.

For a fixed target eigenvalue ``lam`` and a unit direction ``nu``, the
surface radius ``kappa(nu)`` solves ``lam(kappa * nu) = lam``.  At high
energy the radius differs from the free-wave reference
``ktilde = (lam - sigma |A|^2)^(1/2l)`` by a correction ``h`` that is many
orders below the floating-point resolution of ``kappa`` itself, so the
search runs entirely in the ``h`` coordinate:

* the polynomial part ``kappa^{2l} - ktilde^{2l}`` is factored as
  ``h * sum_s kappa^s ktilde^{2l-1-s}``, which is smooth in ``h`` down to
  arbitrarily small values;
* the rounding committed when ``ktilde`` was squeezed into a float is
  captured once, in extended precision, as the constant ``c0``;
* the spectral correction is evaluated at the rounded momentum, where its
  own variation over one float spacing is negligible.

Surface points admit no closed form, so each evaluation runs the spectral
machinery; directions that fail the admission tests puncture the surface
and are reported, not silently skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import mpmath
import numpy as np

from .bloch import series_eigenpair
from .errors import (
    ConfigError,
    HoleBoundary,
    NonConvergence,
    NumericalFailure,
    ResonanceError,
)
from .fixedpoint import iterate
from .lattice import ModelContext, decompose
from .nonres import sample_directions

# Relative width at which the bracketed root search stops refining h.
H_REL_WIDTH = 1e-4
# Absolute width floor, scaled by the reference radius.
H_ABS_WIDTH = 1e-21
MAX_ROOT_EVALS = 160
BRACKET_EXPANSIONS = 4
BRACKET_SHRINKS = 10


def reference_radius(ctx: ModelContext, lam: float) -> Tuple[float, float]:
    """Free-wave radius for the target eigenvalue, plus its rounding defect.

    Returns ``(ktilde, c0)`` where ``c0 = ktilde^{2l} - (lam - sigma|A|^2)``
    is evaluated in extended precision: it is the exact amount by which the
    rounded float ``ktilde`` misses the target, and the root search must
    account for it because the corrections being resolved are smaller.
    """
    base = lam - ctx.sigma * abs(ctx.A) ** 2
    if base <= 0.0:
        raise ConfigError(f"target eigenvalue {lam} sits below the cubic shift")
    with mpmath.workdps(50):
        kt = float(mpmath.power(base, mpmath.mpf(1) / (2 * ctx.l)))
        c0 = float(mpmath.mpf(kt) ** (2 * ctx.l) - mpmath.mpf(base))
    if kt < ctx.k0:
        raise ConfigError(f"reference radius {kt:.6g} is below the working floor")
    return kt, c0


def _gap_total(
    ctx: ModelContext,
    kappa: float,
    nu: np.ndarray,
    solver: str,
    r_max: Optional[int],
) -> float:
    """lam(kappa * nu) - kappa^{2l}, by the requested solver."""
    j, t = decompose(kappa * nu)
    if solver == "series":
        pair = series_eigenpair(ctx, ctx.V, t, j, r_max=r_max)
        col_sq = math.fsum(abs(c) ** 2 for _, c in pair.proj_column.items())
        return pair.lam_gap + ctx.sigma * abs(ctx.A) ** 2 * col_sq
    if solver == "fixedpoint":
        sol, trace = iterate(ctx, t, j, backend="series", r_max=r_max)
        if sol is None:
            raise NonConvergence(
                f"self-consistency loop did not settle at kappa={kappa!r}"
            )
        return sol.lam_gap
    raise ConfigError(f"unknown solver {solver!r}; expected 'series' or 'fixedpoint'")


@dataclass(frozen=True)
class IsoSurfaceSample:
    """One resolved point of an isoenergetic surface."""

    lam_target: float
    direction: Tuple[float, ...]
    ktilde: float
    h: float
    kappa: float
    j: Tuple[int, ...]
    t: Tuple[float, ...]
    f_at_root: float            # residual of the defining equation at the root
    evals: int
    solver: str


def kappa_solve(
    ctx: ModelContext,
    lam: float,
    direction,
    solver: str = "series",
    r_max: Optional[int] = None,
    tol_root: Optional[float] = None,
) -> IsoSurfaceSample:
    """Radius of the isoenergetic surface along one direction.

    Runs a bracketed secant iteration (bisection-guarded) on the residual
    ``F(h) = lam(kappa(h) * nu) - lam`` expressed in the stable ``h``
    coordinate.  The initial bracket spans the a-priori correction scale
    ``ktilde^{1-n-2*delta}``; trial points that land on non-admitted momenta
    are pulled inward (endpoints toward zero, interior points toward the
    endpoint currently closest to the root -- mid-bracket punctures are
    generic at high energy because the bracket spans many ladder spacings,
    while the root itself sits deep in the admitted cell of the base
    direction), and a bracket with no sign change is widened a few times
    before giving up.  The root is certified by re-evaluating the residual,
    which must come out below ``tol_root`` (default ``1e-9 * |lam|``).
    """
    nu = np.asarray(direction, dtype=float)
    norm = float(np.linalg.norm(nu))
    if norm == 0.0:
        raise ConfigError("direction must be a nonzero vector")
    nu = nu / norm
    if nu.shape != (ctx.n,):
        raise ConfigError(f"direction must have dimension {ctx.n}")

    kt, c0 = reference_radius(ctx, lam)
    sig2 = ctx.sigma * abs(ctx.A) ** 2
    if tol_root is None:
        tol_root = ctx.tol_root if ctx.tol_root is not None else 1e-9 * abs(lam)

    evals = 0

    def F(h: float) -> float:
        nonlocal evals
        evals += 1
        kappa = kt + h
        powsum = math.fsum(kappa ** s * kt ** (2 * ctx.l - 1 - s) for s in range(2 * ctx.l))
        return h * powsum + c0 + (_gap_total(ctx, kappa, nu, solver, r_max) - sig2)

    half = kt ** (1 - ctx.n - 2 * ctx.delta)
    lo, hi = -half, half

    def eval_endpoint(h: float, inward: float) -> Tuple[float, float]:
        """Evaluate F at an endpoint, stepping toward 0 if not admitted."""
        for _ in range(BRACKET_SHRINKS):
            try:
                return h, F(h)
            except ResonanceError:
                h *= inward
        raise NumericalFailure(
            "could not place an admitted bracket endpoint for the surface solve"
        )

    def eval_interior(h: float, toward: float) -> Tuple[float, float]:
        """Evaluate F inside the bracket, sliding toward ``toward`` when a
        trial lands on a punctured momentum (admission holds near ``toward``
        because it was evaluated there already)."""
        for _ in range(BRACKET_SHRINKS):
            try:
                return h, F(h)
            except ResonanceError:
                h = 0.5 * (h + toward)
        raise NumericalFailure(
            "surface root search kept landing on punctured momenta"
        )

    lo, f_lo = eval_endpoint(lo, 0.5)
    hi, f_hi = eval_endpoint(hi, 0.5)

    expansions = 0
    while f_lo * f_hi > 0.0:
        if expansions >= BRACKET_EXPANSIONS:
            raise NonConvergence(
                f"no sign change of the surface residual within h in "
                f"[{lo:.3e}, {hi:.3e}] after {expansions} expansions"
            )
        expansions += 1
        lo, f_lo = eval_endpoint(2.0 * lo, 0.5)
        hi, f_hi = eval_endpoint(2.0 * hi, 0.5)

    # Bracketed secant with a bisection guard: the sign change is preserved
    # and the width is forced to halve regularly, so termination is assured.
    stall = 0
    while evals < MAX_ROOT_EVALS:
        width = hi - lo
        h_best = lo if abs(f_lo) <= abs(f_hi) else hi
        if width <= max(H_REL_WIDTH * abs(h_best), H_ABS_WIDTH * max(1.0, kt)):
            break
        if f_hi != f_lo and stall < 2:
            h_new = hi - f_hi * (hi - lo) / (f_hi - f_lo)
            margin = 0.01 * width
            if not lo + margin <= h_new <= hi - margin:
                h_new = 0.5 * (lo + hi)
        else:
            h_new = 0.5 * (lo + hi)
            stall = 0
        h_new, f_new = eval_interior(h_new, lo if abs(f_lo) <= abs(f_hi) else hi)
        if f_new == 0.0:
            lo = hi = h_new
            f_lo = f_hi = f_new
            break
        if f_lo * f_new < 0.0:
            hi, f_hi = h_new, f_new
        else:
            lo, f_lo = h_new, f_new
        stall = stall + 1 if (hi - lo) > 0.6 * width else 0
    else:
        raise NonConvergence(
            f"surface root search exhausted {MAX_ROOT_EVALS} evaluations "
            f"(bracket [{lo:.6e}, {hi:.6e}])"
        )

    h_root = lo if abs(f_lo) <= abs(f_hi) else hi
    f_root = f_lo if h_root == lo else f_hi
    if abs(f_root) > tol_root:
        raise NumericalFailure(
            f"surface root certificate failed: |F| = {abs(f_root):.3e} "
            f"exceeds {tol_root:.3e}"
        )

    kappa = kt + h_root
    j, t = decompose(kappa * nu)
    return IsoSurfaceSample(
        lam_target=float(lam),
        direction=tuple(float(c) for c in nu),
        ktilde=kt,
        h=float(h_root),
        kappa=float(kappa),
        j=tuple(int(c) for c in j),
        t=tuple(float(c) for c in t),
        f_at_root=float(f_root),
        evals=evals,
        solver=solver,
    )


@dataclass(frozen=True)
class SurfaceScan:
    """Batch of surface solves over many directions, with failure accounting."""

    lam_target: float
    requested: int
    resolved: Tuple[IsoSurfaceSample, ...]
    holes: int                 # directions rejected by the admission tests
    failures: int              # root searches that failed for other reasons

    @property
    def kappa_values(self) -> np.ndarray:
        return np.array([s.kappa for s in self.resolved])


def sample_surface(
    ctx: ModelContext,
    lam: float,
    count: int,
    seed: Optional[int] = None,
    solver: str = "series",
    r_max: Optional[int] = None,
    sweep: bool = False,
) -> SurfaceScan:
    """Resolve surface points over random directions (or a uniform sweep).

    ``sweep=True`` spaces directions uniformly in angle (planar models
    only); otherwise directions come from the deterministic per-index
    sampler.  Admission failures count as holes; they are part of the
    geometry, not errors.
    """
    if count < 1:
        raise ConfigError("count must be >= 1")
    if sweep:
        if ctx.n != 2:
            raise ConfigError("uniform angular sweep requires a planar model")
        theta = 2.0 * np.pi * np.arange(count) / count
        dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    else:
        dirs = sample_directions(ctx.n, count, ctx.seed if seed is None else seed)

    resolved = []
    holes = 0
    failures = 0
    for nu in dirs:
        try:
            resolved.append(kappa_solve(ctx, lam, nu, solver=solver, r_max=r_max))
        except ResonanceError:
            holes += 1
        except (NonConvergence, NumericalFailure):
            failures += 1
    return SurfaceScan(
        lam_target=float(lam),
        requested=count,
        resolved=tuple(resolved),
        holes=holes,
        failures=failures,
    )


@dataclass(frozen=True)
class GradientSample:
    """Tangential finite-difference derivative of the surface radius."""

    lam_target: float
    direction: Tuple[float, ...]
    tangent: Tuple[float, ...]
    step: float
    value: float
    kappa_center: float
    kappa_plus: float
    kappa_minus: float


def h_gradient(
    ctx: ModelContext,
    lam: float,
    direction,
    step: float = 1e-3,
    tangent=None,
    solver: str = "series",
    r_max: Optional[int] = None,
) -> GradientSample:
    """d kappa / d angle along a great circle through ``direction``.

    The two off-center evaluations sit on the geodesic
    ``cos(step) * nu +- sin(step) * tau``; if either leaves the admitted set
    the derivative does not exist along this arc and ``HoleBoundary`` is
    raised, carrying no numerical value.
    """
    nu = np.asarray(direction, dtype=float)
    nu = nu / np.linalg.norm(nu)
    if tangent is None:
        probe = np.zeros(ctx.n)
        probe[int(np.argmin(np.abs(nu)))] = 1.0
        tau = probe - (probe @ nu) * nu
        tau = tau / np.linalg.norm(tau)
    else:
        tau = np.asarray(tangent, dtype=float)
        tau = tau - (tau @ nu) * nu
        nt = float(np.linalg.norm(tau))
        if nt < 1e-12:
            raise ConfigError("tangent vector is parallel to the direction")
        tau = tau / nt

    center = kappa_solve(ctx, lam, nu, solver=solver, r_max=r_max)
    sides = []
    for sgn in (+1.0, -1.0):
        nu_side = math.cos(step) * nu + sgn * math.sin(step) * tau
        try:
            sides.append(kappa_solve(ctx, lam, nu_side, solver=solver, r_max=r_max))
        except ResonanceError as exc:
            raise HoleBoundary(
                f"surface hole within one step ({step:.1e}) of the direction; "
                "no tangential derivative here"
            ) from exc
    plus, minus = sides
    return GradientSample(
        lam_target=float(lam),
        direction=tuple(float(c) for c in nu),
        tangent=tuple(float(c) for c in tau),
        step=float(step),
        value=(plus.kappa - minus.kappa) / (2.0 * math.sin(step)),
        kappa_center=center.kappa,
        kappa_plus=plus.kappa,
        kappa_minus=minus.kappa,
    )
