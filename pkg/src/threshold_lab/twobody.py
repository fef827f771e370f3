"""Radial s-wave two-body solver.

Works on the reduced radial function u(r) = r * psi(r) of -laplacian + V
with V(r) = -g * shape(r).  Provides critical-coupling detection through
the asymptotic slope of the zero-energy solution (at critical coupling the
solution flattens to a constant), subcriticality certificates, ground bound
states by node-counted shooting, and the distance of a bound state to the
universal near-threshold profile sqrt(k) exp(-k r) / (sqrt(2 pi) r).

A dense Birman-Schwinger discretization is kept alongside as a slow,
independent cross-check of the critical coupling; the shooting route is
the production method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit
from scipy import integrate
from scipy.sparse.linalg import eigsh

from .model import PairPotential

__all__ = [
    "RadialSolution",
    "CriticalCouplingResult",
    "integrate_zero_energy",
    "zero_energy_profile",
    "find_critical_coupling",
    "subcriticality_check",
    "bound_state",
    "tune_depth_to_energy",
    "theorem1_distance",
    "asymptotic_profile_overlap",
    "w_kernel_check",
    "birman_schwinger_critical_coupling",
]

DEFAULT_RMAX_FACTOR = 40.0
DEFAULT_STEPS_PER_RANGE = 200
SUBCRITICAL_MARGIN = 1e-3


class BracketError(RuntimeError):
    """A root bracket could not be established."""


@njit(cache=True)
def _numerov_sweep(f, h, u0, u1):
    """Numerov integration of u'' = f(r) u with fixed step h.

    Returns the full solution array; caller is responsible for overflow
    (fine for zero-energy and tail-matched runs).
    """
    n = f.shape[0]
    u = np.empty(n)
    u[0] = u0
    u[1] = u1
    c_prev = 1.0 - h * h * f[0] / 12.0
    c_cur = 1.0 - h * h * f[1] / 12.0
    for i in range(1, n - 1):
        c_next = 1.0 - h * h * f[i + 1] / 12.0
        u[i + 1] = ((12.0 - 10.0 * c_cur) * u[i] - c_prev * u[i - 1]) / c_next
        c_prev = c_cur
        c_cur = c_next
    return u


@njit(cache=True)
def _numerov_nodes(f, h):
    """Outward Numerov sweep with rescaling; returns (node count, sign at end).

    Start values u(0) = 0, u'(0) = 1.  Rescaling whenever |u| grows past
    1e250 keeps deep classically-forbidden sweeps finite without touching
    signs or node positions.
    """
    n = f.shape[0]
    u_prev = 0.0
    u_cur = h  # first-order seed; h^3 correction irrelevant for node counts
    c_prev = 1.0 - h * h * f[0] / 12.0
    c_cur = 1.0 - h * h * f[1] / 12.0
    nodes = 0
    for i in range(1, n - 1):
        c_next = 1.0 - h * h * f[i + 1] / 12.0
        u_next = ((12.0 - 10.0 * c_cur) * u_cur - c_prev * u_prev) / c_next
        if u_next == 0.0 or u_next * u_cur < 0.0:
            nodes += 1
        if abs(u_next) > 1e250:
            u_next *= 1e-250
            u_cur *= 1e-250
        u_prev = u_cur
        u_cur = u_next
        c_prev = c_cur
        c_cur = c_next
    return nodes, 1.0 if u_cur > 0.0 else -1.0


def _radial_grid(p: PairPotential, r_max=None, n_steps=None):
    if r_max is None:
        r_max = DEFAULT_RMAX_FACTOR * p.range
    if n_steps is None:
        n_steps = int(round(DEFAULT_STEPS_PER_RANGE * r_max / p.range))
    r = np.linspace(0.0, r_max, n_steps + 1)
    return r, r[1] - r[0]


def zero_energy_profile(p: PairPotential, g: float, r_max=None, n_steps=None):
    """Zero-energy solution: (r, u, asymptotic slope, node count).

    Integrates u'' = -g shape(r) u outward from u(0) = 0, u'(0) = 1 and
    fits u ~ a + b r on the last quarter of the grid.
    """
    r, h = _radial_grid(p, r_max, n_steps)
    f = -g * p.shape(r)
    u = _numerov_sweep(f, h, 0.0, h + f[0] * h**3 / 6.0)
    tail = slice(int(0.75 * len(r)), None)
    b, _a = np.polyfit(r[tail], u[tail], 1)
    interior = u[1:]
    nodes = int(np.count_nonzero(interior[1:] * interior[:-1] < 0.0))
    return r, u, float(b), nodes


def integrate_zero_energy(p: PairPotential, g: float, r_max=None, n_steps=None) -> float:
    """Asymptotic slope b of the zero-energy solution (u ~ a + b r)."""
    if g < 0:
        raise ValueError("coupling g must be nonnegative")
    return zero_energy_profile(p, g, r_max, n_steps)[2]


@dataclass(frozen=True)
class CriticalCouplingResult:
    g_critical: float
    bracket: tuple[float, float]
    slope_at_critical: float


def find_critical_coupling(
    p: PairPotential,
    g_max: float | None = None,
    rtol: float = 1e-9,
    r_max=None,
    n_steps=None,
) -> CriticalCouplingResult:
    """Coupling at which the zero-energy resonance appears.

    Bisects on the sign of the asymptotic slope: positive below critical
    coupling, negative once a bound state has been pulled in.
    """
    slope = lambda g: integrate_zero_energy(p, g, r_max, n_steps)
    lo, s_lo = 0.0, 1.0
    if g_max is not None:
        hi = g_max
        if slope(hi) >= 0.0:
            raise BracketError(f"no slope sign change in [0, {g_max}]")
    else:
        hi = 2.0 / p.range**2
        for _ in range(80):
            if slope(hi) < 0.0:
                break
            lo = hi
            hi *= 2.0
        else:
            raise BracketError("slope never turned negative while doubling the coupling")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if slope(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    g_c = 0.5 * (lo + hi)
    return CriticalCouplingResult(g_critical=g_c, bracket=(lo, hi), slope_at_critical=slope(g_c))


@lru_cache(maxsize=64)
def _critical_depth_cached(family: str, rng: float) -> float:
    return find_critical_coupling(PairPotential(family, 1.0, rng)).g_critical


def critical_depth(p: PairPotential) -> float:
    """Critical total depth for p's shape and range (cached)."""
    return _critical_depth_cached(p.family, p.range)


def subcriticality_check(p: PairPotential, lam: float, margin: float = SUBCRITICAL_MARGIN) -> bool:
    """True iff lam * depth stays below the critical depth by the margin.

    Guarantees the pair Hamiltonian -laplacian + lam V is positive with
    neither a bound state nor a zero-energy resonance.
    """
    if lam * p.depth < 0:
        return False
    return lam * p.depth < critical_depth(p) * (1.0 - margin)


# ---------------------------------------------------------------------------
# bound states


@dataclass(frozen=True)
class RadialSolution:
    """Normalized reduced radial bound state: 4 pi * int u^2 dr = 1."""

    r_grid: np.ndarray
    u_values: np.ndarray
    energy: float
    norm: float

    @property
    def k(self) -> float:
        return math.sqrt(-self.energy)


def _ground_energy_nodecount(v_grid, h, e_lo, e_hi, tol_abs=1e-13, tol_rel=1e-12):
    """Lowest Dirichlet eigenvalue on the grid by node-counted bisection.

    v_grid holds V(r) at the uniform nodes; the predicate 'at least one
    node' is monotone in E (Sturm oscillation), so bisection converges to
    the ground eigenvalue of the shot problem.
    """
    nodes = lambda e: _numerov_nodes(v_grid - e, h)[0]
    if nodes(e_lo) != 0:
        raise BracketError("lower energy bound already has a node; bracket too high")
    if nodes(e_hi) == 0:
        raise BracketError("no bound state in energy bracket")
    while e_hi - e_lo > tol_abs + tol_rel * abs(e_lo):
        mid = 0.5 * (e_lo + e_hi)
        if nodes(mid) == 0:
            e_lo = mid
        else:
            e_hi = mid
    return 0.5 * (e_lo + e_hi)


def _match_wavefunction(r, v_grid, h, energy):
    """Outward/inward Numerov glued at the outer edge of the well."""
    f = v_grid - energy
    k = math.sqrt(max(-energy, 1e-300))
    # match where the potential is negligible against |E|, but not too close in
    strength = np.abs(v_grid) / max(abs(energy), 1e-14)
    beyond = np.nonzero(strength < 0.05)[0]
    i_match = int(beyond[0]) if len(beyond) else int(0.7 * len(r))
    i_match = min(max(i_match, 8), len(r) - 8)

    u_out = _numerov_sweep(f[: i_match + 1], h, 0.0, h + f[0] * h**3 / 6.0)
    # inward sweep of the decaying branch: reversing the grid keeps Numerov intact
    f_rev = f[i_match:][::-1]
    seed0 = math.exp(-k * (r[-1] - r[i_match]))
    seed1 = math.exp(-k * (r[-2] - r[i_match]))
    u_in_rev = _numerov_sweep(np.ascontiguousarray(f_rev), h, seed0, seed1)
    u_in = u_in_rev[::-1]

    u = np.empty_like(r)
    scale = u_in[0] / u_out[i_match]
    u[: i_match + 1] = u_out * scale
    u[i_match:] = u_in
    return u


def bound_state(p: PairPotential, g: float, r_max=None, n_steps=None) -> RadialSolution:
    """Ground s-wave bound state of -laplacian - g shape(r).

    Energy from node-counted shooting; the wavefunction is rebuilt by an
    outward/inward matched sweep so the tail is a clean decaying
    exponential, then normalized to unit 3D norm.
    """
    if g <= 0:
        raise ValueError("bound_state needs an attractive coupling g > 0")
    r, h = _radial_grid(p, r_max, n_steps)
    v_grid = -g * p.shape(r)
    e_lo = float(v_grid.min()) - 1.0
    energy = _ground_energy_nodecount(v_grid, h, e_lo, -1e-14)
    u = _match_wavefunction(r, v_grid, h, energy)
    norm2 = 4.0 * math.pi * np.trapezoid(u * u, r)
    u = u / math.sqrt(norm2)
    return RadialSolution(r_grid=r, u_values=u, energy=energy, norm=1.0)


def tune_depth_to_energy(p: PairPotential, target_e: float, r_max=None, n_steps=None) -> tuple[float, RadialSolution]:
    """Depth g with ground energy equal to target_e (negative), by bracketed root find.

    The box is enlarged to 12 decay lengths of the target state so shallow
    levels keep a faithful exponential tail.
    """
    if not target_e < 0:
        raise ValueError("target energy must be negative")
    if r_max is None:
        r_max = max(DEFAULT_RMAX_FACTOR * p.range, 12.0 / math.sqrt(-target_e))
    g_c = critical_depth(p)

    def energy_above_target(g):
        # shallower than any box-representable level counts as 'above target'
        try:
            return bound_state(p, g, r_max, n_steps).energy - target_e
        except BracketError:
            return -target_e

    hi = g_c * 1.5
    for _ in range(60):
        if energy_above_target(hi) < 0.0:
            break
        hi *= 1.5
    else:
        raise BracketError("could not bracket the requested two-body energy")
    from scipy.optimize import brentq

    g = brentq(energy_above_target, g_c * (1.0 + 1e-12), hi, xtol=1e-13, rtol=1e-12)
    return g, bound_state(p, g, r_max, n_steps)


# ---------------------------------------------------------------------------
# universal two-body profile


def asymptotic_profile_overlap(sol: RadialSolution) -> float:
    """Overlap <f_k, psi> with f_k = sqrt(k) exp(-k r) / (sqrt(2 pi) r)."""
    k = sol.k
    integrand = np.exp(-k * sol.r_grid) * sol.u_values
    return 2.0 * math.sqrt(2.0 * math.pi * k) * float(np.trapezoid(integrand, sol.r_grid))


def theorem1_distance(sol: RadialSolution) -> float:
    """Phase-minimized norm distance of a bound state to the universal profile.

    For real normalized data this is sqrt(2 - 2 |<f_k, psi>|); invariant
    under global phase or sign of psi by construction.
    """
    if not sol.energy < 0:
        raise ValueError("theorem1_distance needs a negative-energy state")
    ov = abs(asymptotic_profile_overlap(sol)) / sol.norm
    return math.sqrt(max(2.0 - 2.0 * ov, 0.0))


# ---------------------------------------------------------------------------
# W kernel identity


def w_kernel_check(y_mag: float, tol: float = 1e-10) -> tuple[float, float]:
    """Numeric vs closed form of W(y) = int e^{-|z|} e^{-|z-y|} / (|z||z-y|) d3z.

    The azimuthal angle integrates out; the polar angle is traded for the
    distance w = |z - y| (the confocal-ellipse move), leaving a smooth 2D
    quadrature over (z, w).  Closed form: 2 pi exp(-|y|).
    """
    if y_mag < 0:
        raise ValueError("y_mag must be nonnegative")
    closed = 2.0 * math.pi * math.exp(-y_mag)
    upper = 60.0 + 2.0 * y_mag

    if y_mag == 0.0:
        # w == z exactly; the double integral collapses to one dimension
        val, err = integrate.quad(lambda z: 2.0 * math.exp(-2.0 * z), 0.0, upper,
                                  epsabs=tol, epsrel=tol)
        numeric = 2.0 * math.pi * val
    else:
        def inner(z):
            v, _ = integrate.quad(math.exp, -(z + y_mag), -abs(z - y_mag),
                                  epsabs=tol, epsrel=tol)
            return math.exp(-z) * v

        val, err = integrate.quad(inner, 0.0, upper, epsabs=tol, epsrel=tol,
                                  points=[y_mag], limit=200)
        numeric = 2.0 * math.pi * val / y_mag
    if err > 1e-6:
        raise RuntimeError(f"W(y) quadrature did not converge (err={err:.3e})")
    return numeric, closed


# ---------------------------------------------------------------------------
# Birman-Schwinger cross-check (test oracle; O(N^3) dense route)


def birman_schwinger_critical_coupling(p: PairPotential, n_grid: int = 1600) -> float:
    """Critical depth from the dense zero-energy Birman-Schwinger operator.

    Discretizes sqrt(|v|) (-laplacian)^{-1} sqrt(|v|) in the s-wave sector,
    where the reduced kernel is sqrt(shape(r)) min(r, r') sqrt(shape(r')),
    and returns 1 / (largest eigenvalue).  A trapezoid grid with the kink
    on the nodes is second order; one Richardson step removes the h^2 term.
    """

    def largest_eig(n):
        if p.family == "gaussian":
            r_max = 8.5 * p.range
        else:
            r_max = 45.0 * p.range
        r = np.linspace(0.0, r_max, n + 1)[1:]
        h = r[1] - r[0]
        w = np.full(n, h)
        w[-1] = 0.5 * h
        sq = np.sqrt(p.shape(r) * w)
        kern = np.minimum.outer(r, r)
        a = sq[:, None] * kern * sq[None, :]
        v0 = np.ones(n)
        val = eigsh(a, k=1, which="LA", v0=v0, tol=1e-12)[0][0]
        return val

    mu_h = largest_eig(n_grid)
    mu_2h = largest_eig(n_grid // 2)
    mu = (4.0 * mu_h - mu_2h) / 3.0
    return 1.0 / mu
