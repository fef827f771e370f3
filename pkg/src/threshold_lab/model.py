"""Particle masses, Jacobi frames, and pair-potential models.

Everything downstream works in mass-scaled Jacobi coordinates (hbar = 1),
in which the three-body kinetic energy is exactly -laplacian_x - laplacian_y.
This module owns the coordinate bookkeeping: reduced masses, the length
scale factors absorbing the mass rescalings, and the coefficients that
express each physical pair separation through (|x|, |y|, u), u being the
cosine of the angle between x and y.

Pair potentials are purely attractive closed-form wells, stored as a
nonnegative depth with an implicit minus sign: V(r) = -depth * shape(r).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Union

import numpy as np
from scipy import integrate

__all__ = [
    "MassConfig",
    "JacobiFrame",
    "PairPotential",
    "SystemSpec",
    "AdmissibilityReport",
    "build_jacobi_frame",
    "separation_distances",
    "moment_integrals",
    "admissibility_check",
    "pair_potential_in_jacobi",
    "load_system",
    "dump_system",
]

POTENTIAL_FAMILIES = ("gaussian", "exponential", "truncated-yukawa")

# Hard core radius of the truncated Yukawa, in units of the range.
_YUKAWA_CORE = 0.1

# Strict admissibility window for the Hoelder exponent.
DELTA_MAX = 0.125


class MomentDivergenceError(RuntimeError):
    """Raised when a potential moment quadrature fails to converge."""


@dataclass(frozen=True)
class MassConfig:
    """Particle masses, dimensionless (hbar = 1 fixed here)."""

    m1: float
    m2: float
    m3: float

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            if not getattr(self, name) > 0:
                raise ValueError(f"mass {name} must be strictly positive")

    @property
    def total(self) -> float:
        return self.m1 + self.m2 + self.m3


@dataclass(frozen=True)
class JacobiFrame:
    """Derived coordinate and coupling coefficients for a mass configuration.

    sep12, sep13, sep23 are pairs (c_x, c_y) such that the physical pair
    separation satisfies

        |r_i - r_k|^2 = c_x^2 r1^2 + c_y^2 r2^2 + 2 c_x c_y r1 r2 u

    with r1 = |x|, r2 = |y|.  The signed product c_x * c_y carries the
    relative orientation, so distances are genuine vector norms.
    """

    mu12: float
    mu13: float
    mu23: float
    M12: float
    M13: float
    alpha: float        # 1/sqrt(2 mu12): |r2 - r1| = alpha |x|
    alpha_prime: float  # 1/sqrt(2 mu13): |r3 - r1| = alpha_prime |eta|
    sep12: tuple[float, float]
    sep13: tuple[float, float]
    sep23: tuple[float, float]
    # (x, y) = R (eta, zeta) blockwise; R is 2x2 and orthogonal.
    eta_zeta_map: tuple[tuple[float, float], tuple[float, float]]

    def separation_coefficients(self, pair: str) -> tuple[float, float]:
        try:
            return {"12": self.sep12, "13": self.sep13, "23": self.sep23}[pair]
        except KeyError:
            raise ValueError(f"unknown pair {pair!r}, expected '12', '13' or '23'") from None


def build_jacobi_frame(masses: MassConfig) -> JacobiFrame:
    """Populate all reduced masses, scale factors and separation coefficients."""
    m1, m2, m3 = masses.m1, masses.m2, masses.m3
    M = masses.total
    mu12 = m1 * m2 / (m1 + m2)
    mu13 = m1 * m3 / (m1 + m3)
    mu23 = m2 * m3 / (m2 + m3)
    M12 = (m1 + m2) * m3 / M
    M13 = (m1 + m3) * m2 / M

    alpha = 1.0 / math.sqrt(2.0 * mu12)
    alpha_prime = 1.0 / math.sqrt(2.0 * mu13)
    beta = 1.0 / math.sqrt(2.0 * M12)

    # r3 - r1 = (m2/(m1+m2)) alpha x + beta y,  r3 - r2 = -(m1/(m1+m2)) alpha x + beta y
    sep12 = (alpha, 0.0)
    sep13 = (m2 * alpha / (m1 + m2), beta)
    sep23 = (-m1 * alpha / (m1 + m2), beta)

    # x = c eta + s zeta, y = s eta - c zeta; c^2 + s^2 = 1.
    c = math.sqrt(m2 * m3 / ((m1 + m2) * (m1 + m3)))
    s = math.sqrt(m1 * M / ((m1 + m2) * (m1 + m3)))

    return JacobiFrame(
        mu12=mu12, mu13=mu13, mu23=mu23, M12=M12, M13=M13,
        alpha=alpha, alpha_prime=alpha_prime,
        sep12=sep12, sep13=sep13, sep23=sep23,
        eta_zeta_map=((c, s), (s, -c)),
    )


def separation_distances(r1, r2, u, frame: JacobiFrame):
    """Physical separations (d12, d13, d23) at (|x|, |y|, u).

    Accepts scalars or broadcastable arrays; d12 = alpha * r1 regardless
    of r2 and u.
    """
    r1 = np.asarray(r1, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    u = np.asarray(u, dtype=float)
    out = []
    for pair in ("12", "13", "23"):
        cx, cy = frame.separation_coefficients(pair)
        d2 = cx * cx * r1 * r1 + cy * cy * r2 * r2 + 2.0 * cx * cy * r1 * r2 * u
        out.append(np.sqrt(np.maximum(d2, 0.0)))
    return tuple(out)


@dataclass(frozen=True)
class PairPotential:
    """Attractive radial well V(r) = -depth * shape(r / range).

    family is one of 'gaussian', 'exponential', 'truncated-yukawa'.  The
    shape is bounded by a family constant times exp(-r/range), and depth
    is meant to be nonnegative; a negative depth (a potential with a
    positive part) is representable but flagged by admissibility_check
    rather than rejected here.
    """

    family: str
    depth: float
    range: float
    delta: float = 0.1

    def __post_init__(self):
        if self.family not in POTENTIAL_FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if not self.range > 0:
            raise ValueError("potential range must be positive")

    def shape(self, r):
        """Dimensionless shape factor, shape(0..) in (0, O(1)]."""
        t = np.asarray(r, dtype=float) / self.range
        if self.family == "gaussian":
            return np.exp(-t * t)
        if self.family == "exponential":
            return np.exp(-t)
        # truncated Yukawa: 1/r tail cut at a hard core
        tc = np.maximum(t, _YUKAWA_CORE)
        return np.exp(-t) / tc

    def value(self, r):
        """Potential value V(r) = -depth * shape(r)."""
        return -self.depth * self.shape(r)

    @property
    def envelope_constant(self) -> float:
        """C such that shape(r) <= C * exp(-r/range) for all r >= 0."""
        if self.family == "gaussian":
            return math.exp(0.25)
        if self.family == "exponential":
            return 1.0
        return 1.0 / _YUKAWA_CORE

    def with_depth(self, depth: float) -> "PairPotential":
        return PairPotential(self.family, depth, self.range, self.delta)

    def rescaled(self, length_factor: float) -> "PairPotential":
        """Same well expressed in a coordinate stretched by length_factor."""
        return PairPotential(self.family, self.depth, self.range * length_factor, self.delta)


def pair_potential_in_jacobi(spec: "SystemSpec", frame: JacobiFrame, pair: str) -> PairPotential:
    """Pair potential as seen in its own mass-scaled Jacobi coordinate.

    V_ik(r) becomes V_ik(scale * q) with q the Jacobi radial coordinate of
    the pair, so only the range rescales (by 1/scale); the depth is
    untouched.
    """
    try:
        scale = {
            "12": frame.alpha,
            "13": frame.alpha_prime,
            "23": 1.0 / math.sqrt(2.0 * frame.mu23),
        }[pair]
    except KeyError:
        raise ValueError(f"unknown pair {pair!r}, expected '12', '13' or '23'") from None
    source = {"12": spec.v12, "13": spec.v13, "23": spec.v23}[pair]
    return source.rescaled(1.0 / scale)


def _radial_moment(p: PairPotential, weight, tol=1e-10) -> float:
    """4 pi * integral of weight(r) * r^2 dr over (0, inf) with convergence check."""
    upper = 60.0 * p.range if p.family != "gaussian" else 12.0 * p.range

    def f(r):
        return weight(r) * r * r

    val, err = integrate.quad(f, 0.0, upper, epsabs=tol, epsrel=tol, limit=200)
    tail, terr = integrate.quad(f, upper, np.inf, epsabs=tol, epsrel=tol, limit=200)
    total = 4.0 * math.pi * (val + tail)
    if err + terr > max(1e-7, 1e-6 * abs(total)):
        raise MomentDivergenceError(
            f"moment quadrature did not converge for {p.family} potential "
            f"(error estimate {err + terr:.3e})"
        )
    return total


def moment_integrals(p: PairPotential) -> tuple[float, float]:
    """Finiteness moments (gamma, gamma0) of the potential.

    gamma is the two-body moment max(int |x|^2 (1+|x|^d) V^2, int (1+|x|^d) V^2);
    gamma0 the three-body one max(int V^2, int |V| (1+|x|)^{2d}), both over
    3D measure.  Raises MomentDivergenceError if the quadrature cannot
    certify convergence.
    """
    d = p.delta
    v = p.value
    g1 = _radial_moment(p, lambda r: r * r * (1.0 + r**d) * v(r) ** 2)
    g2 = _radial_moment(p, lambda r: (1.0 + r**d) * v(r) ** 2)
    g3 = _radial_moment(p, lambda r: v(r) ** 2)
    g4 = _radial_moment(p, lambda r: np.abs(v(r)) * (1.0 + r) ** (2 * d))
    return max(g1, g2), max(g3, g4)


def _envelope_ok(p: PairPotential, n_samples: int = 400) -> bool:
    r = np.linspace(0.0, 40.0 * p.range, n_samples)
    bound = p.envelope_constant * np.exp(-r / p.range)
    return bool(np.all(p.shape(r) <= bound * (1.0 + 1e-12) + 1e-300))


@dataclass(frozen=True)
class SystemSpec:
    """Three-body system: masses, three pair wells, and the coupling lam.

    lam multiplies v13 and v23; v12 enters with unit coupling and is meant
    to be held at its critical depth before any three-body run.
    """

    masses: MassConfig
    v12: PairPotential
    v13: PairPotential
    v23: PairPotential
    lam: float = 1.0

    def to_dict(self) -> dict:
        return {
            "masses": asdict(self.masses),
            "potentials": {
                "v12": _potential_dict(self.v12),
                "v13": _potential_dict(self.v13),
                "v23": _potential_dict(self.v23),
            },
            "lambda": self.lam,
            "delta": self.v12.delta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SystemSpec":
        try:
            masses = MassConfig(**data["masses"])
            delta = float(data.get("delta", 0.1))
            pots = {}
            for key in ("v12", "v13", "v23"):
                entry = data["potentials"][key]
                pots[key] = PairPotential(
                    family=entry["family"],
                    depth=float(entry["depth"]),
                    range=float(entry["range"]),
                    delta=delta,
                )
            lam = float(data["lambda"])
        except KeyError as exc:
            raise ValueError(f"system config missing field {exc}") from exc
        return cls(masses=masses, lam=lam, **pots)


def _potential_dict(p: PairPotential) -> dict:
    return {"family": p.family, "depth": p.depth, "range": p.range}


def dump_system(spec: SystemSpec, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")


def load_system(path: Union[str, Path]) -> SystemSpec:
    return SystemSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AdmissibilityReport:
    """Outcome of the admissibility screen; failures are carried, not thrown."""

    moments_finite: bool
    sign_ok: bool
    envelope_ok: bool
    delta_ok: bool
    v12_critical: bool
    v13_subcritical: bool
    v23_subcritical: bool
    gamma: float
    gamma0: float
    v12_critical_depth: float
    notes: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return (
            self.moments_finite
            and self.sign_ok
            and self.envelope_ok
            and self.delta_ok
            and self.v12_critical
            and self.v13_subcritical
            and self.v23_subcritical
        )

    def summary_lines(self) -> list[str]:
        flag = lambda b: "pass" if b else "FAIL"
        return [
            f"moments finite        : {flag(self.moments_finite)} (gamma={self.gamma:.6g}, gamma0={self.gamma0:.6g})",
            f"v12 sign (attractive) : {flag(self.sign_ok)}",
            f"exponential envelope  : {flag(self.envelope_ok)}",
            f"delta in (0, 1/8)     : {flag(self.delta_ok)}",
            f"v12 at critical depth : {flag(self.v12_critical)} (critical={self.v12_critical_depth:.8g})",
            f"pair 13 subcritical   : {flag(self.v13_subcritical)}",
            f"pair 23 subcritical   : {flag(self.v23_subcritical)}",
        ] + [f"note: {n}" for n in self.notes]


def admissibility_check(spec: SystemSpec, critical_rtol: float = 1e-3) -> AdmissibilityReport:
    """Screen a system against the hypotheses the solvers assume.

    Checks the moment finiteness and sign/envelope/delta conditions on the
    potentials, that v12 sits at its critical depth, and (delegating to the
    two-body solver) that pairs {1,3} and {2,3} stay subcritical at the
    spec's coupling.
    """
    from . import twobody  # deferred: twobody imports this module

    notes = []
    moments_finite = True
    gamma = gamma0 = math.nan
    try:
        gamma, gamma0 = moment_integrals(spec.v12)
        for p in (spec.v13, spec.v23):
            g, g0 = moment_integrals(p)
            gamma = max(gamma, g)
            gamma0 = max(gamma0, g0)
    except MomentDivergenceError as exc:
        moments_finite = False
        notes.append(str(exc))

    sign_ok = all(p.depth >= 0 for p in (spec.v12, spec.v13, spec.v23))
    envelope_ok = all(_envelope_ok(p) for p in (spec.v12, spec.v13, spec.v23))

    deltas = {spec.v12.delta, spec.v13.delta, spec.v23.delta}
    delta_ok = all(0.0 < d < DELTA_MAX for d in deltas)
    notes.append(
        "delta is screened against the strict three-body window (0, 1/8); "
        "the two-body moments alone would admit any delta in (0, 1)"
    )

    frame = build_jacobi_frame(spec.masses)
    v12_critical = False
    critical_depth = math.nan
    if sign_ok and spec.v12.depth > 0:
        crit = twobody.find_critical_coupling(pair_potential_in_jacobi(spec, frame, "12").with_depth(1.0))
        critical_depth = crit.g_critical
        v12_critical = abs(spec.v12.depth - critical_depth) <= critical_rtol * critical_depth

    v13_ok = spec.v13.depth >= 0 and twobody.subcriticality_check(
        pair_potential_in_jacobi(spec, frame, "13"), spec.lam
    )
    v23_ok = spec.v23.depth >= 0 and twobody.subcriticality_check(
        pair_potential_in_jacobi(spec, frame, "23"), spec.lam
    )

    return AdmissibilityReport(
        moments_finite=moments_finite,
        sign_ok=sign_ok,
        envelope_ok=envelope_ok,
        delta_ok=delta_ok,
        v12_critical=v12_critical,
        v13_subcritical=v13_ok,
        v23_subcritical=v23_ok,
        gamma=gamma,
        gamma0=gamma0,
        v12_critical_depth=critical_depth,
        notes=tuple(notes),
    )
