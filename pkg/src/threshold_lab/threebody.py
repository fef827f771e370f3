"""Zero-angular-momentum three-body solver on a graded (r1, r2, u) grid.

The wavefunction of an L = 0 state depends only on r1 = |x|, r2 = |y| and
u = cos(angle(x, y)).  On the reduced function Phi = r1 r2 psi the kinetic
energy acts as

    -d^2/dr1^2 - d^2/dr2^2 - (1/r1^2 + 1/r2^2) Lam_u,

with Lam_u = d/du (1-u^2) d/du applied spectrally through a Legendre
transform on Gauss-Legendre nodes.  Radial derivatives use second-order
central differences on a geometrically graded grid; with the cell-width
inner product the whole discrete operator is exactly self-adjoint, so the
ground state comes out of a preconditioned LOBPCG iteration, matrix-free.

Pair potentials are evaluated pointwise through the separation formulas of
the Jacobi frame; the coupling enters linearly, so a lambda scan reuses the
cached potential grids.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.sparse.linalg import LinearOperator, lobpcg

from .model import SystemSpec, build_jacobi_frame, separation_distances, pair_potential_in_jacobi
from . import twobody

__all__ = [
    "Grid3",
    "WaveFunction3",
    "ThresholdEntry",
    "ThresholdSequence",
    "build_grid",
    "stretch_for_core",
    "legendre_angular_matrix",
    "potential_on_grid",
    "apply_hamiltonian",
    "kinetic_apply",
    "solve_ground",
    "ground_state",
    "tune_lambda",
    "generate_threshold_sequence",
    "verify_R3",
    "UnboundStateError",
    "ConvergenceError",
]

DEFAULT_BOX_FACTOR = 12.0
DEFAULT_RESIDUAL_RTOL = 1e-7
DEFAULT_MAXITER = 2000


class UnboundStateError(RuntimeError):
    """Lowest eigenvalue came out nonnegative: no bound state at this coupling."""

    def __init__(self, energy: float):
        super().__init__(f"unbound at this lambda (lowest eigenvalue {energy:+.3e})")
        self.energy = energy


class ConvergenceError(RuntimeError):
    """Eigensolver failed to reach the requested residual.

    Carries the best available estimates so searches can still use the
    (upper-bound) Rayleigh quotient when the sign of the answer is clear.
    """

    def __init__(self, msg: str, energy: float = math.nan, residual: float = math.nan,
                 iterations: int = 0):
        super().__init__(msg)
        self.energy = energy
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Grid3:
    """Tensor grid: graded radial nodes times Gauss-Legendre angle nodes.

    r1/r2 hold the interior nodes (Dirichlet values at 0 and r_max are not
    stored); h1/h2 the cell widths including the two boundary cells, and
    w1/w2 the per-node cell-average quadrature weights that make the radial
    stencil self-adjoint.
    """

    r1: np.ndarray
    r2: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    u: np.ndarray
    wu: np.ndarray
    r_max: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.r1), len(self.r2), len(self.u)

    @property
    def size(self) -> int:
        n1, n2, nu = self.shape
        return n1 * n2 * nu

    def weight3(self) -> np.ndarray:
        return self.w1[:, None, None] * self.w2[None, :, None] * self.wu[None, None, :]


def _graded_spacings(r_max: float, n: int, stretch: float) -> np.ndarray:
    if stretch <= 0:
        raise ValueError("stretch must be positive")
    q = stretch ** (1.0 / n)
    h = q ** np.arange(n + 1)
    return h * (r_max / h.sum())


def stretch_for_core(r_max: float, n: int, core: float) -> float:
    """Stretch factor placing about half the nodes inside radius core."""
    if not 0 < core < r_max:
        raise ValueError("core radius must lie inside the box")
    if core >= 0.5 * r_max:
        return 1.0

    def median_gap(q):
        h = _graded_spacings(r_max, n, q ** n)
        return float(np.cumsum(h)[n // 2 - 1]) - core

    if median_gap(1.0 + 1e-12) <= 0.0:
        return 1.0
    q = brentq(median_gap, 1.0 + 1e-12, 1.5)
    return q ** n


def build_grid(r_max: float, n1: int, n2: int, nu: int, stretch: float = 1.0) -> Grid3:
    """Graded radial nodes concentrated near the origin, GL angle nodes."""
    if r_max <= 0:
        raise ValueError("r_max must be positive")
    if min(n1, n2, nu) < 8:
        raise ValueError("counts must be at least 8")
    h1 = _graded_spacings(r_max, n1, stretch)
    h2 = _graded_spacings(r_max, n2, stretch)
    r1 = np.cumsum(h1)[:-1]
    r2 = np.cumsum(h2)[:-1]
    u, wu = np.polynomial.legendre.leggauss(nu)
    return Grid3(
        r1=r1, r2=r2, h1=h1, h2=h2,
        w1=0.5 * (h1[:-1] + h1[1:]), w2=0.5 * (h2[:-1] + h2[1:]),
        u=u, wu=wu, r_max=float(r_max),
    )


def legendre_angular_matrix(u: np.ndarray, wu: np.ndarray) -> np.ndarray:
    """Symmetrized -Lam_u as a dense (nu, nu) matrix: U diag(l(l+1)) U^T.

    U is the orthogonal discrete Legendre transform on the GL nodes
    (orthogonality is exact there), so the matrix has the exact spectrum
    l(l+1), l = 0..nu-1, and annihilates angle-independent input.
    """
    nu = len(u)
    ell = np.arange(nu)
    vander = np.polynomial.legendre.legvander(u, nu - 1)
    ortho = vander * np.sqrt(wu)[:, None] * np.sqrt((2.0 * ell + 1.0) / 2.0)[None, :]
    return (ortho * (ell * (ell + 1.0))) @ ortho.T


def _radial_stencil(h: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized -d^2/dr^2 with Dirichlet ends: diagonal and off-diagonal."""
    inv = 1.0 / h
    diag = (inv[:-1] + inv[1:]) / w
    off = -inv[1:-1] / np.sqrt(w[:-1] * w[1:])
    return diag, off


class HamiltonianApply:
    """Matrix-free symmetrized Hamiltonian for a fixed grid and potential grid."""

    def __init__(self, grid: Grid3, potential: np.ndarray):
        n1, n2, nu = grid.shape
        if potential.shape != grid.shape:
            raise ValueError("potential grid does not match the coordinate grid")
        self.grid = grid
        d1, self.e1 = _radial_stencil(grid.h1, grid.w1)
        d2, self.e2 = _radial_stencil(grid.h2, grid.w2)
        self.ang = legendre_angular_matrix(grid.u, grid.wu)
        inv_r2 = (1.0 / grid.r1**2)[:, None] + (1.0 / grid.r2**2)[None, :]
        self.inv_r2 = inv_r2
        self.local = potential + d1[:, None, None] + d2[None, :, None]
        self.diagonal = (self.local + inv_r2[:, :, None] * np.diag(self.ang)[None, None, :]).ravel()

    def __call__(self, phi_hat: np.ndarray) -> np.ndarray:
        n1, n2, nu = self.grid.shape
        phi = phi_hat.reshape(n1, n2, nu)
        out = phi @ self.ang
        out *= self.inv_r2[:, :, None]
        out += self.local * phi
        out[1:] += self.e1[:, None, None] * phi[:-1]
        out[:-1] += self.e1[:, None, None] * phi[1:]
        out[:, 1:] += self.e2[None, :, None] * phi[:, :-1]
        out[:, :-1] += self.e2[None, :, None] * phi[:, 1:]
        return out.reshape(phi_hat.shape)


def potential_on_grid(spec: SystemSpec, lam: float, grid: Grid3) -> np.ndarray:
    """Pointwise V12 + lam (V13 + V23) through the separation formulas."""
    parts = potential_parts_on_grid(spec, grid)
    return parts[0] + lam * parts[1]


def potential_parts_on_grid(spec: SystemSpec, grid: Grid3) -> tuple[np.ndarray, np.ndarray]:
    """(V12 grid, V13 + V23 grid); the lambda-independent split for scans."""
    frame = build_jacobi_frame(spec.masses)
    r1 = grid.r1[:, None, None]
    r2 = grid.r2[None, :, None]
    u = grid.u[None, None, :]
    d12, d13, d23 = separation_distances(r1, r2, u, frame)
    v12 = spec.v12.value(d12)
    v12 = np.broadcast_to(v12, grid.shape).copy()
    return v12, spec.v13.value(d13) + spec.v23.value(d23)


@dataclass(frozen=True)
class WaveFunction3:
    """Grid samples of the reduced function Phi = r1 r2 psi with norm metadata."""

    grid: Grid3
    values: np.ndarray
    energy: Optional[float]
    norm: float

    def psi(self) -> np.ndarray:
        """Samples of psi itself."""
        return self.values / (self.grid.r1[:, None, None] * self.grid.r2[None, :, None])


def wavefunction_norm(grid: Grid3, phi: np.ndarray) -> float:
    """Full 6D norm of psi: sqrt(8 pi^2 sum Phi^2 w1 w2 wu)."""
    return math.sqrt(8.0 * math.pi**2 * float(np.sum(phi * phi * grid.weight3())))


def grid_inner(grid: Grid3, phi_a: np.ndarray, phi_b: np.ndarray) -> float:
    return 8.0 * math.pi**2 * float(np.sum(phi_a * phi_b * grid.weight3()))


def _wrap(grid: Grid3, phi: np.ndarray, energy: Optional[float]) -> WaveFunction3:
    nrm = wavefunction_norm(grid, phi)
    phi = phi / nrm
    # nodeless ground state: fix the overall sign to nonnegative
    if float(np.sum(phi * grid.weight3())) < 0.0:
        phi = -phi
    return WaveFunction3(grid=grid, values=phi, energy=energy, norm=1.0)


def apply_hamiltonian(
    phi: WaveFunction3,
    spec: SystemSpec,
    lam: float,
    potential: Optional[np.ndarray] = None,
) -> WaveFunction3:
    """H(lam) applied to a grid wavefunction, returned unnormalized.

    potential overrides the spec-derived pointwise potential grid (used by
    the analytic oracles); the returned WaveFunction3 carries the raw HPhi
    samples with norm metadata and no energy.
    """
    grid = phi.grid
    if potential is None:
        potential = potential_on_grid(spec, lam, grid)
    scale = np.sqrt(grid.weight3())
    op = HamiltonianApply(grid, potential)
    out = op(phi.values * scale) / scale
    return WaveFunction3(grid=grid, values=out, energy=None, norm=wavefunction_norm(grid, out))


def kinetic_apply(grid: Grid3, phi: np.ndarray) -> np.ndarray:
    """Kinetic part alone on unsymmetrized Phi samples (test hook)."""
    scale = np.sqrt(grid.weight3())
    op = HamiltonianApply(grid, np.zeros(grid.shape))
    return op(phi * scale) / scale


@dataclass
class SolveInfo:
    iterations: int
    residual: float
    converged: bool


def solve_ground(
    grid: Grid3,
    potential: np.ndarray,
    rtol: float = DEFAULT_RESIDUAL_RTOL,
    maxiter: int = DEFAULT_MAXITER,
    x0: Optional[np.ndarray] = None,
    seed: int = 0,
) -> tuple[float, np.ndarray, SolveInfo]:
    """Lowest eigenpair of the discretized Hamiltonian, matrix-free LOBPCG.

    Convergence target is ||H phi - E phi|| <= rtol * max(|E|, box scale),
    enforced explicitly on top of scipy's internal criterion by restarting
    stalled iterations.  Returns (energy, symmetrized eigenvector, info).
    """
    op = HamiltonianApply(grid, potential)
    n = grid.size
    amat = LinearOperator((n, n), matvec=op, dtype=float)

    floor = max(1e-3, 1e-9 * float(op.diagonal.max()))
    pdiag = 1.0 / np.maximum(op.diagonal, floor)
    precond = LinearOperator(
        (n, n), matvec=lambda x: (pdiag * x.ravel()).reshape(x.shape), dtype=float
    )

    if x0 is None:
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(n)
    else:
        x = np.array(x0, dtype=float).ravel()
    x /= np.linalg.norm(x)

    box_scale = 2.0 * (math.pi / grid.r_max) ** 2
    total_iters = 0
    energy = math.inf
    best_res = math.inf
    stalls = 0
    while total_iters < maxiter:
        chunk = min(250, maxiter - total_iters)
        tol_abs = rtol * max(abs(energy) if np.isfinite(energy) else box_scale, box_scale)
        with np.errstate(all="ignore"), warnings.catch_warnings():
            warnings.simplefilter("ignore")  # lobpcg chunks are allowed to exit early
            vals, vecs = lobpcg(
                amat, x.reshape(n, 1), M=precond, tol=tol_abs,
                maxiter=chunk, largest=False, verbosityLevel=0,
            )
        total_iters += chunk
        energy = float(vals[0])
        x = vecs[:, 0]
        x /= np.linalg.norm(x)
        res = float(np.linalg.norm(op(x) - energy * x))
        tol_abs = rtol * max(abs(energy), box_scale)
        if res < tol_abs:
            return energy, x, SolveInfo(total_iters, res, True)
        if res > 0.9 * best_res:
            stalls += 1
            if stalls >= 4:
                break
        else:
            stalls = 0
            best_res = res
    raise ConvergenceError(
        f"eigensolver stalled at residual {res:.3e} (target {tol_abs:.3e}) "
        f"after {total_iters} iterations"
    )


def ground_state(
    spec: SystemSpec,
    lam: float,
    grid: Grid3,
    rtol: float = DEFAULT_RESIDUAL_RTOL,
    maxiter: int = DEFAULT_MAXITER,
    x0: Optional[np.ndarray] = None,
    seed: int = 0,
) -> WaveFunction3:
    """Normalized, sign-fixed ground state of H(lam) on the grid.

    Raises UnboundStateError when the lowest eigenvalue is nonnegative and
    ConvergenceError when the iteration stalls.
    """
    energy, x, _info = solve_ground(grid, potential_on_grid(spec, lam, grid),
                                    rtol=rtol, maxiter=maxiter, x0=x0, seed=seed)
    if energy >= 0.0:
        raise UnboundStateError(energy)
    phi = x.reshape(grid.shape) / np.sqrt(grid.weight3())
    return _wrap(grid, phi, energy)


def verify_R3(spec: SystemSpec, lam: float) -> bool:
    """Subcriticality of pairs {1,3} and {2,3} at this coupling."""
    frame = build_jacobi_frame(spec.masses)
    return twobody.subcriticality_check(
        pair_potential_in_jacobi(spec, frame, "13"), lam
    ) and twobody.subcriticality_check(
        pair_potential_in_jacobi(spec, frame, "23"), lam
    )


def lambda_ceiling(spec: SystemSpec, margin: float = twobody.SUBCRITICAL_MARGIN) -> float:
    """Largest coupling keeping both attached pairs subcritical (with margin)."""
    frame = build_jacobi_frame(spec.masses)
    caps = []
    for pair in ("13", "23"):
        p = pair_potential_in_jacobi(spec, frame, pair)
        caps.append(twobody.critical_depth(p) * (1.0 - margin) / p.depth)
    return min(caps) * (1.0 - 1e-12)


class _GroundCache:
    """lambda -> ground solve memo with warm starts on one fixed grid."""

    def __init__(self, grid: Grid3, v12: np.ndarray, vattr: np.ndarray, seed: int):
        self.grid = grid
        self.v12 = v12
        self.vattr = vattr
        self.seed = seed
        self.x_warm: Optional[np.ndarray] = None
        self.iterations = 0

    def energy(self, lam: float, rtol: float) -> tuple[float, Optional[np.ndarray]]:
        energy, x, info = solve_ground(
            self.grid, self.v12 + lam * self.vattr,
            rtol=rtol, x0=self.x_warm, seed=self.seed,
        )
        self.iterations += info.iterations
        self.x_warm = x
        return energy, x


def tune_lambda(
    spec: SystemSpec,
    target_e: float,
    grid: Grid3,
    e_rtol: float = 0.05,
    lam_hi: Optional[float] = None,
    seed: int = 0,
    coarse_rtol: float = 1e-5,
) -> tuple[float, WaveFunction3]:
    """Coupling lambda with ground energy within e_rtol of target_e.

    Bisection (with a secant proposal once the bracket has two bound
    evaluations) on the monotone map lambda -> E(lambda); intermediate
    solves run at a coarse residual and only the accepted state is polished
    to the production residual.  Raises BracketError when the target is
    unreachable under the subcriticality ceiling, reporting the admissible
    interval.
    """
    if not target_e < 0:
        raise ValueError("target energy must be negative")
    v12, vattr = potential_parts_on_grid(spec, grid)
    cache = _GroundCache(grid, v12, vattr, seed)

    ceiling = lambda_ceiling(spec)
    hi = min(lam_hi, ceiling) if lam_hi is not None else ceiling
    e_hi, _ = cache.energy(hi, coarse_rtol)
    if e_hi > target_e:
        raise twobody.BracketError(
            f"target energy {target_e} unreachable: admissible lambda in (0, {ceiling:.6g}] "
            f"only reaches E = {e_hi:.6g}"
        )

    lo, e_lo = 0.0, None  # unbound side
    lam, energy = hi, e_hi
    for _ in range(200):
        if abs(energy - target_e) <= e_rtol * abs(target_e):
            break
        if energy < target_e:
            hi, e_hi = lam, energy
        else:
            lo, e_lo = lam, energy
        if e_lo is not None and e_hi is not None and e_hi != e_lo:
            cand = lo + (target_e - e_lo) * (hi - lo) / (e_hi - e_lo)
            width = hi - lo
            lam = min(max(cand, lo + 0.1 * width), hi - 0.1 * width)
        else:
            lam = 0.5 * (lo + hi)
        energy, _ = cache.energy(lam, coarse_rtol)
    else:
        raise ConvergenceError("lambda bisection did not meet the energy tolerance")

    energy, x = cache.energy(lam, DEFAULT_RESIDUAL_RTOL)
    phi = x.reshape(grid.shape) / np.sqrt(grid.weight3())
    wf = _wrap(grid, phi, energy)
    return lam, wf


@dataclass(frozen=True)
class ThresholdEntry:
    lam: float
    energy: float
    wavefunction: WaveFunction3
    diagnostics: dict

    @property
    def k(self) -> float:
        return math.sqrt(-self.energy)


@dataclass(frozen=True)
class ThresholdSequence:
    entries: tuple[ThresholdEntry, ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def boundary_mass(wf: WaveFunction3, fraction: float = 0.1) -> float:
    """Probability mass in the outer band max(r1, r2) > (1 - fraction) r_max."""
    grid = wf.grid
    edge = (1.0 - fraction) * grid.r_max
    mask = (np.maximum.outer(grid.r1, grid.r2) > edge)[:, :, None]
    w = grid.weight3()
    return 8.0 * math.pi**2 * float(np.sum(wf.values * wf.values * w * mask))


def generate_threshold_sequence(
    spec: SystemSpec,
    e_targets,
    n1: int = 256,
    n2: int = 256,
    nu: int = 16,
    box_factor: float = DEFAULT_BOX_FACTOR,
    e_rtol: float = 0.05,
    seed: int = 0,
    progress: Optional[Callable[[str], None]] = None,
) -> ThresholdSequence:
    """Tune lambda along decreasing-magnitude energy targets.

    Each target gets its own box r_max = box_factor / sqrt(|E|) and a fresh
    graded grid with half the radial nodes inside five potential ranges.
    Tuning errors abort the run but the partial sequence is preserved on
    the raised exception (attribute 'partial').
    """
    targets = [float(e) for e in e_targets]
    if any(e >= 0 for e in targets):
        raise ValueError("targets must be negative")
    if any(abs(b) >= abs(a) for a, b in zip(targets, targets[1:])):
        raise ValueError("target magnitudes must decrease")

    core = 5.0 * max(spec.v12.range, spec.v13.range, spec.v23.range)
    entries = []
    lam_prev = None
    for j, target in enumerate(targets):
        r_max = box_factor / math.sqrt(-target)
        grid = build_grid(r_max, n1, n2, nu, stretch=stretch_for_core(r_max, n1, core))
        if progress:
            progress(f"target {j}: E={target:g}, r_max={r_max:.1f}")
        try:
            lam, wf = tune_lambda(spec, target, grid, e_rtol=e_rtol,
                                  lam_hi=lam_prev, seed=seed)
        except (twobody.BracketError, ConvergenceError) as exc:
            exc.partial = ThresholdSequence(tuple(entries))
            raise
        diag = {
            "boundary_mass": boundary_mass(wf),
            "r3_ok": verify_R3(spec, lam),
            "target": target,
        }
        entries.append(ThresholdEntry(lam=lam, energy=wf.energy, wavefunction=wf, diagnostics=diag))
        lam_prev = lam
        if progress:
            progress(f"  tuned lambda={lam:.8f} E={wf.energy:.6g} boundary={diag['boundary_mass']:.2e}")
    return ThresholdSequence(tuple(entries))
