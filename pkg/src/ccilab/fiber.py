"""
Fiber reduction of strip networks that are invariant under vertical translations.

Heights are regrouped into cells, cell k = (2k-1, 2k), so the strip unitary acts
by convolution with a compactly supported kernel,

    (U psi)(m) = sum_n V(n) psi(m - n),     V(n) = U(cell n, cell 0).

Inside a cell the fiber index is 2 (j - lo) + s with s = 0 for height 2k-1 and
s = 1 for height 2k.  Two transforms are exposed:

    fourier(y) = sum_n e^{+iny} V(n)   (winding of det is the index, shift -> +1)
    symbol(y)  = sum_n e^{-iny} V(n)   = fourier(-y)

The same fiber is also produced in the quantum-walk picture (coins and a
five-diagonal matrix); the two pictures are related by a diagonal gauge.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import (
    BandMatchingError,
    InvarianceError,
    NotUnitaryError,
    ScatterParameterError,
    TranslationInvarianceError,
    WindingError,
)
from .lattice import ScatterMatrix, SField, StripSpec
from .operators import NetworkWindow, StateVector, Window, site_image

logger = logging.getLogger(__name__)

INVARIANCE_TOL = 1e-12
SYMBOL_TOL = 1e-10
MODULUS_TOL = 1e-9
DEGENERACY_TOL = 1e-8
COVERAGE_TOL = 1e-12
STEP_TOL = 1e-9
MAX_REFINEMENTS = 4
TWO_PI = 2.0 * math.pi


# ---------------------- kernels ----------------------


@dataclass(eq=False)
class FiberKernel:
    taps: dict[int, np.ndarray]

    def __post_init__(self) -> None:
        if not self.taps:
            raise ValueError("a kernel needs at least one tap")
        taps = {int(k): np.atleast_2d(np.asarray(v, dtype=complex)) for k, v in self.taps.items()}
        dims = {v.shape for v in taps.values()}
        if len(dims) != 1 or next(iter(dims))[0] != next(iter(dims))[1]:
            raise ValueError(f"taps must be square matrices of one size, got shapes {sorted(dims)}")
        self.taps = dict(sorted(taps.items()))

    @classmethod
    def shift(cls, d: int = 1, step: int = 1) -> "FiberKernel":
        return cls({step: np.eye(d)})

    @property
    def dim(self) -> int:
        return next(iter(self.taps.values())).shape[0]

    @property
    def support(self) -> tuple[int, int]:
        return min(self.taps), max(self.taps)

    @property
    def radius(self) -> int:
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    def fourier(self, y: float) -> np.ndarray:
        return sum(np.exp(1j * n * y) * v for n, v in self.taps.items())

    def symbol(self, y: float) -> np.ndarray:
        return self.fourier(-y)

    def hs_weights(self) -> dict[int, float]:
        return {n: float(np.sum(np.abs(v) ** 2)) for n, v in self.taps.items()}

    def compose(self, other: "FiberKernel") -> "FiberKernel":
        """Kernel of (self o other): convolution of the taps."""
        out: dict[int, np.ndarray] = {}
        for a, va in self.taps.items():
            for b, vb in other.taps.items():
                out[a + b] = out.get(a + b, 0) + va @ vb
        return FiberKernel(out)

    def power(self, n: int) -> "FiberKernel":
        if n < 0:
            raise ValueError("negative kernel powers are not supported")
        result = FiberKernel({0: np.eye(self.dim)})
        for _ in range(n):
            result = result.compose(self)
        return result

    def conjugate(self, w: np.ndarray) -> "FiberKernel":
        w = np.asarray(w, dtype=complex)
        return FiberKernel({n: w @ v @ w.conj().T for n, v in self.taps.items()})

    def convolve(self, cells: np.ndarray, offset: int = 0) -> tuple[np.ndarray, int]:
        """Apply to cell amplitudes of shape (ncells, d) starting at cell ``offset``."""
        cells = np.asarray(cells, dtype=complex)
        lo, hi = self.support
        out = np.zeros((cells.shape[0] + hi - lo, self.dim), dtype=complex)
        for n, v in self.taps.items():
            out[n - lo : n - lo + cells.shape[0]] += cells @ v.T
        return out, offset + lo

    def certify_unitary(self, samples: int = 32, tol: float = SYMBOL_TOL) -> float:
        eye = np.eye(self.dim)
        defect = 0.0
        for y in np.linspace(0.0, TWO_PI, samples, endpoint=False):
            m = self.fourier(y)
            defect = max(defect, float(np.max(np.abs(m.conj().T @ m - eye))))
        if defect > tol:
            raise NotUnitaryError(f"kernel symbol is not unitary (defect {defect:.3g})")
        return defect


# ---------------------- translation invariance ----------------------


def require_translation_invariance(field: SField, columns: tuple[int, int], rows: int = 4) -> None:
    """Raise unless S_{j,2k} = S_{j,0} for j in ``columns`` and |2k| <= 2 * rows."""
    if field.vertical_period == 2:
        return
    for j in range(columns[0], columns[1] + 1):
        base = field.scatter(j, 0)
        for k2 in range(-2 * rows, 2 * rows + 1, 2):
            if base.distance(field.scatter(j, k2)) > INVARIANCE_TOL:
                raise TranslationInvarianceError(
                    f"S_{{{j},{k2}}} differs from S_{{{j},0}}; the field is not vertically translation invariant"
                )


@dataclass(frozen=True)
class RowRule:
    """Site rule repeating one row of another field."""

    field: SField
    row: int = 0

    def __call__(self, j: int, k2: int) -> ScatterMatrix:
        return self.field.scatter(j, self.row)


# ---------------------- strip kernel and windings ----------------------


def _cell(h: int) -> tuple[int, int]:
    k = (h + 1) // 2
    return k, h - 2 * k + 1


def fiber_kernel(field: SField, strip: StripSpec) -> FiberKernel:
    require_translation_invariance(field, (strip.lo - 1, strip.hi))
    window = Window.strip(strip, -3, 2)
    dense = NetworkWindow(field, window).dense()
    d = 2 * strip.width
    taps: dict[int, np.ndarray] = {}
    for j in strip.columns:
        for h in (-1, 0):
            _, s_in = _cell(h)
            col = dense.matrix[:, dense.index(j, h)]
            for row in np.nonzero(np.abs(col) > 0.0)[0]:
                site = dense.basis[row]
                k_out, s_out = _cell(site.k)
                tap = taps.setdefault(k_out, np.zeros((d, d), dtype=complex))
                tap[2 * (site.j - strip.lo) + s_out, 2 * (j - strip.lo) + s_in] = col[row]
    kernel = FiberKernel(taps)
    logger.debug("fiber kernel of %s: taps %s, d=%d", strip, sorted(taps), d)
    return kernel


def winding_exact(kernel: FiberKernel) -> int:
    """sum_n n ||V(n)||_HS^2, rounded."""
    w = sum(n * hs for n, hs in kernel.hs_weights().items())
    rounded = round(w)
    residual = abs(w - rounded)
    if residual > 1e-6:
        raise WindingError(f"winding sum {w:.9g} is not an integer; is the symbol unitary?")
    if residual > 1e-9:
        logger.warning("winding sum %.12g rounds with residual %.3g", w, residual)
    return int(rounded)


def _wrapped(d: np.ndarray) -> np.ndarray:
    return (d + math.pi) % TWO_PI - math.pi


def winding_phase(kernel: FiberKernel, n_y: int = 64) -> int:
    """Unwrapped phase of det fourier(y) over [0, 2 pi], refining large jumps."""
    if n_y < 64:
        raise ValueError(f"n_y must be at least 64, got {n_y}")
    ys = np.linspace(0.0, TWO_PI, n_y + 1)
    phases = np.array([np.angle(np.linalg.det(kernel.fourier(y))) for y in ys])
    for _ in range(MAX_REFINEMENTS + 1):
        jumps = _wrapped(np.diff(phases))
        bad = np.nonzero(np.abs(jumps) >= math.pi / 2)[0]
        if bad.size == 0:
            break
        logger.debug("refining %d intervals of the det phase", bad.size)
        new_y = np.concatenate([np.linspace(ys[i], ys[i + 1], 5)[1:-1] for i in bad])
        new_p = np.array([np.angle(np.linalg.det(kernel.fourier(y))) for y in new_y])
        order = np.argsort(np.concatenate([ys, new_y]), kind="stable")
        ys = np.concatenate([ys, new_y])[order]
        phases = np.concatenate([phases, new_p])[order]
    else:
        raise WindingError(f"det phase still jumps by >= pi/2 after {MAX_REFINEMENTS} refinements")
    total = float(np.sum(_wrapped(np.diff(phases)))) / TWO_PI
    rounded = round(total)
    if abs(total - rounded) > 1e-6:
        raise WindingError(f"unwrapped det phase {total:.9g} is not an integer")
    return int(rounded)


# ---------------------- quantum-walk picture ----------------------


def _qw_index(n: int, sign: int, lo: int) -> int:
    # (n, +) comes from column n, (n, -) from column n + 1
    return 2 * (n - lo) if sign > 0 else 2 * (n + 1 - lo) + 1


@dataclass(eq=False)
class QWFiber:
    """U_QW(y) = Shift C(y) on (j, +) for j in [lo, hi] and (j, -) for j in [lo-1, hi-1]."""

    y: float
    strip: StripSpec
    coins: dict[int, np.ndarray]

    def matrix(self) -> np.ndarray:
        lo, hi = self.strip.lo, self.strip.hi
        d = 2 * self.strip.width
        m = np.zeros((d, d), dtype=complex)
        members = [(n, +1) for n in range(lo, hi + 1)] + [(n, -1) for n in range(lo - 1, hi)]
        for n, sign in members:
            coin = self.coins[n]
            col = 0 if sign > 0 else 1
            # C|sigma> = C[0, col]|+> + C[1, col]|->, then + moves right and - moves left
            for target, amp in (((n + 1, +1), coin[0, col]), ((n - 1, -1), coin[1, col])):
                if target in members:
                    m[_qw_index(*target, lo), _qw_index(n, sign, lo)] = amp
                elif abs(amp) > INVARIANCE_TOL:
                    raise InvarianceError(f"walk leaves the strip from {(n, sign)} with weight {abs(amp):.3g}")
        return m


def coin_matrix(s: ScatterMatrix, column: int, y: float) -> np.ndarray:
    q, r, t = s.q, s.r, s.t
    if column % 2 == 0:
        return q * np.array([[-t, np.conj(r) * np.exp(1j * y)], [r * np.exp(-1j * y), np.conj(t)]])
    return q * np.array([[r, np.conj(t)], [-t, np.conj(r)]])


def qw_coins(field: SField, strip: StripSpec) -> Callable[[float], QWFiber]:
    """y -> QWFiber with coins C_{2j}(y), C_{2j+1}(y) built from the row-0 matrices."""
    require_translation_invariance(field, (strip.lo - 1, strip.hi))
    scatter = {n: field.scatter(n, 0) for n in range(strip.lo - 1, strip.hi + 1)}

    def at(y: float) -> QWFiber:
        return QWFiber(y, strip, {n: coin_matrix(s, n, y) for n, s in scatter.items()})

    return at


def fiber_transform(psi: StateVector, y: float) -> np.ndarray:
    """
    Partial Fourier map onto the walk basis of the window's columns:
    |j,2k> -> e^{iky}|j,+>,  |j,2k+1> -> e^{iky}|j-1,->.
    """
    w = psi.window
    out = np.zeros(2 * w.nj, dtype=complex)
    for k_idx in range(w.nk):
        h = w.k0 + k_idx
        phase = np.exp(1j * (h // 2) * y)
        out[2 * np.arange(w.nj) + h % 2] += phase * psi.amps[k_idx]
    return out


@dataclass(eq=False)
class MQWMatrix:
    y: float
    n0: int
    matrix: np.ndarray

    def bandwidth(self) -> int:
        rows, cols = np.nonzero(np.abs(self.matrix) > 0.0)
        return int(np.max(np.abs(rows - cols), initial=0))

    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvals(self.matrix)

    def det(self) -> complex:
        return complex(np.linalg.det(self.matrix))


def _mqw_site(n: int) -> tuple[int, int]:
    return (n // 2, 0) if n % 2 == 0 else ((n + 1) // 2, 1)


def _mqw_index(j: int, h: int) -> tuple[int, int]:
    if h % 2 == 0:
        return 2 * j, h // 2
    return 2 * j - 1, h // 2


def mqw_matrix(field: SField, y: float, strip: StripSpec) -> MQWMatrix:
    """Five-diagonal walk matrix on n in [2 lo - 1, 2 hi]; entry = coefficient * e^{iy(k_out - k_in)}."""
    require_translation_invariance(field, (strip.lo - 1, strip.hi))
    n0, n1 = 2 * strip.lo - 1, 2 * strip.hi
    size = n1 - n0 + 1
    m = np.zeros((size, size), dtype=complex)
    for n_in in range(n0, n1 + 1):
        j, h = _mqw_site(n_in)
        _, k_in = _mqw_index(j, h)
        for site, coef in site_image(field, j, h):
            if coef == 0:
                continue
            n_out, k_out = _mqw_index(site.j, site.k)
            if not n0 <= n_out <= n1:
                raise InvarianceError(f"walk leaves the strip at n={n_out} with weight {abs(coef):.3g}")
            m[n_out - n0, n_in - n0] = coef * np.exp(1j * y * (k_out - k_in))
    return MQWMatrix(y, n0, m)


# ---------------------- gauge normalization ----------------------


@dataclass
class GaugeRecord:
    """D = e^{i sigma_j} on even rows of column j (1 on odd rows); U' = D U D^*."""

    strip: StripSpec
    sigma: dict[int, float] = dc_field(default_factory=dict)

    def site_phase(self, j: int, k: int) -> complex:
        if k % 2:
            return 1.0 + 0j
        return complex(np.exp(1j * self.sigma.get(j, 0.0)))

    def mqw_diagonal(self) -> np.ndarray:
        n0, n1 = 2 * self.strip.lo - 1, 2 * self.strip.hi
        return np.array([self.site_phase(*_mqw_site(n)) for n in range(n0, n1 + 1)])

    def is_identity(self, tol: float = 1e-12) -> bool:
        return all(abs(_wrapped(np.array(s))) <= tol for s in self.sigma.values())


def gauge_normalize(field: SField, strip: StripSpec) -> tuple[SField, GaugeRecord]:
    """
    Diagonal conjugation making t_{2j} = i|t_{2j}| and r_{2j+1} = |r_{2j+1}| on the strip.

    The returned field has period 2 and carries the new matrices as overrides.
    """
    require_translation_invariance(field, (strip.lo - 1, strip.hi))
    record = GaugeRecord(strip, {strip.lo: 0.0})
    sigma = 0.0
    for j in range(strip.lo, strip.hi):
        s = field.scatter(j, 0)
        if j % 2 == 0:
            sigma += 0.0 if s.is_diagonal else 2.0 * (math.pi / 2 - float(np.angle(s.t)))
        else:
            sigma += 0.0 if s.is_off_diagonal else -2.0 * float(np.angle(s.r))
        record.sigma[j + 1] = sigma

    overrides: dict[tuple[int, int], ScatterMatrix] = {}
    for j in range(strip.lo, strip.hi + 1):
        s = field.scatter(j, 0)
        if j % 2 == 0:
            a, b, x, y = (j, 0), (j + 1, -1), (j, -1), (j + 1, 0)
        else:
            a, b, x, y = (j, 0), (j + 1, 1), (j + 1, 0), (j, 1)
        left = np.diag([np.conj(record.site_phase(*a)), np.conj(record.site_phase(*b))])
        right = np.diag([record.site_phase(*x), record.site_phase(*y)])
        m = left @ s.matrix @ right
        if j % 2 == 0 and abs(m[0, 1]) > INVARIANCE_TOL:
            q = 1j * m[0, 1] / abs(m[0, 1])
        elif j % 2 == 1 and abs(m[0, 0]) > INVARIANCE_TOL:
            q = m[0, 0] / abs(m[0, 0])
        else:
            q = None
        try:
            overrides[(j, 0)] = ScatterMatrix.from_matrix(m, q)
        except ScatterParameterError as exc:
            raise ScatterParameterError(f"gauge transform at column {j} failed: {exc}") from exc
    normalized = SField(field.n_left, field.n_right, RowRule(field), overrides, vertical_period=2)
    logger.debug("gauge phases %s", record.sigma)
    return normalized, record


# ---------------------- bands ----------------------


@dataclass
class CoverageReport:
    """
    Union of the arcs swept by continuous eigenphase branches (a finite-grid surrogate).

    ``covered`` needs both a zero gap and branch steps inside the Lipschitz
    envelope: between neighbouring grid points each eigenphase may move by at
    most 2 arcsin(||dV||/2), so a larger matched step means the grid is too
    coarse to trust the branches.
    """

    covered: bool
    max_gap: float
    arcs: list[tuple[float, float]]
    max_step: float
    lipschitz_bound: float
    steps_within_bound: bool
    method: str = "grid-arc-union surrogate"


@dataclass(eq=False)
class BandStructure:
    ys: np.ndarray
    branches: np.ndarray  # (n_points, d) unwrapped eigenphases, column b = branch b
    coverage: CoverageReport
    degeneracies: list[tuple[float, float]] = dc_field(default_factory=list)

    @property
    def eigenphases(self) -> np.ndarray:
        return np.mod(self.branches, TWO_PI)

    @property
    def spectral_flow(self) -> int:
        return int(round(float(np.sum(self.branches[-1] - self.branches[0])) / TWO_PI))

    def rows(self) -> list[tuple[float, int, float]]:
        phases = self.eigenphases
        return [(float(y), b, float(phases[i, b])) for i, y in enumerate(self.ys) for b in range(phases.shape[1])]


def _eigen_at(kernel: FiberKernel, y: float) -> np.ndarray:
    lam = scipy.linalg.eigvals(kernel.fourier(y))
    defect = float(np.max(np.abs(np.abs(lam) - 1.0)))
    if defect > MODULUS_TOL:
        raise NotUnitaryError(f"eigenvalue off the unit circle by {defect:.3g} at y={y:.6g}")
    return lam / np.abs(lam)


def _match(prev: np.ndarray, nxt: np.ndarray) -> tuple[np.ndarray, float]:
    cost = np.abs(np.angle(nxt[None, :] * np.conj(prev[:, None])))
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return nxt[perm], float(cost[rows, cols].max())


def _arc_union(arcs: list[tuple[float, float]]) -> float:
    """Largest uncovered gap on the circle."""
    pieces: list[tuple[float, float]] = []
    for a, b in arcs:
        if b - a >= TWO_PI:
            return 0.0
        a0 = a % TWO_PI
        b0 = a0 + (b - a)
        if b0 > TWO_PI:
            pieces += [(a0, TWO_PI), (0.0, b0 - TWO_PI)]
        else:
            pieces.append((a0, b0))
    pieces.sort()
    gap = 0.0
    reach = pieces[0][1]
    for a, b in pieces[1:]:
        gap = max(gap, a - reach)
        reach = max(reach, b)
    return max(gap, pieces[0][0] + TWO_PI - reach)


def band_structure(kernel: FiberKernel, n_y: int = 128) -> BandStructure:
    if n_y < 128:
        raise ValueError(f"n_y must be at least 128, got {n_y}")
    grid = np.linspace(0.0, TWO_PI, n_y + 1)
    ys = [float(grid[0])]
    current = _eigen_at(kernel, grid[0])
    branches = [np.angle(current)]
    degeneracies: list[tuple[float, float]] = []
    max_step = 0.0
    steps: list[float] = []

    def record_degeneracy(y: float, lam: np.ndarray) -> None:
        gaps = np.abs(np.angle(lam[:, None] * np.conj(lam[None, :])))
        np.fill_diagonal(gaps, np.inf)
        if gaps.size and gaps.min() < DEGENERACY_TOL:
            degeneracies.append((y, float(np.angle(lam[np.unravel_index(np.argmin(gaps), gaps.shape)[0]]))))

    record_degeneracy(ys[0], current)

    def advance(y0: float, y1: float, depth: int) -> None:
        nonlocal current, max_step
        lam = _eigen_at(kernel, y1)
        matched, step = _match(current, lam)
        if step >= math.pi / 4:
            if depth >= MAX_REFINEMENTS:
                raise BandMatchingError(f"eigenphase step {step:.3g} >= pi/4 near y={y0:.6g} after refinement")
            mid = 0.5 * (y0 + y1)
            advance(y0, mid, depth + 1)
            advance(mid, y1, depth + 1)
            return
        branches.append(branches[-1] + np.angle(matched * np.conj(current)))
        ys.append(y1)
        max_step = max(max_step, step)
        steps.append(step)
        current = matched
        record_degeneracy(y1, matched)

    for y0, y1 in zip(grid[:-1], grid[1:]):
        advance(float(y0), float(y1), 0)

    unwrapped = np.array(branches)
    arcs = [(float(unwrapped[:, b].min()), float(unwrapped[:, b].max())) for b in range(unwrapped.shape[1])]
    gap = _arc_union(arcs)
    ys_arr = np.array(ys)
    jumps = np.array(
        [float(scipy.linalg.norm(kernel.fourier(b) - kernel.fourier(a), 2)) for a, b in zip(ys_arr[:-1], ys_arr[1:])]
    )
    envelope = 2.0 * np.arcsin(np.minimum(1.0, 0.5 * jumps))
    within = bool(np.all(np.array(steps) <= envelope + STEP_TOL))
    if not within:
        logger.warning("eigenphase steps exceed the Lipschitz envelope; coverage not certified")
    coverage = CoverageReport(
        gap <= COVERAGE_TOL and within, gap, arcs, max_step, float(jumps.max(initial=0.0)), within
    )
    logger.debug("bands: %d points, max gap %.3g, %d degeneracies", len(ys), gap, len(degeneracies))
    return BandStructure(ys_arr, unwrapped, coverage, degeneracies)


def eigenvalue_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Largest |a_i - b_pi(i)| under the optimal matching of two eigenvalue multisets."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"eigenvalue sets differ in size: {a.shape} vs {b.shape}")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max(initial=0.0))
