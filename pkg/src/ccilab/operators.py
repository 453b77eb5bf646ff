"""
Matrix-free network unitary on finite windows of Z^2.

Node (J, R), R even, scatters its input pair (a, b) into an output pair (x, y):

    J even:  a = (J, R)   b = (J+1, R-1)   x = (J, R-1)   y = (J+1, R)
    J odd:   a = (J, R)   b = (J+1, R+1)   x = (J+1, R)   y = (J, R+1)

    (psi_x, psi_y) = S^T (psi_a, psi_b)

so that (U|2j,2k>, U|2j+1,2k-1>) = S_{2j,2k}(|2j,2k-1>, |2j+1,2k>) and the odd-row
analogue.  Every site is the input of exactly one node and the output of exactly one
node, which makes U a product of disjoint 2x2 blocks.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Literal, Mapping, Optional

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment

from .errors import (
    BoundaryConditionError,
    ChiralityError,
    EigenResidualError,
    InvarianceError,
    NotUnitaryError,
    PeriodError,
    TruncationLeakError,
    WindowSiteError,
)
from .lattice import LatticeSite, SField, StripSpec, ceil_even

logger = logging.getLogger(__name__)

Closure = Literal["open", "closed", "torus"]
Chirality = Literal["left", "right"]

COEF_TOL = 1e-12
LEAK_RTOL = 1e-14
UNITARY_TOL = 1e-10
RESIDUAL_TOL = 1e-8


# ---------------------- windows & states ----------------------


@dataclass(frozen=True)
class Window:
    """Rectangle [j0, j1] x [k0, k1] (inclusive) with a closure per axis."""

    j0: int
    j1: int
    k0: int
    k1: int
    closure_j: Closure = "open"
    closure_k: Closure = "open"

    def __post_init__(self) -> None:
        if self.j1 < self.j0 or self.k1 < self.k0:
            raise ValueError(f"empty window {self.bounds}")
        if self.closure_j == "torus":
            raise ValueError("horizontal torus closure is not supported")
        if self.closure_k == "torus" and self.nk % 2:
            raise PeriodError(f"torus height {self.nk} must be even")

    @classmethod
    def strip(cls, strip: StripSpec, k0: int, k1: int, closure_k: Closure = "open") -> "Window":
        return cls(strip.lo, strip.hi, k0, k1, "closed", closure_k)

    @property
    def bounds(self) -> tuple[int, int, int, int]:
        return self.j0, self.j1, self.k0, self.k1

    @property
    def nj(self) -> int:
        return self.j1 - self.j0 + 1

    @property
    def nk(self) -> int:
        return self.k1 - self.k0 + 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.nk, self.nj

    @property
    def size(self) -> int:
        return self.nj * self.nk

    def contains(self, j: int, k: int) -> bool:
        return self.j0 <= j <= self.j1 and self.k0 <= k <= self.k1

    def index(self, j: int, k: int) -> int:
        if not self.contains(j, k):
            raise WindowSiteError(f"site {(j, k)} outside window {self.bounds}", site=(j, k))
        return (k - self.k0) * self.nj + (j - self.j0)

    def sites(self) -> list[LatticeSite]:
        return [LatticeSite(j, k) for k in range(self.k0, self.k1 + 1) for j in range(self.j0, self.j1 + 1)]

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays (J, K) of shape (nk, nj)."""
        return np.meshgrid(np.arange(self.j0, self.j1 + 1), np.arange(self.k0, self.k1 + 1))

    def ring_mask(self) -> np.ndarray:
        """Sites on the open edges, where a state must vanish before U is applied."""
        mask = np.zeros(self.shape, dtype=bool)
        if self.closure_k == "open":
            mask[0, :] = mask[-1, :] = True
        if self.closure_j == "open":
            mask[:, 0] = mask[:, -1] = True
        return mask


@dataclass(frozen=True, eq=False)
class StateVector:
    window: Window
    amps: np.ndarray = dc_field(repr=False)

    def __post_init__(self) -> None:
        amps = np.array(self.amps, dtype=complex)
        if amps.shape != self.window.shape:
            raise ValueError(f"amplitudes of shape {amps.shape} do not fit window shape {self.window.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    # -- constructors

    @classmethod
    def zeros(cls, window: Window) -> "StateVector":
        return cls(window, np.zeros(window.shape, dtype=complex))

    @classmethod
    def from_sites(cls, window: Window, amplitudes: Mapping[tuple[int, int], complex]) -> "StateVector":
        amps = np.zeros(window.shape, dtype=complex)
        for (j, k), value in amplitudes.items():
            if not window.contains(j, k):
                raise WindowSiteError(f"site {(j, k)} outside window {window.bounds}", site=(j, k))
            amps[k - window.k0, j - window.j0] += value
        return cls(window, amps)

    @classmethod
    def basis(cls, window: Window, j: int, k: int) -> "StateVector":
        return cls.from_sites(window, {(j, k): 1.0})

    @classmethod
    def from_vector(cls, window: Window, vector: np.ndarray) -> "StateVector":
        return cls(window, np.asarray(vector, dtype=complex).reshape(window.shape))

    @classmethod
    def random(cls, window: Window, rng: np.random.Generator, normalize: bool = True) -> "StateVector":
        amps = rng.standard_normal(window.shape) + 1j * rng.standard_normal(window.shape)
        amps[window.ring_mask()] = 0.0
        if normalize:
            amps /= np.linalg.norm(amps)
        return cls(window, amps)

    # -- algebra

    @property
    def vector(self) -> np.ndarray:
        return self.amps.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def vdot(self, other: "StateVector") -> complex:
        self._same_window(other)
        return complex(np.vdot(self.amps, other.amps))

    def amplitude(self, j: int, k: int) -> complex:
        return complex(self.amps[k - self.window.k0, j - self.window.j0]) if self.window.contains(j, k) else 0j

    def __add__(self, other: "StateVector") -> "StateVector":
        self._same_window(other)
        return StateVector(self.window, self.amps + other.amps)

    def __sub__(self, other: "StateVector") -> "StateVector":
        self._same_window(other)
        return StateVector(self.window, self.amps - other.amps)

    def __mul__(self, scalar: complex) -> "StateVector":
        return StateVector(self.window, self.amps * scalar)

    __rmul__ = __mul__

    def _same_window(self, other: "StateVector") -> None:
        if other.window.bounds != self.window.bounds:
            raise ValueError(f"windows differ: {self.window.bounds} vs {other.window.bounds}")

    def support_box(self, tol: float = 1e-14) -> Optional[tuple[int, int, int, int]]:
        """(jmin, jmax, kmin, kmax) of the amplitudes above ``tol``; None for the zero state."""
        ks, js = np.nonzero(np.abs(self.amps) > tol)
        if ks.size == 0:
            return None
        w = self.window
        return int(js.min()) + w.j0, int(js.max()) + w.j0, int(ks.min()) + w.k0, int(ks.max()) + w.k0

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "window": list(self.window.bounds),
            "closure": [self.window.closure_j, self.window.closure_k],
            "amps": [[float(z.real), float(z.imag)] for z in self.vector],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "StateVector":
        j0, j1, k0, k1 = (int(v) for v in data["window"])
        closure_j, closure_k = data.get("closure", ["open", "open"])
        window = Window(j0, j1, k0, k1, closure_j, closure_k)
        amps = np.array([complex(re, im) for re, im in data["amps"]], dtype=complex)
        if amps.size != window.size:
            raise ValueError(f"expected {window.size} amplitudes, got {amps.size}")
        return cls.from_vector(window, amps)


# ---------------------- single-site images ----------------------


def input_node(j: int, k: int) -> tuple[int, int, int]:
    """Node (J, R) fed by site (j, k) and the input slot (0 = a, 1 = b)."""
    if k % 2 == 0:
        return j, k, 0
    if j % 2:
        return j - 1, k + 1, 1
    return j - 1, k - 1, 1


def node_outputs(J: int, R: int) -> tuple[LatticeSite, LatticeSite]:
    if J % 2 == 0:
        return LatticeSite(J, R - 1), LatticeSite(J + 1, R)
    return LatticeSite(J + 1, R), LatticeSite(J, R + 1)


def site_image(field: SField, j: int, k: int) -> list[tuple[LatticeSite, complex]]:
    """U|j,k> as a list of (site, coefficient), always of length two."""
    J, R, slot = input_node(j, k)
    s = field.scatter(J, R).matrix
    x, y = node_outputs(J, R)
    return [(x, complex(s[slot, 0])), (y, complex(s[slot, 1]))]


# ---------------------- the engine ----------------------


class NetworkWindow:
    """
    U(field) restricted to a window, as gather/scatter index arrays over the nodes.

    "closed" axes are verified invariant at construction; "open" axes require the
    state to vanish on the edge ring at every application; "torus" wraps rows.
    """

    def __init__(self, field: SField, window: Window):
        self.field = field
        self.window = window
        w = window
        if w.closure_k == "torus":
            period = field.vertical_period
            if w.nk < 4:
                raise PeriodError(f"torus height {w.nk} must be at least 4")
            if period and w.nk % period:
                raise PeriodError(f"torus height {w.nk} is not a multiple of the vertical period {period}")
            rows = np.arange(w.k0 + w.k0 % 2, w.k0 + w.nk, 2)
        else:
            rows = np.arange(ceil_even(w.k0 - 1), w.k1 + 2, 2)
        cols = np.arange(w.j0 - 1, w.j1 + 1)
        J, R = (a.reshape(-1) for a in np.meshgrid(cols, rows))
        even = J % 2 == 0

        self.nodes = np.stack([J, R], axis=1)
        self.coords = {
            "a": (J, R),
            "b": (J + 1, np.where(even, R - 1, R + 1)),
            "x": (np.where(even, J, J + 1), np.where(even, R - 1, R)),
            "y": (np.where(even, J + 1, J), np.where(even, R, R + 1)),
        }
        self.s = np.array([field.scatter(int(j), int(r)).matrix for j, r in zip(J, R)], dtype=complex)
        self.s = self.s.reshape(-1, 2, 2)
        self.idx = {name: self._flat_index(*xy) for name, xy in self.coords.items()}
        self._check_closed_axes()
        logger.debug("materialized %d nodes on window %s", len(J), w.bounds)

    # -- indexing

    def _wrap(self, k: np.ndarray) -> np.ndarray:
        w = self.window
        return w.k0 + (k - w.k0) % w.nk if w.closure_k == "torus" else k

    def _inside(self, j: np.ndarray, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        w = self.window
        k = self._wrap(k)
        return (j >= w.j0) & (j <= w.j1), (k >= w.k0) & (k <= w.k1)

    def _flat_index(self, j: np.ndarray, k: np.ndarray) -> np.ndarray:
        w = self.window
        in_j, in_k = self._inside(j, k)
        return np.where(in_j & in_k, (self._wrap(k) - w.k0) * w.nj + (j - w.j0), -1)

    def _check_closed_axes(self) -> None:
        w = self.window
        for slot, src in enumerate("ab"):
            for col, dst in enumerate("xy"):
                coef = np.abs(self.s[:, slot, col])
                sj, sk = self._inside(*self.coords[src])
                dj, dk = self._inside(*self.coords[dst])
                leaks = np.zeros_like(coef, dtype=bool)
                if w.closure_j == "closed":
                    leaks |= (sj != dj) & (sk | dk)
                if w.closure_k == "closed":
                    leaks |= (sk != dk) & (sj | dj)
                bad = np.nonzero(leaks & (coef > COEF_TOL))[0]
                if bad.size:
                    J, R = self.nodes[bad[0]]
                    raise InvarianceError(
                        f"window {w.bounds} is not invariant: node ({J}, {R}) couples "
                        f"{src} to {dst} across a closed edge with weight {coef[bad[0]]:.3g}"
                    )

    # -- application

    def _check_leak(self, psi: StateVector) -> None:
        if psi.window.bounds != self.window.bounds:
            raise ValueError(f"state window {psi.window.bounds} differs from {self.window.bounds}")
        ring = np.abs(psi.amps[self.window.ring_mask()])
        if ring.size and ring.max() > LEAK_RTOL * max(psi.norm(), 1.0):
            raise TruncationLeakError(
                f"state reaches the open edge of window {self.window.bounds} "
                f"(|amp| = {ring.max():.3g}); enlarge the window"
            )

    @staticmethod
    def _gather(vec: np.ndarray, index: np.ndarray) -> np.ndarray:
        return np.where(index >= 0, vec[np.maximum(index, 0)], 0.0)

    @staticmethod
    def _scatter(out: np.ndarray, index: np.ndarray, values: np.ndarray) -> None:
        mask = index >= 0
        out[index[mask]] = values[mask]

    def apply(self, psi: StateVector) -> StateVector:
        self._check_leak(psi)
        vec = psi.vector
        a = self._gather(vec, self.idx["a"])
        b = self._gather(vec, self.idx["b"])
        out = np.zeros_like(vec)
        s = self.s
        self._scatter(out, self.idx["x"], s[:, 0, 0] * a + s[:, 1, 0] * b)
        self._scatter(out, self.idx["y"], s[:, 0, 1] * a + s[:, 1, 1] * b)
        return StateVector.from_vector(self.window, out)

    def apply_adjoint(self, psi: StateVector) -> StateVector:
        self._check_leak(psi)
        vec = psi.vector
        x = self._gather(vec, self.idx["x"])
        y = self._gather(vec, self.idx["y"])
        out = np.zeros_like(vec)
        sc = self.s.conj()
        self._scatter(out, self.idx["a"], sc[:, 0, 0] * x + sc[:, 0, 1] * y)
        self._scatter(out, self.idx["b"], sc[:, 1, 0] * x + sc[:, 1, 1] * y)
        return StateVector.from_vector(self.window, out)

    def dense(self) -> "DenseUnitary":
        n = self.window.size
        m = np.zeros((n, n), dtype=complex)
        for slot, src in enumerate("ab"):
            for col, dst in enumerate("xy"):
                rows, cols = self.idx[dst], self.idx[src]
                mask = (rows >= 0) & (cols >= 0)
                m[rows[mask], cols[mask]] = self.s[mask, slot, col]
        return DenseUnitary(self.window.sites(), m)


def apply_u(field: SField, psi: StateVector) -> StateVector:
    return NetworkWindow(field, psi.window).apply(psi)


def apply_u_adjoint(field: SField, psi: StateVector) -> StateVector:
    return NetworkWindow(field, psi.window).apply_adjoint(psi)


def parity_apply(psi: StateVector) -> StateVector:
    J, K = psi.window.coordinates()
    return StateVector(psi.window, psi.amps * np.where((J + K) % 2, -1.0, 1.0))


# ---------------------- dense truncations ----------------------


@dataclass(eq=False)
class DenseUnitary:
    basis: list[LatticeSite]
    matrix: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.basis)
        if self.matrix.shape != (n, n):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match basis of size {n}")
        self._index = {site: i for i, site in enumerate(self.basis)}

    def index(self, j: int, k: int) -> int:
        return self._index[LatticeSite(j, k)]

    def unitarity_defect(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(len(self.basis))), initial=0.0))

    def certify(self, tol: float = UNITARY_TOL) -> None:
        defect = self.unitarity_defect()
        if defect > tol:
            raise NotUnitaryError(f"||M*M - I||_max = {defect:.3g} exceeds {tol:g}")

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the certified unitary, radially projected onto S^1."""
        self.certify()
        lam = scipy.linalg.eigvals(self.matrix)
        return lam / np.abs(lam)

    def eigenvectors(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Orthonormal eigenbasis from the complex Schur form (diagonal for normal M).

        Raises EigenResidualError if some column is not an eigenvector to 1e-8.
        """
        self.certify()
        tri, z = scipy.linalg.schur(self.matrix, output="complex")
        lam = np.diag(tri).copy()
        residual = float(np.max(np.linalg.norm(self.matrix @ z - z * lam, axis=0), initial=0.0))
        if residual > RESIDUAL_TOL:
            raise EigenResidualError(f"eigenvector residual {residual:.3g} exceeds {RESIDUAL_TOL:g}")
        return lam / np.abs(lam), z

    def parity_pairing_error(self) -> float:
        """Largest |lambda_i + lambda_pi(i)| under the optimal pairing lambda <-> -lambda."""
        lam = self.eigenvalues()
        cost = np.abs(lam[:, None] + lam[None, :])
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].max(initial=0.0))


def strip_dense(
    field: SField, strip: StripSpec, heights: tuple[int, int], closure: Closure = "torus"
) -> DenseUnitary:
    k_min, k_max = heights
    if closure == "torus" and ((k_max - k_min + 1) % 2 or k_max - k_min + 1 < 4):
        raise PeriodError(f"torus closure needs an even height count >= 4, got {k_max - k_min + 1}")
    return NetworkWindow(field, Window.strip(strip, k_min, k_max, closure)).dense()


def window_dense(field: SField, window: Window) -> DenseUnitary:
    return NetworkWindow(field, window).dense()


def operator_difference_norm(a: SField, b: SField, window: Window) -> float:
    """||U(a) - U(b)|| in operator norm on a window invariant under both."""
    ma = window_dense(a, window).matrix
    mb = window_dense(b, window).matrix
    return float(scipy.linalg.norm(ma - mb, 2))


# ---------------------- plaquettes ----------------------


def _plaquette_cycle(chirality: Chirality, j: int, k: int):
    """Basis of the 4-cycle and, for each step, the node whose entry carries it."""
    if chirality == "right":
        basis = [(2 * j, 2 * k), (2 * j, 2 * k - 1), (2 * j - 1, 2 * k - 1), (2 * j - 1, 2 * k)]
        nodes = [(2 * j, 2 * k), (2 * j - 1, 2 * k - 2), (2 * j - 2, 2 * k), (2 * j - 1, 2 * k)]
    else:
        basis = [(2 * j, 2 * k), (2 * j + 1, 2 * k), (2 * j + 1, 2 * k + 1), (2 * j, 2 * k + 1)]
        nodes = [(2 * j, 2 * k), (2 * j + 1, 2 * k), (2 * j, 2 * k + 2), (2 * j - 1, 2 * k)]
    return basis, nodes


def plaquette_block(field: SField, j: int, k: int, chirality: Chirality) -> tuple[np.ndarray, np.ndarray]:
    """
    The 4x4 block of U on a plaquette and its spectrum e^alpha {1, i, -1, -i}.

    right: span{|2j,2k>, |2j,2k-1>, |2j-1,2k-1>, |2j-1,2k>}, needs diagonal matrices
    left:  span{|2j,2k>, |2j+1,2k>, |2j+1,2k+1>, |2j,2k+1>}, needs off-diagonal ones
    e^{4 alpha} is the product of the four cycle weights.
    """
    if chirality not in ("left", "right"):
        raise ValueError(f"chirality must be 'left' or 'right', got {chirality!r}")
    basis, nodes = _plaquette_cycle(chirality, j, k)
    for J, R in nodes:
        s = field.scatter(J, R)
        ok = s.is_diagonal if chirality == "right" else s.is_off_diagonal
        if not ok:
            raise ChiralityError(f"node ({J}, {R}) breaks the {chirality} plaquette at ({j}, {k})", site=(J, R))

    block = np.zeros((4, 4), dtype=complex)
    for step, (j_in, k_in) in enumerate(basis):
        target = dict(site_image(field, j_in, k_in))
        block[(step + 1) % 4, step] = target[LatticeSite(*basis[(step + 1) % 4])]

    product = np.prod([block[(i + 1) % 4, i] for i in range(4)])
    root = abs(product) ** 0.25 * np.exp(1j * np.angle(product) / 4)
    eigenvalues = root * np.array([1, 1j, -1, -1j])
    return block, eigenvalues


def plaquette_state(field: SField, window: Window, j: int, k: int, chirality: Chirality, branch: int = 0) -> StateVector:
    """Normalized eigenvector of a plaquette block, embedded in ``window``."""
    block, eigenvalues = plaquette_block(field, j, k, chirality)
    basis, _ = _plaquette_cycle(chirality, j, k)
    lam = eigenvalues[branch % 4]
    # U e_s = w_s e_{s+1}: v_{s+1} = w_s v_s / lam
    v = np.zeros(4, dtype=complex)
    v[0] = 1.0
    for s in range(3):
        v[s + 1] = block[s + 1, s] * v[s] / lam
    v /= np.linalg.norm(v)
    return StateVector.from_sites(window, {site: amp for site, amp in zip(basis, v)})


# ---------------------- chiral boundary conditions ----------------------


@dataclass(frozen=True)
class BoundaryRelation:
    label: str
    source: LatticeSite
    target: LatticeSite
    phase: complex


@dataclass
class BoundaryReport:
    strip: StripSpec
    relations: list[BoundaryRelation]
    max_off_weight: float
    max_phase_defect: float

    @property
    def phases(self) -> list[complex]:
        return [rel.phase for rel in self.relations]


def _expected_boundary_moves(strip: StripSpec, k: int) -> Iterable[tuple[str, tuple[int, int], tuple[int, int]]]:
    lo, hi = strip.lo, strip.hi
    yield "left", (lo, 2 * k + 1), (lo, 2 * k)
    yield "right", (hi, 2 * k), (hi, 2 * k - 1)
    if strip.n_left % 2:
        yield "left-odd-even-row", (lo, 2 * k), (lo + 1, 2 * k)
        yield "left-odd-odd-row", (lo + 1, 2 * k + 1), (lo, 2 * k + 1)
    if strip.n_right % 2:
        yield "right-odd-odd-row", (hi, 2 * k + 1), (hi - 1, 2 * k + 1)
        yield "right-odd-even-row", (hi - 1, 2 * k), (hi, 2 * k)


def boundary_phase_check(field: SField, strip: StripSpec, k_range: tuple[int, int]) -> BoundaryReport:
    """
    Verify the chiral boundary conditions on the strip edges for k in ``k_range``.

    Left edge:  U|lo,2k+1> = p|lo,2k>.  Right edge:  U|hi,2k> = p|hi,2k-1>.
    Odd n_left / n_right add two relations each between the edge and its neighbour.
    """
    relations: list[BoundaryRelation] = []
    max_off = 0.0
    max_defect = 0.0
    for k in range(k_range[0], k_range[1] + 1):
        for label, source, target in _expected_boundary_moves(strip, k):
            image = site_image(field, *source)
            phase = sum((c for site, c in image if site == target), 0j)
            off = math.sqrt(sum(abs(c) ** 2 for site, c in image if site != target))
            if off > COEF_TOL:
                raise BoundaryConditionError(
                    f"{label} relation fails at {source}: weight {off:.3g} leaves the predicted site {target}"
                )
            max_off = max(max_off, off)
            max_defect = max(max_defect, abs(abs(phase) - 1.0))
            relations.append(BoundaryRelation(label, LatticeSite(*source), LatticeSite(*target), phase))
    if max_defect > COEF_TOL:
        raise BoundaryConditionError(f"boundary phase off the unit circle by {max_defect:.3g}")
    return BoundaryReport(strip, relations, max_off, max_defect)
