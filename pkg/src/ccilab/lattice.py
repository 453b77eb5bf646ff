"""
Scattering matrices, scattering fields and strip geometry.

A scattering field assigns a U(2) matrix S_{j,2k} to every node (j, 2k) of
Z x 2Z.  Matrices are stored in (q, (r, t)) coordinates,

    S(q, r, t) = q * [[r, -t], [conj(t), conj(r)]],   |q| = 1, |r|^2 + |t|^2 = 1.

Fields are infinite; lookups resolve lazily through three layers
(patches -> periodic overrides -> site rule) and are memoized.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Iterator, Mapping, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .errors import ChiralityError, PeriodError, ScatterParameterError

if TYPE_CHECKING:
    from .model import ModelConfig

logger = logging.getLogger(__name__)

UNIT_TOL = 1e-12
INPUT_TOL = 1e-9
_U64 = 2**64


# ---------------------- scattering matrices ----------------------


@dataclass(frozen=True)
class ScatterMatrix:
    q: complex
    r: complex
    t: complex

    def __post_init__(self) -> None:
        if abs(abs(self.q) - 1.0) > UNIT_TOL:
            raise ScatterParameterError(f"|q| = {abs(self.q)!r} is not 1")
        if abs(abs(self.r) ** 2 + abs(self.t) ** 2 - 1.0) > UNIT_TOL:
            raise ScatterParameterError("(r, t) is not a unit vector")

    @property
    def matrix(self) -> np.ndarray:
        q, r, t = self.q, self.r, self.t
        return q * np.array([[r, -t], [np.conj(t), np.conj(r)]], dtype=complex)

    @property
    def is_diagonal(self) -> bool:
        return abs(self.t) <= UNIT_TOL

    @property
    def is_off_diagonal(self) -> bool:
        return abs(self.r) <= UNIT_TOL

    @classmethod
    def from_matrix(cls, m: np.ndarray, q: Optional[complex] = None) -> "ScatterMatrix":
        """
        Recover (q, r, t) from a 2x2 unitary.

        The parametrization is two-to-one ((q, r, t) and (-q, -r, -t) give the
        same matrix); pass ``q`` to pick the branch, otherwise the principal
        square root of det(m) is used.
        """
        m = np.asarray(m, dtype=complex)
        if m.shape != (2, 2):
            raise ScatterParameterError(f"expected a 2x2 matrix, got shape {m.shape}")
        if np.max(np.abs(m.conj().T @ m - np.eye(2))) > INPUT_TOL:
            raise ScatterParameterError("matrix is not unitary")
        det = np.linalg.det(m)
        if q is None:
            q = complex(np.sqrt(det))
        elif abs(q * q - det) > INPUT_TOL:
            raise ScatterParameterError("q does not square to det(S)")
        return build_scatter(q, m[0, 0] / q, -m[0, 1] / q)

    def distance(self, other: "ScatterMatrix") -> float:
        """|q - q'| + ||(r, t) - (r', t')||, the metric on S^1 x S^3."""
        return abs(self.q - other.q) + math.hypot(abs(self.r - other.r), abs(self.t - other.t))


def build_scatter(q: complex, r: complex, t: complex) -> ScatterMatrix:
    q, r, t = complex(q), complex(r), complex(t)
    if abs(abs(q) - 1.0) > INPUT_TOL:
        raise ScatterParameterError(f"|q| must be 1 (got {abs(q):.12g})")
    norm2 = abs(r) ** 2 + abs(t) ** 2
    if abs(norm2 - 1.0) > INPUT_TOL:
        raise ScatterParameterError(f"|r|^2 + |t|^2 must be 1 (got {norm2:.12g})")
    norm = math.sqrt(norm2)
    return ScatterMatrix(q / abs(q), r / norm, t / norm)


IDENTITY = ScatterMatrix(1.0 + 0j, 1.0 + 0j, 0j)


# ---------------------- geometry ----------------------


class LatticeSite(NamedTuple):
    j: int
    k: int


def floor_even(n: int) -> int:
    return 2 * (n // 2)


def ceil_even(n: int) -> int:
    return -2 * ((-n) // 2)


@dataclass(frozen=True)
class StripSpec:
    """Columns lo..hi of the interface between the two chiral phases."""

    n_left: int
    n_right: int

    def __post_init__(self) -> None:
        if self.n_left > self.n_right:
            raise ValueError(f"n_left={self.n_left} exceeds n_right={self.n_right}")

    @property
    def lo(self) -> int:
        return floor_even(self.n_left)

    @property
    def hi(self) -> int:
        return ceil_even(self.n_right)

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1

    @property
    def columns(self) -> range:
        return range(self.lo, self.hi + 1)

    @property
    def p_left(self) -> int:
        return self.lo // 2

    @property
    def p_right(self) -> int:
        return self.hi // 2


# ---------------------- site rules ----------------------


SiteRule = Callable[[int, int], ScatterMatrix]


def _site_counter(j: int, k2: int) -> int:
    # draws advance the low 128 bits; the site lives in the high words
    return ((j % _U64) << 192) | ((k2 % _U64) << 128)


@dataclass(frozen=True)
class HaarDraw:
    """q uniform on S^1, (r, t) uniform on S^3, keyed by (seed, site)."""

    seed: int

    def __call__(self, j: int, k2: int) -> ScatterMatrix:
        rng = np.random.Generator(np.random.Philox(key=self.seed, counter=_site_counter(j, k2)))
        x = rng.standard_normal(4)
        angle = 2.0 * math.pi * rng.random()
        x = x / np.linalg.norm(x)
        return ScatterMatrix(
            complex(math.cos(angle), math.sin(angle)),
            complex(x[0], x[1]),
            complex(x[2], x[3]),
        )


@dataclass(frozen=True)
class ChiralRule:
    """Left phase (j < n_left) off-diagonal, right phase (j >= n_right) diagonal."""

    n_left: int
    n_right: int
    draw: SiteRule
    deterministic_phases: bool = False

    def __call__(self, j: int, k2: int) -> ScatterMatrix:
        drawn = self.draw(j, k2)
        if self.n_left <= j < self.n_right:
            return drawn
        q = 1.0 + 0j if self.deterministic_phases else drawn.q
        if j < self.n_left:
            return ScatterMatrix(q, 0j, 1.0 + 0j)
        return ScatterMatrix(q, 1.0 + 0j, 0j)

    @property
    def seed(self) -> Optional[int]:
        return getattr(self.draw, "seed", None)


@dataclass(frozen=True)
class GeodesicRule:
    """
    Node-wise unitary path S_a (S_a^* S_b)^s between two fields.

    The path is lifted to (q, r, t) coordinates starting from the branch of
    S_a. When the shortest geodesic would end on (-q_b, -r_b, -t_b), one
    eigenphase of S_a^* S_b is taken through the other side of the circle so
    that the lift ends on S_b itself.
    """

    start: "SField"
    end: "SField"
    s: float

    def __call__(self, j: int, k2: int) -> ScatterMatrix:
        sa = self.start.scatter(j, k2)
        sb = self.end.scatter(j, k2)
        if self.s == 0.0:
            return sa
        if self.s == 1.0:
            return sb
        w = sa.matrix.conj().T @ sb.matrix
        tri, z = scipy.linalg.schur(w, output="complex")
        angles = np.angle(np.diag(tri))
        q_end = sa.q * np.exp(0.5j * float(np.sum(angles)))
        if abs(q_end - sb.q) > abs(q_end + sb.q):
            i = int(np.argmax(np.abs(angles)))
            angles[i] += -2.0 * math.pi if angles[i] > 0 else 2.0 * math.pi
        ws = z @ np.diag(np.exp(1j * self.s * angles)) @ z.conj().T
        q = sa.q * np.exp(0.5j * self.s * float(np.sum(angles)))
        return ScatterMatrix.from_matrix(sa.matrix @ ws, q=complex(q))


# ---------------------- scattering fields ----------------------


Node = tuple[int, int]


class SField:
    """
    Scattering field on Z x 2Z with the chiral-phase structure.

    Resolution order for node (j, k2):
      1. ``patches`` keyed by the raw node (they break vertical periodicity),
      2. ``overrides`` keyed by the node reduced modulo ``vertical_period``,
      3. ``rule(j, reduced k2)``.
    Every resolved matrix is checked against the chirality condition.
    """

    def __init__(
        self,
        n_left: int,
        n_right: int,
        rule: SiteRule,
        overrides: Optional[Mapping[Node, ScatterMatrix]] = None,
        vertical_period: int = 0,
        patches: Optional[Mapping[Node, ScatterMatrix]] = None,
    ):
        if n_left > n_right:
            raise ValueError(f"n_left={n_left} exceeds n_right={n_right}")
        if vertical_period < 0 or vertical_period % 2:
            raise PeriodError(f"vertical_period must be 0 or a positive even integer, got {vertical_period}")
        self.n_left = n_left
        self.n_right = n_right
        self.rule = rule
        self._period = vertical_period
        self._overrides: dict[Node, ScatterMatrix] = {}
        for (j, k2), m in (overrides or {}).items():
            key = self._reduce(j, k2)
            if key in self._overrides and self._overrides[key] != m:
                raise PeriodError(f"conflicting overrides for node {(j, k2)} under period {vertical_period}")
            self._check_chirality(j, k2, m)
            self._overrides[key] = m
        self._patches: dict[Node, ScatterMatrix] = {}
        for (j, k2), m in (patches or {}).items():
            _require_even(k2)
            self._check_chirality(j, k2, m)
            self._patches[(j, k2)] = m
        self._cache: dict[Node, ScatterMatrix] = {}

    # -- properties

    @property
    def strip(self) -> StripSpec:
        return StripSpec(self.n_left, self.n_right)

    @property
    def vertical_period(self) -> int:
        return 0 if self._patches else self._period

    @property
    def seed(self) -> Optional[int]:
        return getattr(self.rule, "seed", None)

    @property
    def overrides(self) -> dict[Node, ScatterMatrix]:
        return dict(self._overrides)

    # -- lookups

    def _reduce(self, j: int, k2: int) -> Node:
        _require_even(k2)
        if self._period:
            k2 = k2 % self._period
        return j, k2

    def _check_chirality(self, j: int, k2: int, m: ScatterMatrix) -> None:
        if j < self.n_left and not m.is_off_diagonal:
            raise ChiralityError(
                f"S_{{{j},{k2}}} lies in the left phase (j < {self.n_left}) but r = {m.r:.3g} != 0",
                site=(j, k2),
            )
        if j >= self.n_right and not m.is_diagonal:
            raise ChiralityError(
                f"S_{{{j},{k2}}} lies in the right phase (j >= {self.n_right}) but t = {m.t:.3g} != 0",
                site=(j, k2),
            )

    def scatter(self, j: int, k2: int) -> ScatterMatrix:
        _require_even(k2)
        if (j, k2) in self._patches:
            return self._patches[(j, k2)]
        key = self._reduce(j, k2)
        m = self._cache.get(key)
        if m is None:
            m = self._overrides.get(key)
            if m is None:
                m = self.rule(*key)
                self._check_chirality(j, k2, m)
            self._cache[key] = m
        return m

    def nodes(self, columns: tuple[int, int], rows: tuple[int, int]) -> Iterator[Node]:
        """Nodes (j, k2) with j0 <= j <= j1 and k0 <= k2 <= k1, k2 even."""
        j0, j1 = columns
        k0, k1 = rows
        for k2 in range(floor_even(k0) + (2 if floor_even(k0) < k0 else 0), k1 + 1, 2):
            for j in range(j0, j1 + 1):
                yield j, k2

    # -- derived fields

    def with_patches(self, patches: Mapping[Node, ScatterMatrix]) -> "SField":
        merged = {**self._patches, **patches}
        return SField(self.n_left, self.n_right, self.rule, self._overrides, self._period, merged)

    def with_overrides(self, overrides: Mapping[Node, ScatterMatrix]) -> "SField":
        merged = dict(self._overrides)
        for (j, k2), m in overrides.items():
            merged[self._reduce(j, k2)] = m
        return SField(self.n_left, self.n_right, self.rule, merged, self._period, self._patches)

    def __repr__(self) -> str:
        return (
            f"SField(n_left={self.n_left}, n_right={self.n_right}, seed={self.seed}, "
            f"vertical_period={self.vertical_period}, overrides={len(self._overrides)}, "
            f"patches={len(self._patches)})"
        )


def _require_even(k2: int) -> None:
    if k2 % 2:
        raise ValueError(f"row index k2={k2} of a scattering node must be even")


# ---------------------- operations ----------------------


def field_from_spec(config: "ModelConfig") -> SField:
    """Materialize the (lazy) field described by a validated ModelConfig."""
    rule = ChiralRule(
        config.n_left,
        config.n_right,
        HaarDraw(config.seed),
        deterministic_phases=config.deterministic_phases,
    )
    overrides: dict[Node, ScatterMatrix] = {}
    for entry in config.overrides:
        overrides[(entry.j, entry.k2)] = build_scatter(
            complex(*entry.q), complex(*entry.r), complex(*entry.t)
        )
    field = SField(config.n_left, config.n_right, rule, overrides, config.vertical_period)
    logger.debug("built %r", field)
    return field


def field_distance(a: SField, b: SField, columns: tuple[int, int], rows: tuple[int, int]) -> float:
    """sup over the nodes of the window of the S^1 x S^3 metric."""
    nodes = list(a.nodes(columns, rows))
    if not nodes:
        raise ValueError(f"empty window: columns={columns}, rows={rows}")
    return max(a.scatter(j, k2).distance(b.scatter(j, k2)) for j, k2 in nodes)


def interpolate_fields(start: SField, end: SField, s: float) -> SField:
    if (start.n_left, start.n_right) != (end.n_left, end.n_right):
        raise ValueError("fields must share the interface bounds to be interpolated")
    period = start.vertical_period if start.vertical_period == end.vertical_period else 0
    return SField(start.n_left, start.n_right, GeodesicRule(start, end, s), vertical_period=period)
