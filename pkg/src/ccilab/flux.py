"""
Flux observable Phi_c = U* Q_c U - Q_c of the strip, Q_c = chi(k >= c).

Phi_c is finite rank, supported on heights {c-1, c}, and splits into 2x2 blocks:

    c even:  nodes 2m, p_L <= m < p_R, basis (|2m,c>, |2m+1,c-1>)
             [[-|r|^2, -conj(r t)], [-r t, |r|^2]]     plus  -|hi,c><hi,c|
    c odd:   nodes 2m+1 in [lo+1, hi-1], basis (|2m+1,c-1>, |2m+2,c>)
             [[|t|^2, -conj(r t)], [-r t, -|t|^2]]     plus  -|lo,c><lo,c|

so Tr Phi_c = -1 for every cut.  The index of the pair (U*QU, Q) is computed three
ways, and Kitaev's sum over matrix elements crossing the cut is evaluated for both
translation-invariant kernels and banded row kernels of the strip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Literal, Optional, Union

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field, model_validator

from .errors import KernelSupportError
from .fiber import FiberKernel
from .lattice import IDENTITY, LatticeSite, SField, StripSpec
from .operators import DenseUnitary, NetworkWindow, StateVector, Window

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-6
CONDITIONING_TOL = 1e-3
PROJECTION_TOL = 1e-10
HERMITIAN_TOL = 1e-12

IndexMethod = Literal["kernel", "trace-power", "intersections"]


# ---------------------- the flux operator ----------------------


@dataclass(frozen=True, eq=False)
class FluxBlock:
    column: int
    sites: tuple[LatticeSite, ...]
    matrix: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvalsh(self.matrix)


@dataclass(eq=False)
class FluxOperator:
    cut: int
    strip: StripSpec
    blocks: list[FluxBlock]

    def __post_init__(self) -> None:
        for block in self.blocks:
            m = block.matrix
            if np.max(np.abs(m - m.conj().T)) > HERMITIAN_TOL:
                raise ValueError(f"flux block at column {block.column} is not hermitian")
            if np.any(np.abs(block.eigenvalues()) > 1.0 + HERMITIAN_TOL):
                raise ValueError(f"flux block at column {block.column} has eigenvalues outside [-1, 1]")
            for site in block.sites:
                if site.k not in (self.cut - 1, self.cut) or site.j not in self.strip.columns:
                    raise ValueError(f"flux block site {site} outside rows {{c-1, c}} of the strip")

    def basis(self) -> list[LatticeSite]:
        """Strip columns x rows {c-1, c}, row-major from the lower row."""
        return [LatticeSite(j, k) for k in (self.cut - 1, self.cut) for j in self.strip.columns]

    def matrix(self, basis: Optional[list[LatticeSite]] = None) -> np.ndarray:
        basis = self.basis() if basis is None else basis
        index = {site: i for i, site in enumerate(basis)}
        m = np.zeros((len(basis), len(basis)), dtype=complex)
        for block in self.blocks:
            idx = [index[site] for site in block.sites]
            m[np.ix_(idx, idx)] = block.matrix
        return m

    def eigenvalues(self) -> np.ndarray:
        values = [block.eigenvalues() for block in self.blocks]
        return np.sort(np.concatenate(values)) if values else np.zeros(0)

    def trace(self) -> float:
        return float(sum(np.trace(block.matrix).real for block in self.blocks))


def flux_blocks(field: SField, strip: StripSpec, c: int) -> FluxOperator:
    blocks: list[FluxBlock] = []
    if c % 2 == 0:
        for m in range(strip.p_left, strip.p_right):
            s = field.scatter(2 * m, c)
            r, t = s.r, s.t
            block = np.array([[-abs(r) ** 2, -np.conj(r * t)], [-r * t, abs(r) ** 2]], dtype=complex)
            blocks.append(FluxBlock(2 * m, (LatticeSite(2 * m, c), LatticeSite(2 * m + 1, c - 1)), block))
        blocks.append(FluxBlock(strip.hi, (LatticeSite(strip.hi, c),), np.array([[-1.0 + 0j]])))
    else:
        blocks.append(FluxBlock(strip.lo, (LatticeSite(strip.lo, c),), np.array([[-1.0 + 0j]])))
        for j in range(strip.lo + 1, strip.hi, 2):
            s = field.scatter(j, c - 1)
            r, t = s.r, s.t
            block = np.array([[abs(t) ** 2, -np.conj(r * t)], [-r * t, -abs(t) ** 2]], dtype=complex)
            blocks.append(FluxBlock(j, (LatticeSite(j, c - 1), LatticeSite(j + 1, c)), block))
    return FluxOperator(c, strip, blocks)


def expected_flux_spectrum(field: SField, strip: StripSpec, c: int) -> np.ndarray:
    """{-1} together with +-|r_{2m,c}| (c even) or +-|t_{2m+1,c-1}| (c odd)."""
    values = [-1.0]
    if c % 2 == 0:
        moduli = [abs(field.scatter(2 * m, c).r) for m in range(strip.p_left, strip.p_right)]
    else:
        moduli = [abs(field.scatter(j, c - 1).t) for j in range(strip.lo + 1, strip.hi, 2)]
    for x in moduli:
        values += [x, -x]
    return np.sort(np.array(values))


def flux_matrix_free(field: SField, strip: StripSpec, c: int) -> tuple[list[LatticeSite], np.ndarray]:
    """U* Q U - Q on the strip basis of rows c-2..c+1, evaluated through the operator engine."""
    window = Window.strip(strip, c - 4, c + 3)
    engine = NetworkWindow(field, window)
    upper = np.repeat((np.arange(window.k0, window.k1 + 1) >= c)[:, None], window.nj, axis=1)
    basis = [LatticeSite(j, k) for k in range(c - 2, c + 2) for j in strip.columns]
    m = np.zeros((len(basis), len(basis)), dtype=complex)
    for col, site in enumerate(basis):
        e = StateVector.basis(window, *site)
        ue = engine.apply(e)
        phi = engine.apply_adjoint(StateVector(window, ue.amps * upper)) - StateVector(window, e.amps * upper)
        m[:, col] = [phi.amplitude(*s) for s in basis]
    return basis, m


def flux_matrix(dense: DenseUnitary, cut: int) -> np.ndarray:
    """M* Q M - Q for a finite truncation, Q = chi(k >= cut) on its basis."""
    q = np.diag([1.0 if site.k >= cut else 0.0 for site in dense.basis])
    m = dense.matrix
    return m.conj().T @ q @ m - q


def eigenvector_flux(dense: DenseUnitary, flux: np.ndarray) -> float:
    """max_i |<phi_i, flux phi_i>| over an orthonormal eigenbasis of ``dense``."""
    _, vectors = dense.eigenvectors()
    values = np.einsum("ji,jk,ki->i", vectors.conj(), flux, vectors)
    return float(np.max(np.abs(values), initial=0.0))


# ---------------------- reports ----------------------


class FluxEigenEntry(BaseModel):
    column: int
    eigenvalue: float


class FluxReport(BaseModel):
    cut: int
    eigenvalues: list[float]
    trace: float
    index: int
    tolerance_used: float = KERNEL_TOL
    entries: list[FluxEigenEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def trace_matches_spectrum(self) -> "FluxReport":
        if abs(self.trace - sum(self.eigenvalues)) > 1e-10:
            raise ValueError(f"trace {self.trace} disagrees with the eigenvalue sum {sum(self.eigenvalues)}")
        return self


def flux_spectrum(flux: FluxOperator) -> FluxReport:
    entries = [
        FluxEigenEntry(column=block.column, eigenvalue=float(v)) for block in flux.blocks for v in block.eigenvalues()
    ]
    p, q, _ = flux_projection_pair(flux)
    return FluxReport(
        cut=flux.cut,
        eigenvalues=[float(v) for v in flux.eigenvalues()],
        trace=flux.trace(),
        index=relative_index(p, q),
        entries=entries,
    )


# ---------------------- index of a pair of projections ----------------------


@dataclass(frozen=True)
class HalfSpaceProjection:
    cut: int

    def diagonal(self, basis: list[LatticeSite]) -> np.ndarray:
        return np.array([1.0 if site.k >= self.cut else 0.0 for site in basis])

    def matrix(self, basis: list[LatticeSite]) -> np.ndarray:
        return np.diag(self.diagonal(basis)).astype(complex)

    def apply(self, psi: StateVector) -> StateVector:
        _, k = psi.window.coordinates()
        return StateVector(psi.window, np.where(k >= self.cut, psi.amps, 0.0))


def flux_projection_pair(flux: FluxOperator) -> tuple[np.ndarray, np.ndarray, list[LatticeSite]]:
    """(P_W, Q_W, basis) on rows {c-1, c}: Q_W the half-space projection, P_W = Q_W + Phi_c."""
    basis = flux.basis()
    q = HalfSpaceProjection(flux.cut).matrix(basis)
    return q + flux.matrix(basis), q, basis


def _require_projection(p: np.ndarray, name: str) -> None:
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.max(np.abs(p - p.conj().T), initial=0.0) > PROJECTION_TOL:
        raise ValueError(f"{name} is not self-adjoint")
    if np.max(np.abs(p @ p - p), initial=0.0) > PROJECTION_TOL:
        raise ValueError(f"{name} is not idempotent")


def relative_index(p: np.ndarray, q: np.ndarray, method: IndexMethod = "kernel", power: int = 3) -> int:
    """
    index(P, Q) = dim ker(P - Q - 1) - dim ker(P - Q + 1).

    "kernel" counts eigenvalues of P - Q within 1e-6 of +-1, "trace-power" uses
    Tr (P - Q)^power for odd power, "intersections" computes
    dim(Ran P & ker Q) - dim(Ran Q & ker P).
    """
    p = np.asarray(p, dtype=complex)
    q = np.asarray(q, dtype=complex)
    _require_projection(p, "P")
    _require_projection(q, "Q")
    if p.shape != q.shape:
        raise ValueError(f"P and Q act on different spaces: {p.shape} vs {q.shape}")
    diff = p - q

    if method == "kernel":
        values = scipy.linalg.eigvalsh(diff)
        plus = np.abs(values - 1.0) <= KERNEL_TOL
        minus = np.abs(values + 1.0) <= KERNEL_TOL
        near = (np.abs(np.abs(values) - 1.0) <= CONDITIONING_TOL) & ~plus & ~minus
        if np.any(near):
            logger.warning(
                "P - Q has %d eigenvalues within %g of +-1 but outside %g; index may be ill-conditioned",
                int(near.sum()),
                CONDITIONING_TOL,
                KERNEL_TOL,
            )
        return int(plus.sum()) - int(minus.sum())
    if method == "trace-power":
        if power < 1 or power % 2 == 0:
            raise ValueError(f"power must be a positive odd integer, got {power}")
        return int(round(float(np.trace(np.linalg.matrix_power(diff, power)).real)))
    if method == "intersections":
        eye = np.eye(p.shape[0])
        ran_p_ker_q = scipy.linalg.null_space(eye - p + q, rcond=KERNEL_TOL).shape[1]
        ran_q_ker_p = scipy.linalg.null_space(eye - q + p, rcond=KERNEL_TOL).shape[1]
        return ran_p_ker_q - ran_q_ker_p
    raise ValueError(f"unknown index method {method!r}")


# ---------------------- Kitaev's trace ----------------------


@dataclass(eq=False)
class BandedKernel:
    """Blocks U(x, y) between rows x, y in [row0, row0 + n), with |x - y| <= radius."""

    row0: int
    blocks: np.ndarray  # (n, n, d, d)
    radius: int = 1

    @property
    def rows(self) -> tuple[int, int]:
        return self.row0, self.row0 + self.blocks.shape[0] - 1

    def block(self, x: int, y: int) -> np.ndarray:
        return self.blocks[x - self.row0, y - self.row0]


def strip_row_kernel(field: SField, strip: StripSpec, rows: tuple[int, int]) -> BandedKernel:
    """U on the strip as width x width blocks between single rows (no translation invariance needed)."""
    r0, r1 = rows
    dense = NetworkWindow(field, Window.strip(strip, r0, r1)).dense()
    n, w = r1 - r0 + 1, strip.width
    blocks = dense.matrix.reshape(n, w, n, w).transpose(0, 2, 1, 3)
    return BandedKernel(r0, blocks, radius=1)


def kitaev_trace(kernel: Union[FiberKernel, BandedKernel], cut: int) -> float:
    """sum_{x >= cut} sum_{y < cut} ||U(x,y)||_HS^2 - ||U(y,x)||_HS^2."""
    if isinstance(kernel, FiberKernel):
        weights = kernel.hs_weights()
        radius = kernel.radius
        total = 0.0
        for x in range(cut, cut + radius):
            for y in range(cut - radius, cut):
                total += weights.get(x - y, 0.0) - weights.get(y - x, 0.0)
        return total

    lo, hi = kernel.rows
    if cut - kernel.radius < lo or cut + kernel.radius - 1 > hi:
        raise KernelSupportError(
            f"cut {cut} with radius {kernel.radius} needs rows [{cut - kernel.radius}, {cut + kernel.radius - 1}], "
            f"materialized [{lo}, {hi}]"
        )
    total = 0.0
    for x in range(cut, cut + kernel.radius):
        for y in range(cut - kernel.radius, cut):
            total += float(np.sum(np.abs(kernel.block(x, y)) ** 2) - np.sum(np.abs(kernel.block(y, x)) ** 2))
    return total


# ---------------------- wandering subspace ----------------------


@dataclass(eq=False)
class ShiftWitness:
    seed_site: LatticeSite
    depth: int
    gram: np.ndarray
    modified_nodes: list[tuple[int, int]] = dc_field(default_factory=list)
    f_rank: int = 0

    @property
    def f_rank_bound(self) -> int:
        return 2 * len(self.modified_nodes)

    @property
    def residual(self) -> float:
        return float(np.max(np.abs(self.gram - np.eye(self.gram.shape[0])), initial=0.0))


def shift_witness(field: SField, strip: StripSpec, depth: int) -> ShiftWitness:
    """
    Orbit {U'^n |lo,1> : |n| <= depth} of the modified network U', whose odd
    matrices on row 0 inside the strip are replaced by the identity.
    """
    if depth < 0:
        raise ValueError(f"orbit depth must be non-negative, got {depth}")
    modified = [(j, 0) for j in range(strip.lo + 1, strip.hi, 2)]
    primed = field.with_patches({node: IDENTITY for node in modified})
    f_rank = sum(
        int(np.linalg.matrix_rank(field.scatter(*node).matrix - IDENTITY.matrix, tol=1e-12)) for node in modified
    )

    window = Window.strip(strip, -depth - 1, depth + 3)
    engine = NetworkWindow(primed, window)
    seed = StateVector.basis(window, strip.lo, 1)
    forward, backward = [seed], []
    for _ in range(depth):
        forward.append(engine.apply(forward[-1]))
        backward.append(engine.apply_adjoint(backward[-1] if backward else seed))
    orbit = np.array([v.vector for v in backward[::-1] + forward])
    gram = orbit.conj() @ orbit.T
    witness = ShiftWitness(LatticeSite(strip.lo, 1), depth, gram, modified, f_rank)
    logger.debug("shift witness depth %d: residual %.3g, F rank %d", depth, witness.residual, f_rank)
    return witness
