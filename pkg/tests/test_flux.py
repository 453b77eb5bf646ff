# tests/test_flux.py

import logging
import math

import numpy as np
import pytest

from ccilab.errors import KernelSupportError
from ccilab.fiber import FiberKernel
from ccilab.lattice import (
    HaarDraw,
    ScatterMatrix,
    SField,
    StripSpec,
    field_from_spec,
    interpolate_fields,
)
from ccilab.model import ModelConfig, OverrideEntry
from ccilab.operators import DenseUnitary, Window, plaquette_state, strip_dense
from ccilab.flux import (
    eigenvector_flux,
    expected_flux_spectrum,
    flux_blocks,
    flux_matrix,
    flux_matrix_free,
    flux_projection_pair,
    flux_spectrum,
    kitaev_trace,
    relative_index,
    shift_witness,
    strip_row_kernel,
)

CUTS = list(range(-4, 6))
HALF = 1 / math.sqrt(2)

# (n_left, n_right) pairs giving strip widths 1, 3, 5, 11, 21, plus odd bounds
BOUNDS = [(0, 0), (0, 2), (0, 4), (-4, 6), (-10, 10), (1, 1), (-3, 2)]


def _make_field(n_left=0, n_right=0, seed=7, **kwargs) -> SField:
    return field_from_spec(ModelConfig(n_left=n_left, n_right=n_right, seed=seed, **kwargs))


def _entry(j, k2, r, t, q=(1.0, 0.0)) -> OverrideEntry:
    return OverrideEntry(j=j, k2=k2, q=q, r=r, t=t)


@pytest.mark.parametrize("bounds", BOUNDS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_flux_trace_is_minus_one_on_every_cut(bounds, seed):
    field = _make_field(*bounds, seed=seed)
    for c in CUTS:
        flux = flux_blocks(field, field.strip, c)
        assert abs(flux.trace() + 1.0) <= 1e-10
        assert np.max(np.abs(flux.eigenvalues() - expected_flux_spectrum(field, field.strip, c))) <= 1e-12
        # the blocks cover half of rows {c-1, c}; the rest of the basis is in the kernel
        dense = np.linalg.eigvalsh(flux.matrix())
        padded = np.sort(np.concatenate([flux.eigenvalues(), np.zeros(field.strip.width)]))
        assert np.max(np.abs(dense - padded)) <= 1e-12


def test_sharp_interface_flux_is_a_single_projector():
    field = _make_field(0, 0, seed=4)
    for c in CUTS:
        flux = flux_blocks(field, field.strip, c)
        assert len(flux.blocks) == 1
        (block,) = flux.blocks
        assert block.sites == ((0, c),)
        assert block.matrix[0, 0] == -1.0


def test_even_cut_with_balanced_interior():
    entries = [_entry(0, 0, (HALF, 0.0), (HALF, 0.0)), _entry(2, 0, (HALF, 0.0), (HALF, 0.0))]
    field = _make_field(0, 4, seed=3, overrides=entries)
    values = flux_blocks(field, field.strip, 0).eigenvalues()
    assert np.allclose(values, [-1.0, -HALF, -HALF, HALF, HALF], atol=1e-12)


def test_odd_cut_with_reflecting_interior():
    entries = [_entry(1, 0, (1.0, 0.0), (0.0, 0.0)), _entry(3, 0, (1.0, 0.0), (0.0, 0.0))]
    field = _make_field(0, 4, seed=3, overrides=entries)
    flux = flux_blocks(field, field.strip, 1)
    assert np.allclose(flux.eigenvalues(), [-1.0, 0.0, 0.0, 0.0, 0.0], atol=1e-12)
    assert abs(flux.trace() + 1.0) <= 1e-12


def test_even_cut_with_one_full_reflection():
    entries = [_entry(0, 0, (1.0, 0.0), (0.0, 0.0)), _entry(2, 0, (0.0, 0.0), (1.0, 0.0))]
    field = _make_field(0, 4, seed=3, overrides=entries)
    values = flux_blocks(field, field.strip, 0).eigenvalues()
    assert np.allclose(values, [-1.0, -1.0, 0.0, 0.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("bounds", [(0, 4), (1, 4), (-3, 2)])
def test_matrix_free_flux_matches_closed_form(bounds):
    field = _make_field(*bounds, seed=19)
    for c in range(-2, 4):
        basis, m = flux_matrix_free(field, field.strip, c)
        closed = flux_blocks(field, field.strip, c).matrix(basis)
        assert np.max(np.abs(m - closed)) <= 1e-12


def test_flux_report_carries_index_and_entries():
    field = _make_field(-3, 2, seed=8)
    report = flux_spectrum(flux_blocks(field, field.strip, 1))
    assert report.cut == 1
    assert report.index == -1
    assert abs(report.trace + 1.0) <= 1e-10
    assert len(report.entries) == len(report.eigenvalues) == field.strip.width


@pytest.mark.parametrize("method", ["kernel", "trace-power", "intersections"])
def test_relative_index_methods_agree_on_strip_pairs(method):
    field = _make_field(-4, 6, seed=5)
    for c in CUTS:
        p, q, _ = flux_projection_pair(flux_blocks(field, field.strip, c))
        assert relative_index(p, q, method=method) == -1


@pytest.mark.parametrize("method", ["kernel", "trace-power", "intersections"])
def test_relative_index_small_examples(method):
    q = np.diag([0.0, 1.0, 1.0, 0.0])
    assert relative_index(q, q, method=method) == 0

    p = np.diag([1.0, 1.0, 0.0, 0.0])
    q = np.diag([0.0, 0.0, 1.0, 0.0])
    assert relative_index(p, q, method=method) == 1
    assert relative_index(q, p, method=method) == -1


def test_finite_unitary_conjugation_has_index_zero():
    field = _make_field(0, 0, seed=2)
    dense = strip_dense(field, field.strip, (-3, 4))
    q = np.diag([1.0 if site.k >= 1 else 0.0 for site in dense.basis])
    p = dense.matrix.conj().T @ q @ dense.matrix
    for method in ("kernel", "trace-power", "intersections"):
        assert relative_index(p, q, method=method) == 0


def test_near_degenerate_pair_logs_a_warning(caplog):
    theta = math.asin(1.0 - 1e-4)
    u = np.array([math.cos(theta), math.sin(theta)])
    p = np.outer(u, u)
    q = np.diag([1.0, 0.0])
    with caplog.at_level(logging.WARNING, logger="ccilab.flux"):
        assert relative_index(p, q) == 0
    assert "ill-conditioned" in caplog.text


def test_relative_index_rejects_non_projections():
    q = np.diag([1.0, 0.0])
    with pytest.raises(ValueError):
        relative_index(np.diag([0.5, 0.0]), q)
    with pytest.raises(ValueError):
        relative_index(q, q, method="trace-power", power=2)
    with pytest.raises(ValueError):
        relative_index(q, q, method="determinant")


def test_kitaev_trace_of_elementary_kernels():
    assert kitaev_trace(FiberKernel.shift(1), 0) == pytest.approx(1.0, abs=1e-12)
    assert kitaev_trace(FiberKernel.shift(3), 0) == pytest.approx(3.0, abs=1e-12)
    assert kitaev_trace(FiberKernel({0: np.eye(2)}), 0) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("bounds", [(0, 0), (0, 4), (-3, 2), (-10, 10)])
def test_kitaev_trace_of_strip_rows(bounds):
    field = _make_field(*bounds, seed=27)
    kernel = strip_row_kernel(field, field.strip, (-6, 7))
    for c in range(-4, 6):
        assert abs(kitaev_trace(kernel, c) + 1.0) <= 1e-10


def test_kitaev_trace_needs_materialized_rows():
    field = _make_field(0, 2, seed=1)
    kernel = strip_row_kernel(field, field.strip, (-2, 2))
    with pytest.raises(KernelSupportError):
        kitaev_trace(kernel, -2)
    with pytest.raises(KernelSupportError):
        kitaev_trace(kernel, 3)


def test_single_node_change_keeps_the_index():
    field = _make_field(0, 4, seed=6)
    patched = field.with_patches({(1, 0): HaarDraw(99)(1, 0)})
    kernel = strip_row_kernel(patched, patched.strip, (-4, 5))
    for c in range(-2, 4):
        assert abs(flux_blocks(patched, patched.strip, c).trace() + 1.0) <= 1e-10
        assert abs(kitaev_trace(kernel, c) + 1.0) <= 1e-10


def test_index_is_constant_along_an_interpolation():
    a = _make_field(-1, 3, seed=40, deterministic_phases=True)
    b = _make_field(-1, 3, seed=41, deterministic_phases=True)
    for s in np.linspace(0.0, 1.0, 11):
        field = interpolate_fields(a, b, float(s))
        kernel = strip_row_kernel(field, field.strip, (-3, 4))
        for c in range(-1, 3):
            assert abs(flux_blocks(field, field.strip, c).trace() + 1.0) <= 1e-10
            p, q, _ = flux_projection_pair(flux_blocks(field, field.strip, c))
            assert relative_index(p, q) == -1
            assert abs(kitaev_trace(kernel, c) + 1.0) <= 1e-10


def test_eigenvectors_of_a_finite_model_carry_no_flux():
    field = _make_field(1, 1, seed=13)
    dense = strip_dense(field, field.strip, (-7, 8))
    assert eigenvector_flux(dense, flux_matrix(dense, 1)) <= 1e-9

    identity = DenseUnitary(dense.basis, np.eye(len(dense.basis), dtype=complex))
    flux = flux_matrix(identity, 1)
    assert np.max(np.abs(flux)) == 0.0
    assert eigenvector_flux(identity, flux) == 0.0


def test_plaquette_state_carries_no_flux():
    diagonal = ScatterMatrix(1.0 + 0j, 1.0 + 0j, 0j)
    entries = [_entry(j, 0, (1.0, 0.0), (0.0, 0.0)) for j in (2, 3, 4)]
    field = _make_field(0, 6, seed=9, vertical_period=2, overrides=entries)
    assert field.scatter(3, 4) == diagonal

    flux = flux_blocks(field, field.strip, 2)
    assert abs(flux.trace() + 1.0) <= 1e-12
    psi = plaquette_state(field, Window.strip(field.strip, 0, 3), 2, 1, "right")
    basis = flux.basis()
    v = np.array([psi.amplitude(*site) for site in basis])
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-12
    assert abs(np.vdot(v, flux.matrix(basis) @ v)) <= 1e-12


def test_shift_witness_on_the_sharp_interface():
    field = _make_field(0, 0, seed=0)
    witness = shift_witness(field, field.strip, 50)
    assert witness.gram.shape == (101, 101)
    assert witness.residual <= 1e-10
    assert witness.f_rank == witness.f_rank_bound == 0


@pytest.mark.parametrize(
    "bounds, seed", [((0, 4), 15), ((-3, 2), 16), ((0, 2), 17), ((-4, 6), 18), ((-2, 3), 19)]
)
def test_shift_witness_on_random_interfaces(bounds, seed):
    field = _make_field(*bounds, seed=seed)
    witness = shift_witness(field, field.strip, 50)
    assert witness.gram.shape == (101, 101)
    assert witness.residual <= 1e-10
    assert witness.f_rank <= witness.f_rank_bound


def test_shift_witness_depth_zero_and_negative():
    field = _make_field(0, 2, seed=1)
    witness = shift_witness(field, field.strip, 0)
    assert np.allclose(witness.gram, [[1.0]], atol=0.0)
    with pytest.raises(ValueError):
        shift_witness(field, field.strip, -1)
