# tests/test_fiber.py

import math

import numpy as np
import pytest
from scipy.stats import unitary_group

from ccilab.errors import TranslationInvarianceError
from ccilab.fiber import (
    FiberKernel,
    band_structure,
    coin_matrix,
    eigenvalue_distance,
    fiber_kernel,
    fiber_transform,
    gauge_normalize,
    mqw_matrix,
    qw_coins,
    winding_exact,
    winding_phase,
)
from ccilab.flux import kitaev_trace
from ccilab.lattice import IDENTITY, SField, StripSpec, build_scatter, field_from_spec
from ccilab.model import ModelConfig, OverrideEntry
from ccilab.operators import StateVector, Window, apply_u

YS = np.linspace(0.0, 2 * math.pi, 16, endpoint=False)

# random interiors, odd bounds included, all vertically translation invariant
PERIODIC = [
    (0, 2, 2),
    (0, 4, 3),
    (1, 3, 4),
    (-3, 2, 5),
    (-1, 1, 6),
    (0, 1, 7),
    (-2, 4, 8),
    (-1, 0, 9),
    (2, 5, 10),
    (-3, 3, 11),
]


def _make_field(n_left=0, n_right=0, seed=7, vertical_period=2, **kwargs) -> SField:
    config = ModelConfig(n_left=n_left, n_right=n_right, seed=seed, vertical_period=vertical_period, **kwargs)
    return field_from_spec(config)


def _to_cells(psi: StateVector, strip: StripSpec) -> tuple[np.ndarray, int]:
    """Regroup a strip state (rows 2c0-1 .. 2c1) into cells of fiber vectors."""
    w = psi.window
    assert w.k0 % 2 == 1 and w.k1 % 2 == 0
    ncells = w.nk // 2
    cells = np.array(psi.amps).reshape(ncells, 2, strip.width).transpose(0, 2, 1).reshape(ncells, -1)
    return cells, (w.k0 + 1) // 2


def _align(a: np.ndarray, a_off: int, b: np.ndarray, b_off: int) -> tuple[np.ndarray, np.ndarray]:
    start = min(a_off, b_off)
    end = max(a_off + len(a), b_off + len(b))
    out_a = np.zeros((end - start, a.shape[1]), dtype=complex)
    out_b = np.zeros_like(out_a)
    out_a[a_off - start : a_off - start + len(a)] = a
    out_b[b_off - start : b_off - start + len(b)] = b
    return out_a, out_b


def test_sharp_interface_kernel_and_windings():
    field = _make_field(0, 0, seed=3)
    kernel = fiber_kernel(field, field.strip)
    assert kernel.dim == 2
    assert sorted(kernel.taps) == [-1, 0]
    for tap in kernel.taps.values():
        entries = np.abs(tap[np.abs(tap) > 1e-12])
        assert entries.size == 1 and abs(entries[0] - 1.0) <= 1e-12
    assert winding_exact(kernel) == -1
    assert winding_phase(kernel) == -1
    assert abs(kitaev_trace(kernel, 0) + 1.0) <= 1e-12


def test_elementary_kernel_windings():
    assert winding_exact(FiberKernel.shift(1)) == 1
    assert winding_phase(FiberKernel.shift(1)) == 1
    assert winding_exact(FiberKernel.shift(2)) == 2
    assert winding_phase(FiberKernel.shift(2)) == 2
    constant = FiberKernel({0: unitary_group.rvs(3, random_state=0)})
    assert winding_exact(constant) == winding_phase(constant) == 0


def test_symbol_uses_the_opposite_fourier_sign():
    # V^(y) = sum_k e^{-iyk} V(k): the shift kernel's symbol is e^{-iy}
    kernel = FiberKernel.shift(1)
    for y in YS:
        assert np.allclose(kernel.symbol(y), [[np.exp(-1j * y)]], atol=1e-15)
    field = _make_field(0, 2, seed=2)
    strip_kernel = fiber_kernel(field, field.strip)
    for y in YS[::4]:
        assert np.allclose(strip_kernel.symbol(y), strip_kernel.fourier(-y), atol=0.0)


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_random_periodic_strips_wind_once_backwards(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    kernel = fiber_kernel(field, field.strip)
    assert kernel.certify_unitary() <= 1e-10
    assert kernel.dim == 2 * field.strip.width
    assert winding_exact(kernel) == -1
    assert winding_phase(kernel, 256) == -1
    assert abs(kitaev_trace(kernel, 0) + 1.0) <= 1e-10


def test_winding_is_unchanged_by_conjugation():
    field = _make_field(0, 4, seed=11)
    kernel = fiber_kernel(field, field.strip)
    w = unitary_group.rvs(kernel.dim, random_state=1)
    conjugated = kernel.conjugate(w)
    assert winding_exact(conjugated) == -1
    assert winding_phase(conjugated) == -1


def test_kitaev_trace_is_additive_under_powers():
    field = _make_field(-1, 3, seed=8)
    kernel = fiber_kernel(field, field.strip)
    for n in (1, 2, 3):
        assert abs(kitaev_trace(kernel.power(n), 0) + n) <= 1e-9


def test_winding_phase_rejects_coarse_grids():
    with pytest.raises(ValueError):
        winding_phase(FiberKernel.shift(1), 32)


def test_kernel_convolution_reproduces_the_network():
    field = _make_field(-3, 2, seed=21)
    strip = field.strip
    kernel = fiber_kernel(field, strip)
    window = Window.strip(strip, -7, 8)
    rng = np.random.default_rng(5)
    for _ in range(20):
        psi = StateVector.random(window, rng, normalize=False)
        amps = np.array(psi.amps)
        amps[:2] = 0.0
        amps[-2:] = 0.0
        psi = StateVector(window, amps)
        cells, offset = _to_cells(psi, strip)
        out, out_offset = kernel.convolve(cells, offset)
        expected, _ = _to_cells(apply_u(field, psi), strip)
        a, b = _align(out, out_offset, expected, offset)
        assert np.max(np.abs(a - b)) <= 1e-12


def test_fiber_kernel_requires_translation_invariance():
    field = _make_field(0, 2, seed=1, vertical_period=0)
    with pytest.raises(TranslationInvarianceError):
        fiber_kernel(field, field.strip)


def test_coin_examples():
    y = 0.7
    assert np.allclose(coin_matrix(IDENTITY, 0, y), [[0, np.exp(1j * y)], [np.exp(-1j * y), 0]], atol=1e-15)
    assert np.allclose(coin_matrix(IDENTITY, 1, y), np.eye(2), atol=1e-15)
    s = build_scatter(1j, 0.6, 0.8)
    for column in (0, 1):
        c = coin_matrix(s, column, y)
        assert np.max(np.abs(c.conj().T @ c - np.eye(2))) <= 1e-12


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_walk_fiber_is_unitary_and_matches_the_network(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    strip = field.strip
    walk = qw_coins(field, strip)
    window = Window.strip(strip, -6, 6)
    rng = np.random.default_rng(seed)
    psi = StateVector.random(window, rng)
    amps = np.array(psi.amps)
    amps[:2] = 0.0
    amps[-2:] = 0.0
    psi = StateVector(window, amps)
    u_psi = apply_u(field, psi)
    for y in YS:
        m = walk(y).matrix()
        assert np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) <= 1e-10
        assert np.max(np.abs(fiber_transform(u_psi, y) - m @ fiber_transform(psi, y))) <= 1e-12


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_five_diagonal_walk_matrix(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    strip = field.strip
    kernel = fiber_kernel(field, strip)
    walk = qw_coins(field, strip)
    lo = strip.lo
    for y in YS:
        mqw = mqw_matrix(field, y, strip)
        assert mqw.n0 == 2 * lo - 1
        assert mqw.bandwidth() <= 2
        assert mqw.unitarity_defect() <= 1e-10
        assert eigenvalue_distance(mqw.eigenvalues(), np.linalg.eigvals(kernel.fourier(y))) <= 1e-9
        # the same operator in the (n, +-) ordering of the coin picture
        order = [
            2 * (n // 2 - lo) if n % 2 == 0 else 2 * ((n - 1) // 2 + 1 - lo) + 1
            for n in range(mqw.n0, 2 * strip.hi + 1)
        ]
        assert np.max(np.abs(mqw.matrix - walk(y).matrix()[np.ix_(order, order)])) <= 1e-12


def test_sharp_walk_matrix_has_unit_entries():
    field = _make_field(0, 0, seed=2)
    mqw = mqw_matrix(field, 1.3, field.strip)
    for col in mqw.matrix.T:
        nonzero = np.abs(col[np.abs(col) > 1e-12])
        assert nonzero.size == 1 and abs(nonzero[0] - 1.0) <= 1e-12


def _normal_form_overrides() -> list[OverrideEntry]:
    return [
        OverrideEntry(j=0, k2=0, r=(0.6, 0.0), t=(0.0, 0.8)),
        OverrideEntry(j=1, k2=0, q=(0.0, 1.0), r=(0.6, 0.0), t=(0.8, 0.0)),
        OverrideEntry(j=2, k2=0, r=(0.6, 0.0), t=(0.0, 0.8)),
        OverrideEntry(j=3, k2=0, r=(0.8, 0.0), t=(0.0, 0.6)),
    ]


def test_gauge_of_a_normalized_field_is_trivial():
    field = _make_field(0, 4, seed=4, overrides=_normal_form_overrides())
    _, record = gauge_normalize(field, field.strip)
    assert record.is_identity()


def test_gauge_makes_even_t_imaginary_and_odd_r_positive():
    theta = 0.7
    entries = _normal_form_overrides()
    entries[1] = OverrideEntry(j=1, k2=0, r=(0.6 * math.cos(theta), 0.6 * math.sin(theta)), t=(0.8, 0.0))
    field = _make_field(0, 4, seed=4, overrides=entries)
    normalized, record = gauge_normalize(field, field.strip)
    assert not record.is_identity()
    assert normalized.vertical_period == 2
    for j in field.strip.columns:
        s = normalized.scatter(j, 0)
        if j % 2 == 0 and not s.is_diagonal:
            assert abs(s.t.real) <= 1e-12 and s.t.imag > 0
        if j % 2 == 1 and not s.is_off_diagonal:
            assert abs(s.r.imag) <= 1e-12 and s.r.real > 0


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_gauge_is_a_diagonal_conjugation(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    strip = field.strip
    normalized, record = gauge_normalize(field, strip)
    d = record.mqw_diagonal()
    for y in YS[::2]:
        before = mqw_matrix(field, y, strip)
        after = mqw_matrix(normalized, y, strip)
        assert np.max(np.abs(after.matrix - (d[:, None] * before.matrix * d.conj()[None, :]))) <= 1e-10
        assert eigenvalue_distance(after.eigenvalues(), before.eigenvalues()) <= 1e-9


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_determinant_winds_once_after_gauge(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    normalized, _ = gauge_normalize(field, field.strip)
    ys = np.linspace(0.0, 2 * math.pi, 256, endpoint=False)
    values = np.array([mqw_matrix(normalized, y, field.strip).det() * np.exp(1j * y) for y in ys])
    assert np.max(np.abs(values - values[0])) <= 1e-10


def test_bands_of_the_square_root_walk():
    kernel = FiberKernel({0: [[0, 1], [0, 0]], 1: [[0, 0], [1, 0]]})
    bands = band_structure(kernel)
    assert bands.coverage.covered
    assert bands.spectral_flow == 1
    i = int(np.argmin(np.abs(bands.ys - math.pi)))
    phases = np.sort(bands.eigenphases[i])
    assert np.allclose(phases, [math.pi / 2, 3 * math.pi / 2], atol=1e-9)


def test_flat_bands_leave_a_gap():
    bands = band_structure(FiberKernel({0: np.diag([1.0, 1j])}))
    assert not bands.coverage.covered
    assert bands.coverage.max_gap == pytest.approx(3 * math.pi / 2, abs=1e-12)
    assert bands.spectral_flow == 0


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC)
def test_strip_bands_cover_the_circle(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    bands = band_structure(fiber_kernel(field, field.strip), 1024)
    assert bands.coverage.covered
    assert bands.spectral_flow == -1
    assert len(bands.rows()) == len(bands.ys) * 2 * field.strip.width


def test_band_structure_rejects_coarse_grids():
    with pytest.raises(ValueError):
        band_structure(FiberKernel.shift(1), 64)


@pytest.mark.parametrize("n_left, n_right, seed", PERIODIC[::3])
def test_gauge_keeps_windings_and_coverage(n_left, n_right, seed):
    field = _make_field(n_left, n_right, seed=seed)
    normalized, _ = gauge_normalize(field, field.strip)
    before = fiber_kernel(field, field.strip)
    after = fiber_kernel(normalized, field.strip)
    assert winding_exact(after) == winding_exact(before) == -1
    assert winding_phase(after, 128) == winding_phase(before, 128)
    bands = band_structure(after, 512)
    assert bands.coverage.covered == band_structure(before, 512).coverage.covered
    assert bands.coverage.steps_within_bound


def test_coverage_needs_steps_inside_the_lipschitz_envelope(monkeypatch):
    import ccilab.fiber as fiber

    kernel = FiberKernel({0: [[0, 1], [0, 0]], 1: [[0, 0], [1, 0]]})
    honest = band_structure(kernel)
    assert honest.coverage.steps_within_bound
    assert honest.coverage.max_step <= 2 * math.asin(honest.coverage.lipschitz_bound / 2) + 1e-9

    match = fiber._match
    monkeypatch.setattr(fiber, "_match", lambda prev, nxt: (match(prev, nxt)[0], match(prev, nxt)[1] + 0.2))
    inflated = band_structure(kernel)
    assert inflated.coverage.max_gap <= 1e-12
    assert not inflated.coverage.steps_within_bound
    assert not inflated.coverage.covered
