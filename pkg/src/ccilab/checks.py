"""
Invariant suite behind ``ccilab check``.

Each check returns a CheckResult; domain failures inside a check are caught and
reported as a failed result carrying the error payload, so one broken invariant
does not hide the others.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field

from .errors import CCLabError
from .fiber import (
    band_structure,
    eigenvalue_distance,
    fiber_kernel,
    gauge_normalize,
    mqw_matrix,
    winding_exact,
    winding_phase,
)
from .flux import (
    eigenvector_flux,
    expected_flux_spectrum,
    flux_blocks,
    flux_matrix,
    flux_matrix_free,
    flux_projection_pair,
    kitaev_trace,
    relative_index,
    shift_witness,
    strip_row_kernel,
)
from .dynamics import evolve
from .lattice import (
    ChiralRule,
    HaarDraw,
    SField,
    StripSpec,
    field_distance,
    field_from_spec,
    floor_even,
    interpolate_fields,
)
from .model import ExperimentConfig
from .operators import (
    NetworkWindow,
    StateVector,
    Window,
    boundary_phase_check,
    operator_difference_norm,
    parity_apply,
    plaquette_block,
    plaquette_state,
    strip_dense,
)

logger = logging.getLogger(__name__)

CHIRALITY_SAMPLES = 200
LIPSCHITZ_CONSTANT = 2.0 * math.sqrt(2.0)
NORM_STEPS = 1000
HOMOTOPY_STEPS = 10


class CheckResult(BaseModel):
    name: str
    passed: bool
    skipped: bool = False
    value: Optional[float] = None
    detail: str = ""
    error: Optional[dict] = None


class CheckSuite(BaseModel):
    results: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]


@dataclass
class CheckContext:
    config: ExperimentConfig
    field: SField
    strip: StripSpec
    rng: np.random.Generator

    def interior_state(self, window: Window, margin: int = 2) -> StateVector:
        """Random unit state vanishing within ``margin`` rows of the window's top and bottom."""
        psi = StateVector.random(window, self.rng, normalize=False)
        amps = np.array(psi.amps)
        amps[:margin] = 0.0
        amps[-margin:] = 0.0
        return StateVector(window, amps / np.linalg.norm(amps))

    def torus_heights(self) -> tuple[int, int]:
        if self.config.heights is not None:
            return self.config.heights
        # a multiple of the period and of 4, so that -lambda pairing applies
        step = math.lcm(self.field.vertical_period or 2, 4)
        rows = step * max(1, math.ceil(16 / step))
        return -rows // 2 + 1, rows // 2

    def other_seed(self) -> int:
        return (self.config.model.seed + 1) % 2**64

    def plaquette_columns(self) -> dict[str, int]:
        """Plaquette column index j deep inside each phase."""
        return {"left": self.strip.lo // 2 - 2, "right": self.strip.hi // 2 + 2}


def _result(name: str, passed: bool, value: Optional[float] = None, detail: str = "") -> CheckResult:
    return CheckResult(name=name, passed=bool(passed), value=value, detail=detail)


# ---------------------- operator engine ----------------------


def check_chirality(ctx: CheckContext) -> CheckResult:
    f = ctx.field
    worst = 0.0
    for _ in range(CHIRALITY_SAMPLES):
        k2 = 2 * int(ctx.rng.integers(-500, 501))
        left = f.scatter(f.n_left - 1 - int(ctx.rng.integers(0, 1000)), k2)
        right = f.scatter(f.n_right + int(ctx.rng.integers(0, 1000)), k2)
        worst = max(worst, abs(left.r), abs(right.t))
    return _result("chirality", worst <= 1e-12, worst, f"{CHIRALITY_SAMPLES} sites per phase")


def check_unitarity(ctx: CheckContext) -> CheckResult:
    window = Window.strip(ctx.strip, -10, 10)
    engine = NetworkWindow(ctx.field, window)
    worst = 0.0
    for _ in range(max(ctx.config.samples, 100)):
        psi = ctx.interior_state(window)
        u_psi = engine.apply(psi)
        worst = max(worst, abs(u_psi.norm() - psi.norm()), (engine.apply_adjoint(u_psi) - psi).norm())
    return _result("unitarity", worst <= 1e-12, worst, "norm and U*U = 1 on random strip states")


def check_adjoint(ctx: CheckContext) -> CheckResult:
    window = Window.strip(ctx.strip, -10, 10)
    engine = NetworkWindow(ctx.field, window)
    worst = 0.0
    for _ in range(ctx.config.samples):
        phi, psi = ctx.interior_state(window), ctx.interior_state(window)
        worst = max(worst, abs(phi.vdot(engine.apply(psi)) - engine.apply_adjoint(phi).vdot(psi)))
    return _result("adjoint", worst <= 1e-12, worst)


def check_parity(ctx: CheckContext) -> CheckResult:
    window = Window.strip(ctx.strip, -10, 10)
    engine = NetworkWindow(ctx.field, window)
    worst = 0.0
    for _ in range(ctx.config.samples):
        psi = ctx.interior_state(window)
        worst = max(worst, (engine.apply(parity_apply(psi)) + parity_apply(engine.apply(psi))).norm())
    return _result("parity", worst <= 1e-12, worst, "I U I = -U")


def check_boundary(ctx: CheckContext) -> CheckResult:
    report = boundary_phase_check(ctx.field, ctx.strip, (-5, 5))
    return _result("boundary-conditions", True, report.max_phase_defect, f"{len(report.relations)} relations")


def check_lipschitz(ctx: CheckContext) -> CheckResult:
    f, strip = ctx.field, ctx.strip
    draw = ChiralRule(f.n_left, f.n_right, HaarDraw((ctx.config.model.seed + 1) % 2**64))
    worst = 0.0
    for j in strip.columns:
        other = f.with_patches({(j, 0): draw(j, 0)})
        window = Window.strip(strip, -3, 4)
        dist = field_distance(f, other, (strip.lo - 1, strip.hi), (-4, 4))
        if dist == 0.0:
            continue
        worst = max(worst, operator_difference_norm(f, other, window) / dist)
    return _result("lipschitz", worst <= LIPSCHITZ_CONSTANT + 1e-12, worst, "||U - U'|| / d(S, S') <= 2 sqrt 2")


def check_plaquette_spectra(ctx: CheckContext) -> CheckResult:
    worst = 0.0
    for chirality, j in ctx.plaquette_columns().items():
        for k in (0, 1):
            block, eigenvalues = plaquette_block(ctx.field, j, k, chirality)
            worst = max(
                worst,
                eigenvalue_distance(scipy.linalg.eigvals(block), eigenvalues),
                float(np.max(np.abs(np.abs(eigenvalues) - 1.0))),
            )
    return _result("plaquette-spectra", worst <= 1e-12, worst, "e^alpha {1, i, -1, -i} in both phases")


# ---------------------- flux and index ----------------------


def check_flux_trace(ctx: CheckContext) -> CheckResult:
    worst = max(abs(flux_blocks(ctx.field, ctx.strip, c).trace() + 1.0) for c in ctx.config.cuts)
    return _result("flux-trace", worst <= 1e-10, worst, f"cuts {ctx.config.cuts}")


def check_flux_spectrum(ctx: CheckContext) -> CheckResult:
    worst = 0.0
    for c in ctx.config.cuts:
        flux = flux_blocks(ctx.field, ctx.strip, c)
        dense = scipy.linalg.eigvalsh(flux.matrix())
        expected = expected_flux_spectrum(ctx.field, ctx.strip, c)
        # the dense matrix also carries the zero eigenvalues of uncovered sites
        nonzero = np.sort(np.concatenate([expected, np.zeros(len(dense) - len(expected))]))
        worst = max(worst, float(np.max(np.abs(dense - nonzero))))
    return _result("flux-spectrum", worst <= 1e-12, worst)


def check_flux_matrix_free(ctx: CheckContext) -> CheckResult:
    worst = 0.0
    for c in ctx.config.cuts:
        basis, free = flux_matrix_free(ctx.field, ctx.strip, c)
        closed = flux_blocks(ctx.field, ctx.strip, c).matrix(basis)
        worst = max(worst, float(np.max(np.abs(free - closed))))
    return _result("flux-matrix-free", worst <= 1e-12, worst)


def check_relative_index(ctx: CheckContext) -> CheckResult:
    values = set()
    for c in ctx.config.cuts:
        p, q, _ = flux_projection_pair(flux_blocks(ctx.field, ctx.strip, c))
        for method in ("kernel", "trace-power", "intersections"):
            values.add(relative_index(p, q, method=method))
    return _result("relative-index", values == {-1}, None, f"indices {sorted(values)}")


def check_kitaev_rows(ctx: CheckContext) -> CheckResult:
    cuts = ctx.config.cuts
    kernel = strip_row_kernel(ctx.field, ctx.strip, (min(cuts) - 2, max(cuts) + 2))
    worst = max(abs(kitaev_trace(kernel, c) + 1.0) for c in cuts)
    return _result("kitaev-rows", worst <= 1e-10, worst)


def check_shift_witness(ctx: CheckContext) -> CheckResult:
    witness = shift_witness(ctx.field, ctx.strip, ctx.config.orbit_depth)
    ok = witness.residual <= 1e-10 and witness.f_rank <= witness.f_rank_bound
    return _result(
        "shift-witness", ok, witness.residual, f"depth {witness.depth}, rank F {witness.f_rank} <= {witness.f_rank_bound}"
    )


def check_finite_rank_stability(ctx: CheckContext) -> CheckResult:
    f, strip, cuts = ctx.field, ctx.strip, ctx.config.cuts
    draw = ChiralRule(f.n_left, f.n_right, HaarDraw(ctx.other_seed()))
    rows = range(floor_even(min(cuts)) - 2, max(cuts) + 3, 2)
    worst = 0.0
    for j in strip.columns:
        for k2 in rows:
            patched = f.with_patches({(j, k2): draw(j, k2)})
            worst = max(worst, max(abs(flux_blocks(patched, strip, c).trace() + 1.0) for c in cuts))
    return _result("finite-rank-stability", worst <= 1e-10, worst, f"{strip.width * len(rows)} single-node replacements")


def check_homotopy(ctx: CheckContext) -> CheckResult:
    other = field_from_spec(ctx.config.model.model_copy(update={"seed": ctx.other_seed()}))
    worst = 0.0
    for s in np.linspace(0.0, 1.0, HOMOTOPY_STEPS + 1):
        field = interpolate_fields(ctx.field, other, float(s))
        worst = max(worst, max(abs(flux_blocks(field, ctx.strip, c).trace() + 1.0) for c in ctx.config.cuts))
    return _result("homotopy", worst <= 1e-10, worst, f"{HOMOTOPY_STEPS}-step interpolation to seed {ctx.other_seed()}")


def check_eigenvector_flux(ctx: CheckContext) -> CheckResult:
    heights = ctx.torus_heights()
    dense = strip_dense(ctx.field, ctx.strip, heights, "torus")
    value = eigenvector_flux(dense, flux_matrix(dense, 1))
    rows = heights[1] - heights[0] + 1
    detail = f"torus rows {list(heights)}"
    ok = value <= 1e-9
    if rows % 4 == 0:
        pairing = dense.parity_pairing_error()
        ok = ok and pairing <= 1e-9
        detail += f", +-lambda pairing {pairing:.3g}"
    return _result("eigenvector-flux", ok, value, detail)


# ---------------------- fiber ----------------------


def _needs_period_two(name: str, ctx: CheckContext) -> Optional[CheckResult]:
    if ctx.field.vertical_period == 2:
        return None
    return CheckResult(name=name, passed=True, skipped=True, detail="needs vertical_period = 2")


def check_windings(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("windings", ctx)
    if skipped:
        return skipped
    kernel = fiber_kernel(ctx.field, ctx.strip)
    kernel.certify_unitary()
    exact, phase = winding_exact(kernel), winding_phase(kernel, max(64, ctx.config.grid_size // 4))
    kitaev = kitaev_trace(kernel, 0)
    ok = exact == phase == -1 and abs(kitaev + 1.0) <= 1e-10
    return _result("windings", ok, kitaev, f"exact {exact}, phase {phase}, kitaev {kitaev:.12g}")


def check_kitaev_powers(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("kitaev-powers", ctx)
    if skipped:
        return skipped
    kernel = fiber_kernel(ctx.field, ctx.strip)
    base = kitaev_trace(kernel, 0)
    worst = max(abs(kitaev_trace(kernel.power(n), 0) - n * base) for n in (1, 2, 3))
    ok = worst <= 1e-9 and abs(base + 1.0) <= 1e-10
    return _result("kitaev-powers", ok, worst, "trace of U^n kernels = n x trace of U, n = 1..3")


def check_band_coverage(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("band-coverage", ctx)
    if skipped:
        return skipped
    bands = band_structure(fiber_kernel(ctx.field, ctx.strip), max(128, ctx.config.grid_size))
    return _result("band-coverage", bands.coverage.covered, bands.coverage.max_gap, bands.coverage.method)


def check_walk_pictures(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("walk-pictures", ctx)
    if skipped:
        return skipped
    kernel = fiber_kernel(ctx.field, ctx.strip)
    worst = 0.0
    for y in np.linspace(0.0, 2 * math.pi, 16, endpoint=False):
        walk = mqw_matrix(ctx.field, y, ctx.strip)
        worst = max(worst, eigenvalue_distance(walk.eigenvalues(), scipy.linalg.eigvals(kernel.fourier(y))))
    return _result("walk-pictures", worst <= 1e-9, worst, "sigma(M_I(y)) = sigma(fiber symbol)")


def check_det_gauge(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("det-gauge", ctx)
    if skipped:
        return skipped
    normalized, _ = gauge_normalize(ctx.field, ctx.strip)
    ys = np.linspace(0.0, 2 * math.pi, 256, endpoint=False)
    values = np.array([mqw_matrix(normalized, y, ctx.strip).det() * np.exp(1j * y) for y in ys])
    spread = float(np.max(np.abs(values - values[0])))
    return _result("det-gauge", spread <= 1e-10, spread, "det M_I(y) e^{iy} constant")


def check_gauge_invariance(ctx: CheckContext) -> CheckResult:
    skipped = _needs_period_two("gauge-invariance", ctx)
    if skipped:
        return skipped
    normalized, _ = gauge_normalize(ctx.field, ctx.strip)
    before = fiber_kernel(ctx.field, ctx.strip)
    after = fiber_kernel(normalized, ctx.strip)
    n_y = max(128, ctx.config.grid_size // 4)
    windings = [winding_exact(before), winding_exact(after), winding_phase(before, n_y), winding_phase(after, n_y)]
    verdicts = {band_structure(k, max(128, ctx.config.grid_size)).coverage.covered for k in (before, after)}
    drift = 0.0
    for y in np.linspace(0.0, 2 * math.pi, 16, endpoint=False):
        drift = max(
            drift,
            eigenvalue_distance(
                mqw_matrix(ctx.field, y, ctx.strip).eigenvalues(), mqw_matrix(normalized, y, ctx.strip).eigenvalues()
            ),
        )
    ok = len(set(windings)) == 1 and len(verdicts) == 1 and drift <= 1e-9
    return _result("gauge-invariance", ok, drift, f"windings {windings}, coverage {sorted(verdicts)}")


# ---------------------- dynamics ----------------------


def check_norm_conservation(ctx: CheckContext) -> CheckResult:
    steps = max(ctx.config.steps, NORM_STEPS)
    window = Window.strip(ctx.strip, -steps - 3, steps + 3)
    trace, _ = evolve(ctx.field, StateVector.basis(window, ctx.strip.lo, 0), steps)
    drift = max(abs(n - 1.0) for n in trace.column("norm"))
    return _result("norm-conservation", drift <= 1e-10, drift, f"{steps} steps from ({ctx.strip.lo}, 0)")


def check_bulk_confinement(ctx: CheckContext) -> CheckResult:
    steps = max(ctx.config.steps, 4)
    j = ctx.plaquette_columns()["right"]
    window = Window(2 * j - 3, 2 * j + 2, -3, 2)
    _, eigenvalues = plaquette_block(ctx.field, j, 0, "right")
    psi0 = plaquette_state(ctx.field, window, j, 0, "right")
    trace, psi = evolve(ctx.field, psi0, steps)
    boxes = {(r.jmin, r.jmax, r.kmin, r.kmax) for r in trace.records}
    residual = (psi - eigenvalues[0] ** steps * psi0).norm()
    ok = len(boxes) == 1 and residual <= 1e-10
    return _result("bulk-confinement", ok, residual, f"support boxes {sorted(boxes)} over {steps} steps")


CHECKS: List[Callable[[CheckContext], CheckResult]] = [
    check_chirality,
    check_unitarity,
    check_adjoint,
    check_parity,
    check_boundary,
    check_lipschitz,
    check_plaquette_spectra,
    check_flux_trace,
    check_flux_spectrum,
    check_flux_matrix_free,
    check_relative_index,
    check_kitaev_rows,
    check_shift_witness,
    check_finite_rank_stability,
    check_homotopy,
    check_eigenvector_flux,
    check_windings,
    check_kitaev_powers,
    check_band_coverage,
    check_walk_pictures,
    check_det_gauge,
    check_gauge_invariance,
    check_norm_conservation,
    check_bulk_confinement,
]


def run_checks(config: ExperimentConfig) -> CheckSuite:
    """Run every invariant check; field construction errors propagate to the caller."""
    field = field_from_spec(config.model)
    ctx = CheckContext(config, field, field.strip, np.random.default_rng(config.model.seed))
    suite = CheckSuite()
    for check in CHECKS:
        name = check.__name__.removeprefix("check_").replace("_", "-")
        try:
            result = check(ctx)
        except CCLabError as exc:
            logger.debug("check %s raised %r", name, exc)
            result = CheckResult(name=name, passed=False, detail=str(exc), error=exc.payload())
        suite.results.append(result)
    return suite
