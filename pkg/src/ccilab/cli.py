from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Any, Callable, Optional

import yaml
from pydantic import ValidationError

from .checks import run_checks
from .dynamics import evolve
from .errors import CCLabError
from .fiber import band_structure, fiber_kernel, winding_exact, winding_phase
from .flux import (
    flux_blocks,
    flux_projection_pair,
    flux_spectrum,
    kitaev_trace,
    relative_index,
    shift_witness,
    strip_row_kernel,
)
from .io import load_config, render_csv, render_json, save_config, write_text
from .lattice import SField, field_from_spec
from .model import ExperimentConfig, ModelConfig
from .operators import StateVector, Window
from .version import __version__

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = "ccilab.yaml"
TRANSPORT_COLUMNS = ["t", "mean_k", "var_k", "upper_weight", "jmin", "jmax", "kmin", "kmax"]


@dataclass
class Report:
    command: str
    data: dict
    header: list[str]
    rows: list[list[Any]] = dc_field(default_factory=list)
    exit_code: int = 0

    def render(self, fmt: str) -> str:
        if fmt == "csv":
            return render_csv(self.header, self.rows)
        return render_json({"command": self.command, **self.data})


def _strip_info(field: SField) -> dict:
    strip = field.strip
    return {"n_left": strip.n_left, "n_right": strip.n_right, "lo": strip.lo, "hi": strip.hi}


# ---------------------- flux ----------------------


def report_flux(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    reports = [flux_spectrum(flux_blocks(field, field.strip, c)) for c in config.cuts]
    rows = [[r.cut, e.column, e.eigenvalue] for r in reports for e in r.entries]
    data = {"strip": _strip_info(field), "reports": [r.model_dump() for r in reports]}
    return Report("flux", data, ["cut", "column", "eigenvalue"], rows)


# ---------------------- index ----------------------


def report_index(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    strip = field.strip
    kernel = strip_row_kernel(field, strip, (min(config.cuts) - 2, max(config.cuts) + 2))
    entries = []
    for c in config.cuts:
        p, q, _ = flux_projection_pair(flux_blocks(field, strip, c))
        entries.append(
            {
                "cut": c,
                "kitaev_trace": kitaev_trace(kernel, c),
                "index_kernel": relative_index(p, q, method="kernel"),
                "index_trace_power": relative_index(p, q, method="trace-power"),
                "index_intersections": relative_index(p, q, method="intersections"),
            }
        )
    data: dict[str, Any] = {"strip": _strip_info(field), "cuts": entries}
    if field.vertical_period == 2:
        fiber = fiber_kernel(field, strip)
        data["fiber_kitaev"] = {str(n): kitaev_trace(fiber.power(n), 0) for n in (1, 2, 3)}
    header = list(entries[0])
    return Report("index", data, header, [[e[h] for h in header] for e in entries])


# ---------------------- winding ----------------------


def report_winding(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    kernel = fiber_kernel(field, field.strip)
    kernel.certify_unitary()
    exact = winding_exact(kernel)
    phase = winding_phase(kernel, config.grid_size)
    data = {"exact": exact, "phase": phase, "agree": exact == phase}
    return Report("winding", data, ["exact", "phase", "agree"], [[exact, phase, exact == phase]])


# ---------------------- bands ----------------------


def report_bands(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    bands = band_structure(fiber_kernel(field, field.strip), max(128, config.grid_size))
    data = {
        "coverage": dataclasses.asdict(bands.coverage),
        "spectral_flow": bands.spectral_flow,
        "degeneracies": [list(d) for d in bands.degeneracies],
        "points": [list(r) for r in bands.rows()],
    }
    return Report("bands", data, ["y", "branch_id", "eigenphase"], [list(r) for r in bands.rows()])


# ---------------------- shift-witness ----------------------


def report_shift_witness(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    witness = shift_witness(field, field.strip, config.orbit_depth)
    data = {
        "seed_site": list(witness.seed_site),
        "depth": witness.depth,
        "residual": witness.residual,
        "orthonormal": witness.residual <= 1e-10,
        "f_rank": witness.f_rank,
        "f_rank_bound": witness.f_rank_bound,
    }
    header = ["depth", "residual", "orthonormal", "f_rank", "f_rank_bound"]
    return Report("shift-witness", data, header, [[data[h] for h in header]])


# ---------------------- evolve ----------------------


def report_evolve(config: ExperimentConfig) -> Report:
    field = field_from_spec(config.model)
    strip = field.strip
    j, k = config.initial_site or (strip.lo, 0)
    if config.window is not None:
        window = Window(*config.window)
    else:
        window = Window.strip(strip, k - config.steps - 2, k + config.steps + 2)
    trace, _ = evolve(field, StateVector.basis(window, j, k), config.steps)
    rows = [[getattr(r, c) for c in TRANSPORT_COLUMNS] for r in trace.records]
    return Report("evolve", trace.model_dump(), TRANSPORT_COLUMNS, rows)


# ---------------------- check ----------------------


def report_check(config: ExperimentConfig) -> Report:
    suite = run_checks(config)
    rows = [[r.name, r.passed, r.skipped, r.value, r.detail] for r in suite.results]
    data = {"passed": suite.passed, "results": [r.model_dump() for r in suite.results]}
    return Report("check", data, ["name", "passed", "skipped", "value", "detail"], rows, 0 if suite.passed else 1)


COMMANDS: dict[str, Callable[[ExperimentConfig], Report]] = {
    "flux": report_flux,
    "index": report_index,
    "winding": report_winding,
    "bands": report_bands,
    "shift-witness": report_shift_witness,
    "evolve": report_evolve,
    "check": report_check,
}


# ---------------------- init ----------------------


def starter_config() -> ExperimentConfig:
    """Sharp interface, vertically translation invariant: every command applies."""
    return ExperimentConfig(model=ModelConfig(n_left=0, n_right=0, seed=0, vertical_period=2))


def _run_init(out: Optional[str]) -> int:
    path = Path(out or DEFAULT_CONFIG)
    if path.exists():
        print(f"{path} already exists; refusing to overwrite.", file=sys.stderr)
        return 1
    save_config(starter_config(), path)
    print(f"Initialized experiment config at {path}")
    return 0


# ---------------------- entry point ----------------------


def _emit_error(payload: dict) -> None:
    print(json.dumps(payload), file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=DEFAULT_CONFIG, help=f"Experiment config (default: {DEFAULT_CONFIG})")
    common.add_argument("--out", type=str, default=None, help="Write the report here instead of stdout")
    common.add_argument("--format", type=str, choices=["csv", "json"], default=None, help="Report format (default: from config)")
    common.add_argument("--verbose", action="store_true", help="Debug logging on stderr")

    parser = argparse.ArgumentParser(prog="ccilab", description="Numerical lab for chiral-interface network unitaries.")
    parser.add_argument("--version", action="version", version=f"ccilab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("init", parents=[common], help="Write a starter experiment config")
    sub.add_parser("flux", parents=[common], help="Flux spectra and traces over the configured cuts")
    sub.add_parser("index", parents=[common], help="Kitaev trace and relative indices")
    sub.add_parser("winding", parents=[common], help="Exact and phase-unwrapped winding of the fiber")
    sub.add_parser("bands", parents=[common], help="Band structure and circle coverage")
    sub.add_parser("shift-witness", parents=[common], help="Gram matrix of the wandering orbit")
    sub.add_parser("evolve", parents=[common], help="Transport trace of a site-localized packet")
    sub.add_parser("check", parents=[common], help="Full invariant suite")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    if args.command == "init":
        return _run_init(args.out)

    try:
        config = load_config(args.config)
    except FileNotFoundError:
        _emit_error({"error": "FileNotFoundError", "message": f"{args.config} not found"})
        return 2
    except ValidationError as exc:
        _emit_error({"error": "ValidationError", "message": str(exc), "details": json.loads(exc.json())})
        return 2
    except (ValueError, yaml.YAMLError) as exc:
        _emit_error({"error": type(exc).__name__, "message": str(exc)})
        return 2

    try:
        report = COMMANDS[args.command](config)
    except CCLabError as exc:
        _emit_error(exc.payload())
        return 1
    except ValueError as exc:
        _emit_error({"error": type(exc).__name__, "message": str(exc)})
        return 1

    text = report.render(args.format or config.format)
    out = args.out or config.output
    if out:
        write_text(text, out)
        print(f"Wrote {args.command} report to {out}")
    else:
        sys.stdout.write(text)
    return report.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
