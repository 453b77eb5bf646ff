from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .errors import NotUnitaryError
from .flux import HalfSpaceProjection
from .lattice import SField
from .operators import NetworkWindow, StateVector

logger = logging.getLogger(__name__)

NORM_TOL = 1e-10


class TransportRecord(BaseModel):
    t: int
    mean_k: float
    var_k: float
    upper_weight: float
    norm: float
    jmin: int
    jmax: int
    kmin: int
    kmax: int

    @field_validator("upper_weight")
    @classmethod
    def weight_in_unit_interval(cls, v: float) -> float:
        if not -1e-12 <= v <= 1.0 + 1e-12:
            raise ValueError(f"upper_weight {v} outside [0, 1]")
        return min(max(v, 0.0), 1.0)


class TransportTrace(BaseModel):
    cut: int = 1
    records: list[TransportRecord] = Field(default_factory=list)

    def column(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.records]


def _record(t: int, psi: StateVector, cut: int) -> TransportRecord:
    _, k = psi.window.coordinates()
    prob = np.abs(psi.amps) ** 2
    norm2 = float(prob.sum())
    if norm2 == 0.0:
        raise ValueError("cannot evolve the zero state")
    mean = float((prob * k).sum()) / norm2
    var = float((prob * (k - mean) ** 2).sum()) / norm2
    box = psi.support_box()
    return TransportRecord(
        t=t,
        mean_k=mean,
        var_k=var,
        upper_weight=HalfSpaceProjection(cut).apply(psi).norm() ** 2 / norm2,
        norm=norm2**0.5,
        jmin=box[0],
        jmax=box[1],
        kmin=box[2],
        kmax=box[3],
    )


def evolve(field: SField, psi0: StateVector, steps: int, cut: int = 1) -> tuple[TransportTrace, StateVector]:
    """
    Iterate psi_{t+1} = U psi_t for ``steps`` steps on the window of ``psi0``.

    Raises TruncationLeakError as soon as the state reaches an open edge.
    """
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    engine = NetworkWindow(field, psi0.window)
    psi = psi0
    trace = TransportTrace(cut=cut, records=[_record(0, psi, cut)])
    norm0 = trace.records[0].norm
    for t in range(1, steps + 1):
        psi = engine.apply(psi)
        rec = _record(t, psi, cut)
        if abs(rec.norm - norm0) > NORM_TOL * max(norm0, 1.0):
            raise NotUnitaryError(f"norm drifted from {norm0:.15g} to {rec.norm:.15g} at t={t}")
        trace.records.append(rec)
    logger.debug("evolved %d steps on window %s", steps, psi0.window.bounds)
    return trace, psi


@dataclass(eq=False)
class Autocorrelation:
    amplitudes: np.ndarray  # a_n = <psi0, U^n psi0>, n = 0..T
    spectrum: np.ndarray  # |DFT(a)|

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.amplitudes)


def autocorrelation_spectrum(field: SField, psi0: StateVector, steps: int) -> Autocorrelation:
    if steps < 0:
        raise ValueError(f"steps must be non-negative, got {steps}")
    engine = NetworkWindow(field, psi0.window)
    psi = psi0
    amps = [psi0.vdot(psi0)]
    for _ in range(steps):
        psi = engine.apply(psi)
        amps.append(psi0.vdot(psi))
    a = np.array(amps, dtype=complex)
    return Autocorrelation(a, np.abs(np.fft.fft(a)))
