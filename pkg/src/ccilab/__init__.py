from .version import __version__
from .errors import CCLabError
from .lattice import ScatterMatrix, SField, StripSpec, LatticeSite, build_scatter, field_from_spec
from .operators import StateVector, Window, DenseUnitary, apply_u, apply_u_adjoint

__all__ = [
    "__version__",
    "CCLabError",
    "ScatterMatrix",
    "SField",
    "StripSpec",
    "LatticeSite",
    "build_scatter",
    "field_from_spec",
    "StateVector",
    "Window",
    "DenseUnitary",
    "apply_u",
    "apply_u_adjoint",
]
