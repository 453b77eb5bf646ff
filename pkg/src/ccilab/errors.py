from __future__ import annotations

from typing import Optional


class CCLabError(ValueError):
    """Base class for every domain failure raised by ccilab."""

    def payload(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ScatterParameterError(CCLabError):
    """(q, r, t) too far from S^1 x S^3 to be normalized."""


class SiteError(CCLabError):
    """A failure tied to one lattice site, reported with the error."""

    def __init__(self, message: str, site: Optional[tuple[int, int]] = None):
        super().__init__(message)
        self.site = site

    def payload(self) -> dict:
        data = super().payload()
        if self.site is not None:
            data["site"] = list(self.site)
        return data


class ChiralityError(SiteError):
    pass


class WindowSiteError(SiteError):
    """A site requested on a window that does not contain it."""


class PeriodError(CCLabError):
    """Torus height incompatible with the field's vertical period."""


class InvarianceError(CCLabError):
    """A window declared closed is not invariant under the network."""


class TruncationLeakError(CCLabError):
    """State support touches an open window boundary."""


class BoundaryConditionError(CCLabError):
    pass


class TranslationInvarianceError(CCLabError):
    pass


class NotUnitaryError(CCLabError):
    pass


class EigenResidualError(CCLabError):
    pass


class WindingError(CCLabError):
    pass


class BandMatchingError(CCLabError):
    pass


class KernelSupportError(CCLabError):
    pass
