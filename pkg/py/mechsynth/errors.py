"""Exception roots shared across the package."""


class MechsynthError(Exception):
    """Base class for every error raised by mechsynth."""


class CapExceeded(MechsynthError):
    """An enumeration or brute-force problem is larger than its configured cap."""

    def __init__(self, what: str, size: float, cap: float):
        super().__init__(f"{what}: size {size:g} exceeds cap {cap:g}")
        self.what = what
        self.size = size
        self.cap = cap
