"""Exception types shared across the package."""


class MaploopError(Exception):
    """Base class for all package errors."""


class GeometryError(MaploopError):
    """Invalid geometry (e.g. polygon with fewer than 3 vertices or zero area)."""


class ContractError(MaploopError):
    """An operation precondition was violated."""


class MissingTargetError(MaploopError):
    """An edit referenced a footprint id that does not exist."""


class SessionClosedError(MaploopError):
    """The session already met its stopping criterion."""


class ProtocolError(MaploopError):
    """Out-of-order interaction, e.g. submitting a tile that was never served."""
