"""Exception types shared across the package."""


class D2DCacheError(Exception):
    """Base class for all package errors."""


class InvalidProfileError(D2DCacheError):
    """A demand or mobility profile violates a structural invariant."""


class InvalidArgumentError(D2DCacheError):
    """An operation was called with arguments outside its contract."""


class CapacityError(D2DCacheError):
    """Exact enumeration was requested beyond the subset-enumeration cap.

    Callers should fall back to the greedy policy (centralized search) or
    Monte Carlo estimation (load evaluation).
    """
