"""Exception types shared across the package."""


class PmsgctrlError(Exception):
    """Base class for package errors."""


class NonPositiveVoltage(PmsgctrlError):
    """Bus voltage at or below the model floor; the 1/v_dc term is meaningless there."""


class VoltageFloor(PmsgctrlError):
    """Controller asked to modulate against a bus voltage below the floor."""


class UncontrollableAxis(PmsgctrlError):
    """Axis input gain is zero; no feedback can move the current."""


class UnstableRequest(PmsgctrlError):
    """Requested closed-loop pole is not in the open left half plane."""


class SimulationDiverged(PmsgctrlError):
    """Closed-loop run left the physically meaningful voltage window."""


class SegmentTooShort(PmsgctrlError):
    """A load segment has no settled window to compute steady metrics from."""


class ConfigError(PmsgctrlError):
    """Scenario configuration file is malformed; message names the key/line."""
