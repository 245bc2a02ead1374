"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class RangeSegError(Exception):
    exit_code = 1


class ConfigError(RangeSegError):
    exit_code = 3


class DatasetError(RangeSegError):
    exit_code = 4


class MalformedScanError(DatasetError):
    pass


class MalformedLabelError(DatasetError):
    pass


class CorruptDataError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class PairingError(RangeSegError):
    exit_code = 5


class FixtureError(RangeSegError):
    exit_code = 6


class NumericError(RangeSegError):
    exit_code = 7


class ShapeError(RangeSegError, ValueError):
    exit_code = 6


class DegeneratePointError(RangeSegError, ValueError):
    pass


class StateError(RangeSegError):
    pass
