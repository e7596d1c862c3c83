"""Exception hierarchy shared across the toolkit."""


class MpsegError(Exception):
    """Base class for all toolkit errors."""


class DataError(MpsegError):
    """Malformed or inconsistent data: bad headers, size mismatches,
    out-of-range labels, degenerate inputs."""


class ProtocolError(MpsegError):
    """Violation of the external slice-segmenter plugin contract."""
