"""Exception hierarchy shared by the codec, the prior files and the CLI."""


class CpgdError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(CpgdError, ValueError):
    """A tensor or plane does not have the expected shape."""


class ConfigError(CpgdError, ValueError):
    """Invalid run or codec configuration."""


class DataError(CpgdError):
    """Input data cannot be used (bad files, inconsistent clips)."""


class FormatError(DataError, ValueError):
    """
    Malformed binary data (CPV1 streams, sidecars, parameter files).

    :param message: Human readable description
    :type message: str
    :param offset: Byte offset where parsing failed
    :type offset: int
    """

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} at byte {offset}"
        super().__init__(message)


class TruncatedStreamError(FormatError):
    """The stream ended before a frame payload was complete."""

    def __init__(self, frame_index, missing, offset):
        self.frame_index = frame_index
        self.missing = missing
        super().__init__(
            f"stream truncated in frame {frame_index}: {missing} more byte(s) needed",
            offset,
        )


class MissingPriorError(DataError, FileNotFoundError):
    """An expected sidecar or input file is absent."""

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing prior file: {self.path}")

    def __str__(self):
        return f"missing prior file: {self.path}"
