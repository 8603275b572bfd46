"""Exception types shared across the package.

Every error the CLI surfaces carries a short machine-parsable ``code`` so
command failures can be matched without scraping human text.
"""


class F2CError(Exception):
    """Base class for all structured errors raised by this package."""

    code = "error"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ParseError(F2CError):
    """A dataset file violates its documented layout."""

    code = "parse"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TooShortError(ParseError):
    """Sequence has fewer than 3 frames; central differences need T >= 3."""

    code = "too-short"


class ConfigError(F2CError):
    """A configuration file or option is invalid or inconsistent."""

    code = "config"


class FormatError(F2CError):
    """A binary artifact (cache, checkpoint, image file) is malformed."""

    code = "format"
