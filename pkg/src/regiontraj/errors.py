class ParseError(ValueError):
    """Malformed input file (message names the offending line)."""


class DataError(ValueError):
    """Structurally valid input that violates dataset assumptions."""


class ConfigError(ValueError):
    """Bad run configuration or degenerate geometry."""
