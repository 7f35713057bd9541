class LSEmbedError(Exception):
    """Base class for every error raised by lsembed."""


class InputError(LSEmbedError, ValueError):
    """Bad ids, shapes or ranges handed to an operation."""


class ValidationError(LSEmbedError, ValueError):
    """A configuration or label structure violates its invariants."""


class ConfigError(ValidationError):
    def __init__(self, message, path=None, line=None, column=None, key_path=None):
        self.message = message
        self.key_path = key_path
        self.path = path
        self.line = line
        self.column = column
        location = ""
        if path is not None:
            location = str(path)
            if line is not None:
                location += f":{line}:{column}"
            location += ": "
        super().__init__(location + message)


class DegenerateEmbeddingError(LSEmbedError, ArithmeticError):
    """The pre-normalization embedding is the zero vector."""


class TrainingDivergedError(LSEmbedError, RuntimeError):
    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}


class GradcheckError(LSEmbedError, AssertionError):
    def __init__(self, component, max_rel_error, tolerance):
        self.component = component
        self.max_rel_error = max_rel_error
        self.tolerance = tolerance
        super().__init__(
            f"gradient check failed for '{component}': "
            f"max relative error {max_rel_error:.3e} > {tolerance:.1e}"
        )
