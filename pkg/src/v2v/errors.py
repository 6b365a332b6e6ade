"""Exception hierarchy shared across the package."""


class V2VError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(V2VError, ValueError):
    pass


class UnsupportedGlyphError(V2VError, ValueError):
    def __init__(self, codepoint: int, position: int | None = None):
        self.codepoint = codepoint
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"no glyph for codepoint U+{codepoint:04X}{where}")


class SpecValidationError(V2VError, ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class UnknownColorError(V2VError, KeyError):
    def __init__(self, name: str, suggestion: str):
        self.name = name
        self.suggestion = suggestion
        super().__init__(f"unknown color {name!r}; nearest palette color is {suggestion!r}")

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class PatchSizeError(V2VError, ValueError):
    pass


class TokenizerError(V2VError, ValueError):
    pass


class CapacityError(V2VError, ValueError):
    def __init__(self, required: int, available: int, what: str = "sequence"):
        self.required = required
        self.available = available
        super().__init__(f"{what} needs {required} positions but only {available} are available")


class LayerError(V2VError, ValueError):
    pass


class ModeError(V2VError, ValueError):
    pass


class ConditioningError(V2VError, ValueError):
    pass


class NumericFailureError(V2VError, FloatingPointError):
    pass


class LengthError(V2VError, ValueError):
    pass


class StageError(V2VError):
    """Wraps an error raised inside a pipeline stage, keeping the stage name."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


class LabelingError(V2VError, ValueError):
    pass


class DegenerateInputError(V2VError, ValueError):
    pass


class RetrievalError(V2VError, ValueError):
    pass


class BenchSpecError(V2VError, ValueError):
    pass


class ScoreRangeError(V2VError, ValueError):
    pass


class CompletenessError(V2VError, ValueError):
    def __init__(self, missing, duplicates=()):
        self.missing = list(missing)
        self.duplicates = list(duplicates)
        parts = []
        if self.missing:
            shown = ", ".join(map(str, self.missing[:10]))
            more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
            parts.append(f"missing {len(self.missing)} samples: {shown}{more}")
        if self.duplicates:
            parts.append(f"duplicated samples: {', '.join(map(str, self.duplicates[:10]))}")
        super().__init__("; ".join(parts) or "incomplete run")


class UnsupportedCategoryError(V2VError, ValueError):
    pass


class JudgeParseError(V2VError):
    def __init__(self, message: str, raw: str):
        self.raw = raw
        super().__init__(f"{message}; raw payload: {raw!r}")


class TransportError(V2VError):
    pass
