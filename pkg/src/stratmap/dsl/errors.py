class DslError(ValueError):
    """Base for program validation failures; ``feedback()`` is what a repair prompt sees."""

    kind = "dsl_error"

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        where = f"line {line}, col {col}: " if line is not None else ""
        super().__init__(where + message)

    def feedback(self) -> str:
        return f"{self.kind}: {self}"


class DslSyntaxError(DslError):
    kind = "syntax_error"


class UnknownIndicator(DslError):
    kind = "unknown_indicator"


class UnboundReference(DslError):
    kind = "unbound_reference"


class ParamOutOfRange(DslError):
    kind = "param_out_of_range"


class UnknownCategory(DslError):
    kind = "unknown_category"


class EvaluationError(RuntimeError):
    """Raised while computing targets; ``path`` names the offending rule node."""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(f"{path}: {message}")
