"""Exception types shared across the tool."""


class RRError(Exception):
    """Base class for all tool errors."""


class MalformedBinary(RRError):
    def __init__(self, offset: int, reason: str):
        super().__init__(f"malformed binary at offset {offset:#x}: {reason}")
        self.offset = offset
        self.reason = reason


class UnsupportedFeature(RRError):
    def __init__(self, feature: str, detail: str = ""):
        msg = f"unsupported feature: {feature}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.feature = feature


class MultiMemory(UnsupportedFeature):
    def __init__(self, count: int):
        super().__init__("multi-memory", f"module declares {count} memories")
        self.count = count


class NotDefinedFunction(RRError):
    def __init__(self, index: int):
        super().__init__(f"function index {index} is imported, not defined")
        self.index = index


class UnmappedIndex(RRError):
    def __init__(self, space: str, index: int):
        super().__init__(f"no mapping for {space} index {index}")
        self.space = space
        self.index = index


class InvalidTarget(RRError):
    def __init__(self, index: int, reason: str):
        super().__init__(f"invalid target function {index}: {reason}")
        self.index = index


class InstantiationFailed(RRError):
    pass


class ExecutionFailed(RRError):
    pass


class TypeUnavailable(RRError):
    """A recorded boundary value cannot be expressed in the declared signature."""


class UnresolvedImport(RRError):
    def __init__(self, module: str, name: str, kind: str):
        super().__init__(f"import {module}:{name} ({kind}) has no matching export")
        self.module = module
        self.name = name
        self.kind = kind


class TypeMismatch(RRError):
    def __init__(self, module: str, name: str, detail: str):
        super().__init__(f"import {module}:{name} type mismatch: {detail}")
        self.module = module
        self.name = name


class OracleCrashed(RRError):
    """The oracle itself failed to start; the whole reduction aborts."""


class InputInvalid(RRError):
    pass


class InputNotInteresting(RRError):
    pass


class ExternalReducerFailed(RRError):
    """Hybrid mode external stage failed; downgraded to a warning by callers."""
