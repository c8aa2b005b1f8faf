"""In-memory model of a WebAssembly module.

Function bodies are kept as raw instruction byte sequences (including the
terminating ``end``); the pipeline only ever remaps index immediates and
measures sizes, so preserving the input bytes maximizes fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from . import leb
from .errors import NotDefinedFunction


@dataclass(frozen=True)
class FuncType:
    params: tuple[str, ...]
    results: tuple[str, ...]

    def __str__(self) -> str:
        return f"[{' '.join(self.params)}] -> [{' '.join(self.results)}]"


@dataclass(frozen=True)
class GlobalType:
    valtype: str
    mutable: bool


@dataclass(frozen=True)
class Limits:
    min: int
    max: int | None = None


@dataclass
class Import:
    module: str
    name: str
    kind: str  # "func" | "table" | "memory" | "global"
    # func -> type index, table -> TableDef, memory -> MemoryDef, global -> GlobalType
    desc: object

    @property
    def type_index(self) -> int:
        assert self.kind == "func"
        return self.desc  # type: ignore[return-value]


@dataclass
class FunctionDef:
    type_index: int
    # Raw (count, valtype) runs exactly as encoded in the locals vector.
    locals: list[tuple[int, str]]
    # Instruction bytes including the final end opcode.
    body: bytes

    def local_types(self) -> list[str]:
        out: list[str] = []
        for count, vt in self.locals:
            out.extend([vt] * count)
        return out


@dataclass
class GlobalDef:
    valtype: str
    mutable: bool
    init: bytes  # constant expression bytes including end


@dataclass
class TableDef:
    reftype: str
    limits: Limits


@dataclass
class MemoryDef:
    limits: Limits  # in 64 KiB pages


@dataclass
class ExportDesc:
    name: str
    kind: str
    index: int


@dataclass
class DataSegment:
    mode: str  # "active" | "passive"
    memory_index: int
    offset: bytes | None  # constant expression, None when passive
    data: bytes


@dataclass
class ElemSegment:
    mode: str  # "active" | "passive" | "declarative"
    table_index: int
    offset: bytes | None
    reftype: str
    # None entries are null refs (only representable in expression form).
    func_indices: list[int | None]
    uses_exprs: bool = False


@dataclass
class CustomSection:
    name: str
    data: bytes
    # Id of the last non-custom section preceding this one (0 = before all).
    after_section: int = 0


@dataclass
class WasmModule:
    types: list[FuncType] = field(default_factory=list)
    imports: list[Import] = field(default_factory=list)
    functions: list[FunctionDef] = field(default_factory=list)
    tables: list[TableDef] = field(default_factory=list)
    memories: list[MemoryDef] = field(default_factory=list)
    globals: list[GlobalDef] = field(default_factory=list)
    exports: list[ExportDesc] = field(default_factory=list)
    start: int | None = None
    elem_segments: list[ElemSegment] = field(default_factory=list)
    data_segments: list[DataSegment] = field(default_factory=list)
    custom_sections: list[CustomSection] = field(default_factory=list)
    has_data_count: bool = False

    # -- index space helpers (imports come first in each space) --

    def imported(self, kind: str) -> list[Import]:
        return [im for im in self.imports if im.kind == kind]

    @property
    def num_imported_functions(self) -> int:
        return sum(1 for im in self.imports if im.kind == "func")

    @property
    def num_functions(self) -> int:
        return self.num_imported_functions + len(self.functions)

    def is_defined_function(self, idx: int) -> bool:
        return self.num_imported_functions <= idx < self.num_functions

    def defined_function(self, idx: int) -> FunctionDef:
        if not self.is_defined_function(idx):
            raise NotDefinedFunction(idx)
        return self.functions[idx - self.num_imported_functions]

    def defined_function_indices(self) -> list[int]:
        base = self.num_imported_functions
        return list(range(base, base + len(self.functions)))

    def func_type(self, idx: int) -> FuncType:
        imports = self.imported("func")
        if idx < len(imports):
            return self.types[imports[idx].type_index]
        return self.types[self.functions[idx - len(imports)].type_index]

    def global_type(self, idx: int) -> GlobalType:
        imports = self.imported("global")
        if idx < len(imports):
            return imports[idx].desc  # type: ignore[return-value]
        g = self.globals[idx - len(imports)]
        return GlobalType(g.valtype, g.mutable)

    def table_type(self, idx: int) -> TableDef:
        imports = self.imported("table")
        if idx < len(imports):
            return imports[idx].desc  # type: ignore[return-value]
        return self.tables[idx - len(imports)]

    def memory_limits(self, idx: int) -> MemoryDef:
        imports = self.imported("memory")
        if idx < len(imports):
            return imports[idx].desc  # type: ignore[return-value]
        return self.memories[idx - len(imports)]

    def num_space(self, space: str) -> int:
        counts = {
            "func": len(self.functions),
            "table": len(self.tables),
            "memory": len(self.memories),
            "global": len(self.globals),
        }
        return len(self.imported(space)) + counts[space]

    def find_export(self, name: str, kind: str | None = None) -> ExportDesc | None:
        for ex in self.exports:
            if ex.name == name and (kind is None or ex.kind == kind):
                return ex
        return None

    def type_index_for(self, ft: FuncType) -> int:
        """Index of a structurally equal type, appending it when missing."""
        for i, t in enumerate(self.types):
            if t == ft:
                return i
        self.types.append(ft)
        return len(self.types) - 1

    def without_custom_sections(self) -> "WasmModule":
        return replace(self, custom_sections=[])


@dataclass
class IndexMap:
    """Old index -> new index, one map per index space.

    Missing spaces are treated as identity; missing entries in a present
    space are an error surfaced by the body remapper.
    """

    func: dict[int, int] | None = None
    global_: dict[int, int] | None = None
    table: dict[int, int] | None = None
    memory: dict[int, int] | None = None
    type: dict[int, int] | None = None
    elem: dict[int, int] | None = None
    data: dict[int, int] | None = None

    _SPACES = ("func", "global_", "table", "memory", "type", "elem", "data")

    def space(self, name: str) -> dict[int, int] | None:
        return getattr(self, "global_" if name == "global" else name)

    def inverted(self) -> "IndexMap":
        kw = {}
        for sp in self._SPACES:
            m = getattr(self, sp)
            kw[sp] = None if m is None else {v: k for k, v in m.items()}
        return IndexMap(**kw)

    def composed(self, then: "IndexMap") -> "IndexMap":
        """Map equivalent to applying self first, then `then`."""
        kw = {}
        for sp in self._SPACES:
            a, b = getattr(self, sp), getattr(then, sp)
            if a is None and b is None:
                kw[sp] = None
            elif a is None:
                kw[sp] = dict(b)
            elif b is None:
                kw[sp] = dict(a)
            else:
                kw[sp] = {k: b.get(v, v) for k, v in a.items()}
        return IndexMap(**kw)


def encode_locals(locals_: list[tuple[int, str]]) -> bytes:
    from .opcodes import TYPE_CODES

    out = bytearray(leb.write_u(len(locals_)))
    for count, vt in locals_:
        out += leb.write_u(count)
        out.append(TYPE_CODES[vt])
    return bytes(out)


def function_body_size(m: WasmModule, idx: int) -> int:
    """Encoded size of one defined function body.

    Counts the locals declaration vector plus all instruction bytes
    (including the terminating end), and excludes the per-function LEB
    size prefix and any section framing.
    """
    f = m.defined_function(idx)
    return len(encode_locals(f.locals)) + len(f.body)


def code_size(m: WasmModule) -> int:
    """Summed encoded size of all defined function bodies.

    Excludes data segments and custom sections by construction; see
    function_body_size for the per-function convention.
    """
    return sum(
        len(encode_locals(f.locals)) + len(f.body) for f in m.functions
    )
