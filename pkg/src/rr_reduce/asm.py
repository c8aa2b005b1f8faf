"""Instruction emitters and a small module builder.

Everything here produces raw instruction bytes compatible with the model's
body representation; the builder assembles complete WasmModule values for
synthesized modules and hand-written test programs.
"""

from __future__ import annotations

import struct

from . import leb
from .model import (
    DataSegment,
    ElemSegment,
    ExportDesc,
    FunctionDef,
    FuncType,
    GlobalDef,
    Import,
    Limits,
    MemoryDef,
    TableDef,
    WasmModule,
)
from .opcodes import NAME_TO_FC, NAME_TO_OP, TYPE_CODES

END = b"\x0b"
ELSE = b"\x05"


def op(name: str) -> bytes:
    """Encode an instruction with no immediates by mnemonic."""
    if name in NAME_TO_OP:
        code = NAME_TO_OP[name]
        return bytes([code])
    sub = NAME_TO_FC[name]
    return b"\xfc" + leb.write_u(sub)


def i32_const(v: int) -> bytes:
    return b"\x41" + leb.write_s(v)


def i64_const(v: int) -> bytes:
    return b"\x42" + leb.write_s(v)


def f32_const_bits(bits: int) -> bytes:
    return b"\x43" + struct.pack("<I", bits & 0xFFFFFFFF)


def f64_const_bits(bits: int) -> bytes:
    return b"\x44" + struct.pack("<Q", bits & 0xFFFFFFFFFFFFFFFF)


def f32_const(v: float) -> bytes:
    return b"\x43" + struct.pack("<f", v)


def f64_const(v: float) -> bytes:
    return b"\x44" + struct.pack("<d", v)


def const_for(valtype: str, value) -> bytes:
    """A const instruction for one boundary value.

    Integer payloads are signed; float payloads are raw bit patterns, so
    NaN payloads survive exactly.
    """
    if valtype == "i32":
        return i32_const(value)
    if valtype == "i64":
        return i64_const(value)
    if valtype == "f32":
        return f32_const_bits(value)
    if valtype == "f64":
        return f64_const_bits(value)
    raise ValueError(f"no const encoding for {valtype}")


def default_const(valtype: str) -> bytes:
    if valtype in ("i32", "i64"):
        return const_for(valtype, 0)
    if valtype in ("f32", "f64"):
        return const_for(valtype, 0)
    return bytes([NAME_TO_OP["ref.null"], TYPE_CODES[valtype]])


def local_get(i: int) -> bytes:
    return b"\x20" + leb.write_u(i)


def local_set(i: int) -> bytes:
    return b"\x21" + leb.write_u(i)


def local_tee(i: int) -> bytes:
    return b"\x22" + leb.write_u(i)


def global_get(i: int) -> bytes:
    return b"\x23" + leb.write_u(i)


def global_set(i: int) -> bytes:
    return b"\x24" + leb.write_u(i)


def call(f: int) -> bytes:
    return b"\x10" + leb.write_u(f)


def call_indirect(type_index: int, table: int = 0) -> bytes:
    return b"\x11" + leb.write_u(type_index) + leb.write_u(table)


def ref_func(f: int) -> bytes:
    return b"\xd2" + leb.write_u(f)


def ref_null(reftype: str = "funcref") -> bytes:
    return b"\xd0" + bytes([TYPE_CODES[reftype]])


def table_get(t: int = 0) -> bytes:
    return b"\x25" + leb.write_u(t)


def table_set(t: int = 0) -> bytes:
    return b"\x26" + leb.write_u(t)


def memarg_op(name: str, offset: int = 0, align: int = 0) -> bytes:
    return bytes([NAME_TO_OP[name]]) + leb.write_u(align) + leb.write_u(offset)


def load(name: str = "i32.load", offset: int = 0, align: int = 0) -> bytes:
    return memarg_op(name, offset, align)


def store(name: str = "i32.store", offset: int = 0, align: int = 0) -> bytes:
    return memarg_op(name, offset, align)


def memory_size() -> bytes:
    return b"\x3f\x00"


def memory_grow() -> bytes:
    return b"\x40\x00"


def memory_init(data_index: int) -> bytes:
    return b"\xfc" + leb.write_u(8) + leb.write_u(data_index) + b"\x00"


def memory_fill() -> bytes:
    return b"\xfc" + leb.write_u(11) + b"\x00"


def memory_copy() -> bytes:
    return b"\xfc" + leb.write_u(10) + b"\x00\x00"


def blocktype_bytes(bt) -> bytes:
    if bt == "empty" or bt is None:
        return b"\x40"
    if isinstance(bt, str):
        return bytes([TYPE_CODES[bt]])
    return leb.write_s(bt)  # type index as s33


def block(bt="empty") -> bytes:
    return b"\x02" + blocktype_bytes(bt)


def loop(bt="empty") -> bytes:
    return b"\x03" + blocktype_bytes(bt)


def if_(bt="empty") -> bytes:
    return b"\x04" + blocktype_bytes(bt)


def br(depth: int) -> bytes:
    return b"\x0c" + leb.write_u(depth)


def br_if(depth: int) -> bytes:
    return b"\x0d" + leb.write_u(depth)


def br_table(targets: list[int], default: int) -> bytes:
    out = bytearray(b"\x0e")
    out += leb.write_u(len(targets))
    for t in targets:
        out += leb.write_u(t)
    out += leb.write_u(default)
    return bytes(out)


class ModuleBuilder:
    """Incrementally assemble a WasmModule.

    Function bodies are supplied as instruction bytes without the final
    end, which the builder appends.
    """

    def __init__(self):
        self.m = WasmModule()

    def type_index(self, params, results) -> int:
        return self.m.type_index_for(FuncType(tuple(params), tuple(results)))

    def add_import_func(self, module: str, name: str, params, results) -> int:
        """Returns the function index. Must precede add_func calls."""
        assert not self.m.functions, "function imports must be declared before bodies"
        ti = self.type_index(params, results)
        self.m.imports.append(Import(module, name, "func", ti))
        return self.m.num_imported_functions - 1

    def add_func(self, params, results, locals_=(), body: bytes = b"") -> int:
        ti = self.type_index(params, results)
        runs = [(1, vt) for vt in locals_]
        self.m.functions.append(FunctionDef(ti, runs, bytes(body) + END))
        return self.m.num_imported_functions + len(self.m.functions) - 1

    def add_global(self, valtype: str, mutable: bool, init: bytes) -> int:
        self.m.globals.append(GlobalDef(valtype, mutable, bytes(init) + END))
        return len(self.m.imported("global")) + len(self.m.globals) - 1

    def add_memory(self, min_pages: int, max_pages: int | None = None) -> int:
        self.m.memories.append(MemoryDef(Limits(min_pages, max_pages)))
        return len(self.m.imported("memory")) + len(self.m.memories) - 1

    def add_table(self, min_size: int, max_size: int | None = None, reftype: str = "funcref") -> int:
        self.m.tables.append(TableDef(reftype, Limits(min_size, max_size)))
        return len(self.m.imported("table")) + len(self.m.tables) - 1

    def export(self, name: str, kind: str, index: int) -> None:
        self.m.exports.append(ExportDesc(name, kind, index))

    def add_data(self, offset: int, data: bytes, memory_index: int = 0) -> int:
        self.m.data_segments.append(
            DataSegment("active", memory_index, i32_const(offset) + END, bytes(data))
        )
        return len(self.m.data_segments) - 1

    def add_passive_data(self, data: bytes) -> int:
        self.m.data_segments.append(DataSegment("passive", 0, None, bytes(data)))
        self.m.has_data_count = True
        return len(self.m.data_segments) - 1

    def add_elem(self, table_index: int, offset: int, func_indices) -> int:
        self.m.elem_segments.append(
            ElemSegment("active", table_index, i32_const(offset) + END,
                        "funcref", list(func_indices))
        )
        return len(self.m.elem_segments) - 1

    def add_declared_funcs(self, func_indices) -> None:
        """Declare functions so their ref.func uses validate."""
        self.m.elem_segments.append(
            ElemSegment("declarative", 0, None, "funcref", list(func_indices))
        )

    def set_start(self, func_index: int) -> None:
        self.m.start = func_index

    def build(self) -> WasmModule:
        return self.m
