"""Byte-level instruction stream walker, reference collector, and remapper."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import leb
from .errors import MalformedBinary, UnmappedIndex, UnsupportedFeature
from .model import IndexMap
from .opcodes import ALLTYPES, FC_OPS, GATED, OPS, REFTYPES, VALTYPES

_INDEX_KINDS = {
    "funcidx": "func",
    "typeidx": "type",
    "tableidx": "table",
    "globalidx": "global",
    "memidx": "memory",
    "elemidx": "elem",
    "dataidx": "data",
}


@dataclass
class Imm:
    kind: str
    value: object
    start: int
    end: int


@dataclass
class Instr:
    start: int
    end: int
    opcode: int
    subop: int | None
    name: str
    imms: list[Imm]


def _read_blocktype(body: bytes, pos: int) -> tuple[object, int]:
    b = body[pos]
    if b == 0x40:
        return "empty", pos + 1
    if b in ALLTYPES:
        return ALLTYPES[b], pos + 1
    value, pos = leb.read_s(body, pos, 33)
    if value < 0:
        raise MalformedBinary(pos, f"negative block type index {value}")
    return value, pos


def _read_imm(kind: str, body: bytes, pos: int) -> tuple[object, int]:
    if kind in _INDEX_KINDS or kind == "labelidx" or kind == "localidx":
        return leb.read_u(body, pos, 32)
    if kind == "memarg":
        align, pos = leb.read_u(body, pos, 32)
        offset, pos = leb.read_u(body, pos, 32)
        return (align, offset), pos
    if kind == "s32":
        return leb.read_s(body, pos, 32)
    if kind == "s64":
        return leb.read_s(body, pos, 64)
    if kind == "f32":
        if pos + 4 > len(body):
            raise MalformedBinary(pos, "truncated f32 immediate")
        return body[pos:pos + 4], pos + 4
    if kind == "f64":
        if pos + 8 > len(body):
            raise MalformedBinary(pos, "truncated f64 immediate")
        return body[pos:pos + 8], pos + 8
    if kind == "blocktype":
        return _read_blocktype(body, pos)
    if kind == "reftype":
        b = body[pos]
        if b not in REFTYPES:
            raise MalformedBinary(pos, f"bad reference type {b:#x}")
        return REFTYPES[b], pos + 1
    if kind == "br_table":
        count, pos = leb.read_u(body, pos, 32)
        targets = []
        for _ in range(count):
            t, pos = leb.read_u(body, pos, 32)
            targets.append(t)
        default, pos = leb.read_u(body, pos, 32)
        return (tuple(targets), default), pos
    if kind == "vec_valtype":
        count, pos = leb.read_u(body, pos, 32)
        vts = []
        for _ in range(count):
            b = body[pos]
            if b not in ALLTYPES:
                raise MalformedBinary(pos, f"bad value type {b:#x}")
            vts.append(ALLTYPES[b])
            pos += 1
        return tuple(vts), pos
    raise AssertionError(f"unhandled immediate kind {kind}")


def walk(body: bytes, start: int = 0, end: int | None = None):
    """Yield every instruction in an instruction byte sequence.

    Raises UnsupportedFeature for gated opcodes (SIMD, threads, ...) and
    MalformedBinary for unknown ones.
    """
    pos = start
    stop = len(body) if end is None else end
    while pos < stop:
        op_start = pos
        op = body[pos]
        pos += 1
        if op in GATED:
            raise UnsupportedFeature(GATED[op], f"opcode {op:#x} at offset {op_start}")
        subop = None
        if op == 0xFC:
            subop, pos = leb.read_u(body, pos, 32)
            if subop not in FC_OPS:
                if 0x100 > subop >= 0x10:
                    raise UnsupportedFeature("unknown-fc", f"0xfc {subop} at {op_start}")
                raise MalformedBinary(op_start, f"unknown 0xfc sub-opcode {subop}")
            name, kinds = FC_OPS[subop]
        elif op in OPS:
            name, kinds = OPS[op]
        else:
            raise MalformedBinary(op_start, f"unknown opcode {op:#x}")
        imms = []
        for kind in kinds:
            imm_start = pos
            try:
                value, pos = _read_imm(kind, body, pos)
            except IndexError:
                raise MalformedBinary(pos, f"truncated {kind} immediate") from None
            imms.append(Imm(kind, value, imm_start, pos))
        yield Instr(op_start, pos, op, subop, name, imms)


def check_expr(body: bytes) -> None:
    """Scan an instruction sequence, raising on malformed/gated content.

    The sequence must consist of well-formed instructions and be closed by
    exactly one top-level end as its final bytes.
    """
    depth = 1
    last_end = -1
    for ins in walk(body):
        if ins.name in ("block", "loop", "if"):
            depth += 1
        elif ins.name == "end":
            depth -= 1
            if depth == 0:
                last_end = ins.end
                break
    if depth != 0 or last_end != len(body):
        raise MalformedBinary(len(body), "instruction sequence not terminated by end")


@dataclass
class Refs:
    funcs: set[int] = field(default_factory=set)
    globals: set[int] = field(default_factory=set)
    tables: set[int] = field(default_factory=set)
    memories: set[int] = field(default_factory=set)
    types: set[int] = field(default_factory=set)
    elems: set[int] = field(default_factory=set)
    datas: set[int] = field(default_factory=set)
    max_local: int = -1


def collect_refs(body: bytes) -> Refs:
    """Indices referenced by an instruction sequence, per index space."""
    refs = Refs()
    buckets = {
        "funcidx": refs.funcs,
        "globalidx": refs.globals,
        "tableidx": refs.tables,
        "memidx": refs.memories,
        "typeidx": refs.types,
        "elemidx": refs.elems,
        "dataidx": refs.datas,
    }
    for ins in walk(body):
        for imm in ins.imms:
            if imm.kind in buckets:
                buckets[imm.kind].add(imm.value)  # type: ignore[arg-type]
            elif imm.kind == "localidx":
                refs.max_local = max(refs.max_local, imm.value)  # type: ignore[arg-type]
            elif imm.kind == "blocktype" and isinstance(imm.value, int):
                refs.types.add(imm.value)
    return refs


def remap_body(body: bytes, imap: IndexMap) -> bytes:
    """Rewrite index immediates through imap, leaving everything else
    byte-identical (including non-canonical LEBs of unchanged indices)."""

    def lookup(space: str, old: int) -> int:
        m = imap.space(space)
        if m is None:
            return old
        if old not in m:
            raise UnmappedIndex(space, old)
        return m[old]

    out = bytearray()
    cursor = 0
    for ins in walk(body):
        for imm in ins.imms:
            if imm.kind in _INDEX_KINDS:
                new = lookup(_INDEX_KINDS[imm.kind], imm.value)  # type: ignore[arg-type]
                if new != imm.value:
                    out += body[cursor:imm.start]
                    out += leb.write_u(new)
                    cursor = imm.end
            elif imm.kind == "blocktype" and isinstance(imm.value, int):
                new = lookup("type", imm.value)
                if new != imm.value:
                    out += body[cursor:imm.start]
                    out += leb.write_s(new)
                    cursor = imm.end
    out += body[cursor:]
    return bytes(out)
