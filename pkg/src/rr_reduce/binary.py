"""Binary .wasm parsing and encoding (Wasm 2.0 feature set, SIMD excluded)."""

from __future__ import annotations

from . import leb
from .body import check_expr, walk
from .errors import MalformedBinary, MultiMemory, UnsupportedFeature
from .model import (
    CustomSection,
    DataSegment,
    ElemSegment,
    ExportDesc,
    FunctionDef,
    FuncType,
    GlobalDef,
    GlobalType,
    Import,
    Limits,
    MemoryDef,
    TableDef,
    WasmModule,
    encode_locals,
)
from .opcodes import ALLTYPES, REFTYPES, TYPE_CODES, VALTYPES

MAGIC = b"\x00asm"
VERSION = b"\x01\x00\x00\x00"

_SECTION_IDS = {
    "type": 1, "import": 2, "function": 3, "table": 4, "memory": 5,
    "global": 6, "export": 7, "start": 8, "elem": 9, "code": 10,
    "data": 11, "datacount": 12,
}
_EXPORT_KINDS = {0: "func", 1: "table", 2: "memory", 3: "global"}
_EXPORT_CODES = {v: k for k, v in _EXPORT_KINDS.items()}


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data within the whole file, for messages

    def off(self) -> int:
        return self.base + self.pos

    def eof(self) -> bool:
        return self.pos >= len(self.data)

    def byte(self) -> int:
        if self.pos >= len(self.data):
            raise MalformedBinary(self.off(), "unexpected end of input")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedBinary(self.off(), "unexpected end of input")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        try:
            value, self.pos = leb.read_u(self.data, self.pos, 32)
        except MalformedBinary as e:
            raise MalformedBinary(self.base + e.offset, e.reason) from None
        return value

    def name(self) -> str:
        n = self.u32()
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedBinary(self.off(), "invalid UTF-8 name") from None

    def valtype(self) -> str:
        off = self.off()
        b = self.byte()
        if b == 0x7B:
            raise UnsupportedFeature("simd", f"v128 type at offset {off}")
        if b not in ALLTYPES:
            raise MalformedBinary(off, f"bad value type {b:#x}")
        return ALLTYPES[b]

    def limits(self) -> Limits:
        off = self.off()
        flag = self.byte()
        if flag in (0x02, 0x03):
            raise UnsupportedFeature("shared-memory", f"limits flag at offset {off}")
        if flag in (0x04, 0x05, 0x06, 0x07):
            raise UnsupportedFeature("memory64", f"limits flag at offset {off}")
        if flag == 0x00:
            return Limits(self.u32(), None)
        if flag == 0x01:
            return Limits(self.u32(), self.u32())
        raise MalformedBinary(off, f"bad limits flag {flag:#x}")

    def expr(self) -> bytes:
        """Consume a constant/offset expression through its terminating end."""
        start = self.pos
        depth = 1
        for ins in walk(self.data, start=self.pos):
            if ins.name in ("block", "loop", "if"):
                depth += 1
            elif ins.name == "end":
                depth -= 1
                if depth == 0:
                    self.pos = ins.end
                    return self.data[start:self.pos]
        raise MalformedBinary(self.off(), "unterminated expression")


def _parse_functype(r: _Reader) -> FuncType:
    off = r.off()
    if r.byte() != 0x60:
        raise MalformedBinary(off, "expected function type (0x60)")
    params = tuple(r.valtype() for _ in range(r.u32()))
    results = tuple(r.valtype() for _ in range(r.u32()))
    return FuncType(params, results)


def _parse_tabletype(r: _Reader) -> TableDef:
    off = r.off()
    b = r.byte()
    if b not in REFTYPES:
        raise MalformedBinary(off, f"bad table element type {b:#x}")
    return TableDef(REFTYPES[b], r.limits())


def _parse_globaltype(r: _Reader) -> GlobalType:
    vt = r.valtype()
    off = r.off()
    mut = r.byte()
    if mut not in (0, 1):
        raise MalformedBinary(off, f"bad mutability flag {mut:#x}")
    return GlobalType(vt, bool(mut))


def _parse_elem(r: _Reader) -> ElemSegment:
    off = r.off()
    flag = r.u32()
    if flag > 7:
        raise MalformedBinary(off, f"bad element segment flags {flag}")
    mode = ("active", "passive", "active", "declarative")[flag & 0b11]
    table_index = 0
    offset = None
    reftype = "funcref"
    uses_exprs = bool(flag & 0b100)
    if flag in (2, 6):
        table_index = r.u32()
    if mode == "active":
        offset = r.expr()
    if flag in (1, 2, 3):
        kind = r.byte()
        if kind != 0x00:
            raise MalformedBinary(r.off(), f"bad elemkind {kind:#x}")
    if flag in (5, 6, 7):
        b = r.byte()
        if b not in REFTYPES:
            raise MalformedBinary(r.off(), f"bad element reftype {b:#x}")
        reftype = REFTYPES[b]
    count = r.u32()
    entries: list[int | None] = []
    if uses_exprs:
        for _ in range(count):
            expr = r.expr()
            entries.append(_decode_ref_expr(expr, r.off()))
    else:
        entries = [r.u32() for _ in range(count)]
    return ElemSegment(mode, table_index, offset, reftype, entries, uses_exprs)


def _decode_ref_expr(expr: bytes, off: int) -> int | None:
    instrs = list(walk(expr))
    if len(instrs) == 2 and instrs[0].name == "ref.func" and instrs[1].name == "end":
        return instrs[0].imms[0].value  # type: ignore[return-value]
    if len(instrs) == 2 and instrs[0].name == "ref.null" and instrs[1].name == "end":
        return None
    raise MalformedBinary(off, "unsupported element expression (expected ref.func/ref.null)")


def _parse_data(r: _Reader) -> DataSegment:
    off = r.off()
    flag = r.u32()
    if flag == 0:
        offset = r.expr()
        return DataSegment("active", 0, offset, r.take(r.u32()))
    if flag == 1:
        return DataSegment("passive", 0, None, r.take(r.u32()))
    if flag == 2:
        mem = r.u32()
        offset = r.expr()
        return DataSegment("active", mem, offset, r.take(r.u32()))
    raise MalformedBinary(off, f"bad data segment flags {flag}")


def _parse_code_entry(r: _Reader) -> FunctionDef:
    size = r.u32()
    entry_end = r.pos + size
    if entry_end > len(r.data):
        raise MalformedBinary(r.off(), "code entry exceeds section")
    n_locals = r.u32()
    locals_: list[tuple[int, str]] = []
    total = 0
    for _ in range(n_locals):
        count = r.u32()
        vt = r.valtype()
        total += count
        if total > 1_000_000:
            raise MalformedBinary(r.off(), "too many locals")
        locals_.append((count, vt))
    body = r.data[r.pos:entry_end]
    r.pos = entry_end
    check_expr(body)
    return FunctionDef(0, locals_, body)  # type index filled by caller


def parse_module(data: bytes) -> WasmModule:
    """Parse a .wasm binary into a WasmModule.

    Rejects SIMD, threads, multi-memory, shared memory, and memory64 with
    UnsupportedFeature; structural problems raise MalformedBinary with the
    byte offset of the issue.
    """
    if len(data) < 8 or data[:4] != MAGIC:
        raise MalformedBinary(0, "missing \\0asm magic")
    if data[4:8] != VERSION:
        raise MalformedBinary(4, f"unsupported version {data[4:8].hex()}")

    m = WasmModule()
    func_type_indices: list[int] = []
    code_entries: list[FunctionDef] = []
    data_count: int | None = None
    pos = 8
    last_section = 0
    while pos < len(data):
        sect_id = data[pos]
        pos += 1
        size, pos = leb.read_u(data, pos, 32)
        if pos + size > len(data):
            raise MalformedBinary(pos, "section exceeds file size")
        payload = data[pos:pos + size]
        r = _Reader(payload, base=pos)
        if sect_id == 0:
            name = r.name()
            m.custom_sections.append(
                CustomSection(name, payload[r.pos:], after_section=last_section)
            )
        elif sect_id > 12:
            raise MalformedBinary(pos - 1, f"unknown section id {sect_id}")
        else:
            if sect_id <= last_section:
                raise MalformedBinary(pos - 1, f"section id {sect_id} out of order")
            last_section = sect_id
            if sect_id == 1:
                m.types = [_parse_functype(r) for _ in range(r.u32())]
            elif sect_id == 2:
                for _ in range(r.u32()):
                    module = r.name()
                    name = r.name()
                    off = r.off()
                    kind = r.byte()
                    if kind == 0:
                        m.imports.append(Import(module, name, "func", r.u32()))
                    elif kind == 1:
                        m.imports.append(Import(module, name, "table", _parse_tabletype(r)))
                    elif kind == 2:
                        m.imports.append(Import(module, name, "memory", MemoryDef(r.limits())))
                    elif kind == 3:
                        m.imports.append(Import(module, name, "global", _parse_globaltype(r)))
                    else:
                        raise MalformedBinary(off, f"bad import kind {kind:#x}")
            elif sect_id == 3:
                func_type_indices = [r.u32() for _ in range(r.u32())]
            elif sect_id == 4:
                m.tables = [_parse_tabletype(r) for _ in range(r.u32())]
            elif sect_id == 5:
                m.memories = [MemoryDef(r.limits()) for _ in range(r.u32())]
            elif sect_id == 6:
                for _ in range(r.u32()):
                    gt = _parse_globaltype(r)
                    m.globals.append(GlobalDef(gt.valtype, gt.mutable, r.expr()))
            elif sect_id == 7:
                for _ in range(r.u32()):
                    name = r.name()
                    off = r.off()
                    kind = r.byte()
                    if kind not in _EXPORT_KINDS:
                        raise MalformedBinary(off, f"bad export kind {kind:#x}")
                    m.exports.append(ExportDesc(name, _EXPORT_KINDS[kind], r.u32()))
            elif sect_id == 8:
                m.start = r.u32()
            elif sect_id == 9:
                m.elem_segments = [_parse_elem(r) for _ in range(r.u32())]
            elif sect_id == 10:
                code_entries = [_parse_code_entry(r) for _ in range(r.u32())]
            elif sect_id == 11:
                m.data_segments = [_parse_data(r) for _ in range(r.u32())]
            elif sect_id == 12:
                data_count = r.u32()
                m.has_data_count = True
            if not r.eof():
                raise MalformedBinary(r.off(), f"trailing bytes in section {sect_id}")
        pos += size

    if len(func_type_indices) != len(code_entries):
        raise MalformedBinary(
            len(data), f"function section declares {len(func_type_indices)} functions "
            f"but code section has {len(code_entries)}")
    for ti, fd in zip(func_type_indices, code_entries):
        if ti >= len(m.types):
            raise MalformedBinary(len(data), f"function type index {ti} out of range")
        fd.type_index = ti
    m.functions = code_entries
    if data_count is not None and data_count != len(m.data_segments):
        raise MalformedBinary(len(data), "data count section does not match data section")

    n_memories = m.num_space("memory")
    if n_memories > 1:
        raise MultiMemory(n_memories)
    for g in m.globals:
        check_expr(g.init)
    for seg in m.elem_segments:
        if seg.offset is not None:
            check_expr(seg.offset)
    for seg in m.data_segments:
        if seg.offset is not None:
            check_expr(seg.offset)
    return m


# -- encoding --


def _enc_functype(ft: FuncType) -> bytes:
    out = bytearray([0x60])
    out += leb.write_u(len(ft.params))
    out += bytes(TYPE_CODES[p] for p in ft.params)
    out += leb.write_u(len(ft.results))
    out += bytes(TYPE_CODES[rt] for rt in ft.results)
    return bytes(out)


def _enc_limits(lim: Limits) -> bytes:
    if lim.max is None:
        return b"\x00" + leb.write_u(lim.min)
    return b"\x01" + leb.write_u(lim.min) + leb.write_u(lim.max)


def _enc_tabletype(t: TableDef) -> bytes:
    return bytes([TYPE_CODES[t.reftype]]) + _enc_limits(t.limits)


def _enc_globaltype(gt: GlobalType) -> bytes:
    return bytes([TYPE_CODES[gt.valtype], 1 if gt.mutable else 0])


def _enc_name(s: str) -> bytes:
    raw = s.encode("utf-8")
    return leb.write_u(len(raw)) + raw


def _enc_elem(seg: ElemSegment) -> bytes:
    out = bytearray()
    plain_func = seg.reftype == "funcref" and not seg.uses_exprs and None not in seg.func_indices
    if seg.mode == "active" and seg.table_index == 0 and plain_func:
        flag = 0
    elif seg.mode == "active" and plain_func:
        flag = 2
    elif seg.mode == "passive" and plain_func:
        flag = 1
    elif seg.mode == "declarative" and plain_func:
        flag = 3
    elif seg.mode == "active" and seg.table_index == 0 and seg.reftype == "funcref":
        flag = 4
    elif seg.mode == "active":
        flag = 6
    elif seg.mode == "passive":
        flag = 5
    else:
        flag = 7
    out += leb.write_u(flag)
    if flag in (2, 6):
        out += leb.write_u(seg.table_index)
    if seg.mode == "active":
        assert seg.offset is not None
        out += seg.offset
    if flag in (1, 2, 3):
        out.append(0x00)
    if flag in (5, 6, 7):
        out.append(TYPE_CODES[seg.reftype])
    out += leb.write_u(len(seg.func_indices))
    for entry in seg.func_indices:
        if flag <= 3:
            out += leb.write_u(entry)  # type: ignore[arg-type]
        elif entry is None:
            out += bytes([0xD0, TYPE_CODES[seg.reftype], 0x0B])
        else:
            out += bytes([0xD2]) + leb.write_u(entry) + b"\x0b"
    return bytes(out)


def _needs_data_count(m: WasmModule) -> bool:
    if not m.data_segments:
        return False
    for f in m.functions:
        for ins in walk(f.body):
            if ins.subop in (8, 9):  # memory.init / data.drop
                return True
    return False


def encode_module(m: WasmModule) -> bytes:
    """Encode a WasmModule back to .wasm bytes.

    parse_module(encode_module(m)) is structurally equal to m; unmodified
    payloads (bodies, init exprs, custom sections) are emitted bit-exact.
    """
    sections: list[tuple[int, bytes]] = []

    if m.types:
        body = leb.write_u(len(m.types)) + b"".join(_enc_functype(t) for t in m.types)
        sections.append((1, body))
    if m.imports:
        parts = []
        for im in m.imports:
            part = _enc_name(im.module) + _enc_name(im.name)
            if im.kind == "func":
                part += b"\x00" + leb.write_u(im.desc)  # type: ignore[arg-type]
            elif im.kind == "table":
                part += b"\x01" + _enc_tabletype(im.desc)  # type: ignore[arg-type]
            elif im.kind == "memory":
                part += b"\x02" + _enc_limits(im.desc.limits)  # type: ignore[union-attr]
            else:
                part += b"\x03" + _enc_globaltype(im.desc)  # type: ignore[arg-type]
            parts.append(part)
        sections.append((2, leb.write_u(len(parts)) + b"".join(parts)))
    if m.functions:
        body = leb.write_u(len(m.functions))
        body += b"".join(leb.write_u(f.type_index) for f in m.functions)
        sections.append((3, body))
    if m.tables:
        sections.append((4, leb.write_u(len(m.tables)) + b"".join(_enc_tabletype(t) for t in m.tables)))
    if m.memories:
        sections.append((5, leb.write_u(len(m.memories)) + b"".join(_enc_limits(mm.limits) for mm in m.memories)))
    if m.globals:
        parts = [_enc_globaltype(GlobalType(g.valtype, g.mutable)) + g.init for g in m.globals]
        sections.append((6, leb.write_u(len(parts)) + b"".join(parts)))
    if m.exports:
        parts = [
            _enc_name(e.name) + bytes([_EXPORT_CODES[e.kind]]) + leb.write_u(e.index)
            for e in m.exports
        ]
        sections.append((7, leb.write_u(len(parts)) + b"".join(parts)))
    if m.start is not None:
        sections.append((8, leb.write_u(m.start)))
    if m.elem_segments:
        sections.append((9, leb.write_u(len(m.elem_segments)) + b"".join(_enc_elem(s) for s in m.elem_segments)))
    if m.has_data_count or _needs_data_count(m):
        sections.append((12, leb.write_u(len(m.data_segments))))
    if m.functions:
        entries = []
        for f in m.functions:
            payload = encode_locals(f.locals) + f.body
            entries.append(leb.write_u(len(payload)) + payload)
        sections.append((10, leb.write_u(len(entries)) + b"".join(entries)))
    if m.data_segments:
        parts = []
        for seg in m.data_segments:
            if seg.mode == "passive":
                parts.append(b"\x01" + leb.write_u(len(seg.data)) + seg.data)
            elif seg.memory_index == 0:
                parts.append(b"\x00" + (seg.offset or b"") + leb.write_u(len(seg.data)) + seg.data)
            else:
                parts.append(b"\x02" + leb.write_u(seg.memory_index) + (seg.offset or b"")
                             + leb.write_u(len(seg.data)) + seg.data)
        sections.append((11, leb.write_u(len(parts)) + b"".join(parts)))

    out = bytearray(MAGIC + VERSION)
    customs_by_pos: dict[int, list[CustomSection]] = {}
    for cs in m.custom_sections:
        customs_by_pos.setdefault(cs.after_section, []).append(cs)

    def emit_customs(after: int) -> None:
        for cs in customs_by_pos.pop(after, []):
            payload = _enc_name(cs.name) + cs.data
            out.append(0)
            out.extend(leb.write_u(len(payload)))
            out.extend(payload)

    emit_customs(0)
    # The data count section sits between element and code despite its id.
    for sect_id, payload in sorted(sections, key=lambda s: 9.5 if s[0] == 12 else s[0]):
        out.append(sect_id)
        out.extend(leb.write_u(len(payload)))
        out.extend(payload)
        emit_customs(sect_id)
    # Custom sections recorded after sections that ended up empty.
    for after in sorted(customs_by_pos):
        emit_customs(after)
    return bytes(out)
