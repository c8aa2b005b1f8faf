"""A WebAssembly interpreter (Wasm 2.0 minus SIMD).

Values are represented as canonical signed Python ints for i32/i64, Python
floats for f32/f64 (f32 results are rounded through real float32 after each
operation), and function address objects or None for references.

The interpreter exposes exactly the hooks the recording harness needs:
host functions as import closures, shared memory/global/table objects
across instances, a per-call observer, and interception of cross-instance
indirect calls.
"""

from __future__ import annotations

import math
import struct
import time
from dataclasses import dataclass

from .body import walk
from .errors import InstantiationFailed
from .model import FuncType, GlobalType, Import, WasmModule

PAGE_SIZE = 65536
M32 = 0xFFFFFFFF
M64 = 0xFFFFFFFFFFFFFFFF
I32_MIN, I32_MAX = -(1 << 31), (1 << 31) - 1
I64_MIN, I64_MAX = -(1 << 63), (1 << 63) - 1


class Trap(Exception):
    def __init__(self, kind: str, message: str = ""):
        super().__init__(message or kind)
        self.kind = kind


class Exhausted(Exception):
    def __init__(self, kind: str):
        super().__init__(f"resource exhausted: {kind}")
        self.kind = kind


class HostExit(Exception):
    def __init__(self, code: int):
        super().__init__(f"exit({code})")
        self.code = code


def to_i32(v: int) -> int:
    v &= M32
    return v - 0x100000000 if v >= 0x80000000 else v


def to_i64(v: int) -> int:
    v &= M64
    return v - 0x10000000000000000 if v >= 0x8000000000000000 else v


def f32_round(x: float) -> float:
    try:
        return struct.unpack("<f", struct.pack("<f", x))[0]
    except OverflowError:
        return math.inf if x > 0 else -math.inf


def default_value(valtype: str):
    if valtype in ("i32", "i64"):
        return 0
    if valtype in ("f32", "f64"):
        return 0.0
    return None


@dataclass
class ExecLimits:
    fuel: int = 10**9
    memory_bytes: int = 1 << 30
    wall_seconds: float = 300.0
    max_call_depth: int = 1000


class MemoryInstance:
    def __init__(self, min_pages: int, max_pages: int | None, cap_bytes: int):
        if min_pages * PAGE_SIZE > cap_bytes:
            raise InstantiationFailed(
                f"initial memory of {min_pages} pages exceeds the {cap_bytes} byte cap")
        self.data = bytearray(min_pages * PAGE_SIZE)
        self.max_pages = min(max_pages if max_pages is not None else 65536, 65536)
        self.cap_bytes = cap_bytes

    @property
    def pages(self) -> int:
        return len(self.data) // PAGE_SIZE

    def grow(self, delta: int) -> int:
        old = self.pages
        new = old + delta
        if delta < 0 or new > self.max_pages or new * PAGE_SIZE > self.cap_bytes:
            return -1
        self.data.extend(bytes(delta * PAGE_SIZE))
        return old


class GlobalInstance:
    __slots__ = ("valtype", "mutable", "value")

    def __init__(self, valtype: str, mutable: bool, value):
        self.valtype = valtype
        self.mutable = mutable
        self.value = value


class TableInstance:
    def __init__(self, reftype: str, min_size: int, max_size: int | None):
        self.reftype = reftype
        self.elems: list = [None] * min_size
        self.max = max_size if max_size is not None else M32

    def grow(self, delta: int, init) -> int:
        old = len(self.elems)
        if delta < 0 or old + delta > self.max or old + delta > 1 << 24:
            return -1
        self.elems.extend([init] * delta)
        return old


@dataclass
class HostFunction:
    functype: FuncType
    fn: object  # callable(list) -> list
    name: str = "host"


@dataclass(eq=False)
class BoundFunction:
    instance: "Instance"
    func_index: int  # module function index space (imports first)

    @property
    def functype(self) -> FuncType:
        return self.instance.module.func_type(self.func_index)


FuncAddr = HostFunction | BoundFunction


class Engine:
    """Shared execution context: limits, accounting, and hooks."""

    def __init__(self, limits: ExecLimits | None = None):
        self.limits = limits or ExecLimits()
        self.fuel_left = self.limits.fuel
        self.deadline = (
            time.monotonic() + self.limits.wall_seconds
            if self.limits.wall_seconds else None
        )
        self.depth = 0
        self.op_count = 0
        self.frame_stack: list[tuple[Instance, int]] = []
        # Hooks used by the recording harness and tests.
        self.on_wasm_call = None          # (instance, func_index) -> None
        self.call_observer = None         # (addr, args, results) -> None
        self.xcall_hook = None            # (caller, table_idx, slot, addr, args) -> results

    def fuel_used(self) -> int:
        return self.limits.fuel - self.fuel_left

    def check_wall(self) -> None:
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise Exhausted("wall")

    def invoke(self, addr: FuncAddr, args: list) -> list:
        if isinstance(addr, HostFunction):
            results = addr.fn(list(args))
            results = list(results) if results is not None else []
            if self.call_observer is not None:
                self.call_observer(addr, list(args), list(results))
            return results
        self.depth += 1
        if self.depth > self.limits.max_call_depth:
            self.depth -= 1
            raise Trap("call_stack_exhausted", "call stack exhausted")
        if self.on_wasm_call is not None:
            self.on_wasm_call(addr.instance, addr.func_index)
        self.frame_stack.append((addr.instance, addr.func_index))
        try:
            results = _run(self, addr.instance, addr.func_index, list(args))
        finally:
            self.frame_stack.pop()
            self.depth -= 1
        if self.call_observer is not None:
            self.call_observer(addr, list(args), list(results))
        return results

    def current_frame(self) -> tuple["Instance", int] | None:
        return self.frame_stack[-1] if self.frame_stack else None


class Instance:
    def __init__(self, module: WasmModule, engine: Engine):
        self.module = module
        self.engine = engine
        self.funcs: list[FuncAddr] = []
        self.globals: list[GlobalInstance] = []
        self.memories: list[MemoryInstance] = []
        self.tables: list[TableInstance] = []
        self.exports: dict[str, tuple[str, object]] = {}
        self.elem_store: list[list | None] = []
        self.data_store: list[bytes] = []
        self._decoded: dict[int, "_DecodedFunc"] = {}

    def export(self, name: str):
        if name not in self.exports:
            raise InstantiationFailed(f"no export named {name!r}")
        return self.exports[name][1]

    def invoke_export(self, name: str, args: list) -> list:
        kind, obj = self.exports.get(name, (None, None))
        if kind != "func":
            raise InstantiationFailed(f"export {name!r} is not a function")
        return self.engine.invoke(obj, args)

    def decoded(self, func_index: int) -> "_DecodedFunc":
        d = self._decoded.get(func_index)
        if d is None:
            d = _decode_function(self.module, func_index)
            self._decoded[func_index] = d
        return d


def eval_const_expr(expr: bytes, instance: Instance):
    """Evaluate a constant expression (global init / segment offset)."""
    stack: list = []
    for ins in walk(expr):
        if ins.name == "i32.const" or ins.name == "i64.const":
            stack.append(ins.imms[0].value)
        elif ins.name == "f32.const":
            stack.append(struct.unpack("<f", ins.imms[0].value)[0])
        elif ins.name == "f64.const":
            stack.append(struct.unpack("<d", ins.imms[0].value)[0])
        elif ins.name == "global.get":
            stack.append(instance.globals[ins.imms[0].value].value)
        elif ins.name == "ref.null":
            stack.append(None)
        elif ins.name == "ref.func":
            stack.append(instance.funcs[ins.imms[0].value])
        elif ins.name == "end":
            break
        else:
            raise InstantiationFailed(f"non-constant instruction {ins.name} in init expression")
    if len(stack) != 1:
        raise InstantiationFailed("init expression must produce exactly one value")
    return stack[0]


def _check_import_type(imp: Import, module: WasmModule, resolved) -> None:
    def fail(detail: str):
        raise InstantiationFailed(
            f"import {imp.module}:{imp.name} ({imp.kind}) incompatible: {detail}")

    if imp.kind == "func":
        if not isinstance(resolved, (HostFunction, BoundFunction)):
            fail("not a function")
        expected = module.types[imp.desc]  # type: ignore[index]
        if resolved.functype != expected:
            fail(f"expected {expected}, got {resolved.functype}")
    elif imp.kind == "memory":
        if not isinstance(resolved, MemoryInstance):
            fail("not a memory")
        lim = imp.desc.limits  # type: ignore[union-attr]
        if resolved.pages < lim.min:
            fail(f"memory has {resolved.pages} pages, needs at least {lim.min}")
        if lim.max is not None and resolved.max_pages > lim.max:
            fail("memory max exceeds declared import max")
    elif imp.kind == "table":
        if not isinstance(resolved, TableInstance):
            fail("not a table")
        if resolved.reftype != imp.desc.reftype:  # type: ignore[union-attr]
            fail("table element type mismatch")
        if len(resolved.elems) < imp.desc.limits.min:  # type: ignore[union-attr]
            fail("table too small")
    elif imp.kind == "global":
        if not isinstance(resolved, GlobalInstance):
            fail("not a global")
        gt: GlobalType = imp.desc  # type: ignore[assignment]
        if resolved.valtype != gt.valtype or resolved.mutable != gt.mutable:
            fail(f"global type mismatch ({resolved.valtype}/{resolved.mutable} "
                 f"vs {gt.valtype}/{gt.mutable})")


def instantiate(module: WasmModule, engine: Engine, resolver=None) -> Instance:
    """Build an Instance; the start function is NOT run (see run_start).

    resolver(imp: Import) must return a function address, MemoryInstance,
    GlobalInstance, or TableInstance for every import.
    """
    inst = Instance(module, engine)
    for imp in module.imports:
        if resolver is None:
            raise InstantiationFailed(f"unresolved import {imp.module}:{imp.name}")
        resolved = resolver(imp)
        if resolved is None:
            raise InstantiationFailed(f"unresolved import {imp.module}:{imp.name}")
        _check_import_type(imp, module, resolved)
        if imp.kind == "func":
            inst.funcs.append(resolved)
        elif imp.kind == "memory":
            inst.memories.append(resolved)
        elif imp.kind == "table":
            inst.tables.append(resolved)
        else:
            inst.globals.append(resolved)

    base = module.num_imported_functions
    for i in range(len(module.functions)):
        inst.funcs.append(BoundFunction(inst, base + i))
    for t in module.tables:
        inst.tables.append(TableInstance(t.reftype, t.limits.min, t.limits.max))
    for mm in module.memories:
        inst.memories.append(
            MemoryInstance(mm.limits.min, mm.limits.max, engine.limits.memory_bytes))
    for g in module.globals:
        inst.globals.append(GlobalInstance(g.valtype, g.mutable, eval_const_expr(g.init, inst)))

    for seg in module.elem_segments:
        refs = [None if fi is None else inst.funcs[fi] for fi in seg.func_indices]
        if seg.mode == "active":
            offset = eval_const_expr(seg.offset, inst)  # type: ignore[arg-type]
            table = inst.tables[seg.table_index]
            if offset + len(refs) > len(table.elems):
                raise InstantiationFailed("element segment out of bounds")
            table.elems[offset:offset + len(refs)] = refs
            inst.elem_store.append([])
        elif seg.mode == "passive":
            inst.elem_store.append(refs)
        else:
            inst.elem_store.append([])
    for seg in module.data_segments:
        if seg.mode == "active":
            offset = eval_const_expr(seg.offset, inst)  # type: ignore[arg-type]
            mem = inst.memories[seg.memory_index]
            if offset + len(seg.data) > len(mem.data):
                raise InstantiationFailed("data segment out of bounds")
            mem.data[offset:offset + len(seg.data)] = seg.data
            inst.data_store.append(b"")
        else:
            inst.data_store.append(seg.data)

    for ex in module.exports:
        if ex.kind == "func":
            inst.exports[ex.name] = ("func", inst.funcs[ex.index])
        elif ex.kind == "memory":
            inst.exports[ex.name] = ("memory", inst.memories[ex.index])
        elif ex.kind == "table":
            inst.exports[ex.name] = ("table", inst.tables[ex.index])
        else:
            inst.exports[ex.name] = ("global", inst.globals[ex.index])
    return inst


def run_start(inst: Instance) -> None:
    if inst.module.start is not None:
        inst.engine.invoke(inst.funcs[inst.module.start], [])


# -- function decoding --


@dataclass
class _DecodedFunc:
    param_count: int
    result_count: int
    local_types: list[str]
    ops: list[tuple]  # (key, a, b)


def _block_arity(module: WasmModule, bt) -> tuple[int, int]:
    if bt == "empty":
        return 0, 0
    if isinstance(bt, str):
        return 0, 1
    ft = module.types[bt]
    return len(ft.params), len(ft.results)


def _decode_function(module: WasmModule, func_index: int) -> _DecodedFunc:
    f = module.defined_function(func_index)
    ft = module.types[f.type_index]
    ops: list[tuple] = []
    # first pass: flatten instructions
    raw: list = []
    for ins in walk(f.body):
        raw.append(ins)
    # map byte offsets to op positions for control matching
    control_stack: list[tuple[str, int]] = []
    patches: dict[int, dict] = {}
    for pos, ins in enumerate(raw):
        if ins.name in ("block", "loop", "if"):
            control_stack.append((ins.name, pos))
            patches[pos] = {"else": None, "end": None}
        elif ins.name == "else":
            kind, open_pos = control_stack[-1]
            patches[open_pos]["else"] = pos
        elif ins.name == "end":
            if control_stack:
                _, open_pos = control_stack.pop()
                patches[open_pos]["end"] = pos

    for pos, ins in enumerate(raw):
        key = ins.opcode if ins.subop is None else 0xFC00 + ins.subop
        a = b = None
        name = ins.name
        if name in ("block", "loop", "if"):
            np, nr = _block_arity(module, ins.imms[0].value)
            end_pos = patches[pos]["end"]
            if name == "if":
                a = (np, nr)
                b = (patches[pos]["else"], end_pos)
            elif name == "loop":
                a = (np, nr)
                b = pos  # label target re-enters after the loop opcode
            else:
                a = (np, nr)
                b = end_pos
        elif name == "else":
            # find enclosing end by scanning patches
            b = _enclosing_end(patches, pos)
        elif name in ("br", "br_if"):
            a = ins.imms[0].value
        elif name == "br_table":
            a, b = ins.imms[0].value  # (targets, default)
        elif name == "call":
            a = ins.imms[0].value
        elif name == "call_indirect":
            a = module.types[ins.imms[0].value]
            b = ins.imms[1].value
        elif name == "i32.const" or name == "i64.const":
            a = ins.imms[0].value
        elif name == "f32.const":
            a = struct.unpack("<f", ins.imms[0].value)[0]
        elif name == "f64.const":
            a = struct.unpack("<d", ins.imms[0].value)[0]
        elif ins.imms and ins.imms[0].kind == "memarg":
            a = ins.imms[0].value[1]  # static offset; alignment is a hint
            if len(ins.imms) > 1:
                b = ins.imms[1].value
        elif name == "ref.func":
            a = ins.imms[0].value
        elif name == "ref.null":
            a = None
        elif ins.imms:
            a = ins.imms[0].value
            if len(ins.imms) > 1:
                b = ins.imms[1].value
        ops.append((key, a, b))

    local_types = list(ft.params) + f.local_types()
    return _DecodedFunc(len(ft.params), len(ft.results), local_types, ops)


def _enclosing_end(patches: dict, else_pos: int) -> int:
    for open_pos, info in patches.items():
        if info.get("else") == else_pos:
            return info["end"]
    raise AssertionError("else without matching if")


# -- float helpers --


def _fdiv(a: float, b: float) -> float:
    if b == 0:
        if a == 0 or math.isnan(a):
            return math.nan
        sign = math.copysign(1.0, a) * math.copysign(1.0, b)
        return math.inf * sign
    try:
        return a / b
    except OverflowError:
        return math.inf * math.copysign(1.0, a) * math.copysign(1.0, b)


def _fmin(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == 0 and b == 0:
        return -0.0 if (math.copysign(1, a) < 0 or math.copysign(1, b) < 0) else 0.0
    return a if a < b else b


def _fmax(a: float, b: float) -> float:
    if math.isnan(a) or math.isnan(b):
        return math.nan
    if a == 0 and b == 0:
        return 0.0 if (math.copysign(1, a) > 0 or math.copysign(1, b) > 0) else -0.0
    return a if a > b else b


def _fsqrt(x: float) -> float:
    if math.isnan(x):
        return math.nan
    if x < 0:
        return math.nan
    return math.sqrt(x)


def _floor(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0:
        return x
    r = math.floor(x)
    return math.copysign(0.0, x) if r == 0 else float(r)


def _ceil(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0:
        return x
    r = math.ceil(x)
    return math.copysign(0.0, x) if r == 0 else float(r)


def _ftrunc(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0:
        return x
    r = math.trunc(x)
    return math.copysign(0.0, x) if r == 0 else float(r)


def _fnearest(x: float) -> float:
    if math.isnan(x) or math.isinf(x) or x == 0:
        return x
    if abs(x) >= 1 << 52:
        return x
    r = round(x)
    return math.copysign(0.0, x) if r == 0 else float(r)


def _trunc_int(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        raise Trap("invalid_conversion", "invalid conversion to integer")
    if math.isinf(x):
        raise Trap("integer_overflow", "integer overflow")
    t = math.trunc(x)
    if t < lo or t > hi:
        raise Trap("integer_overflow", "integer overflow")
    return t


def _trunc_sat(x: float, lo: int, hi: int) -> int:
    if math.isnan(x):
        return 0
    if math.isinf(x):
        return hi if x > 0 else lo
    t = math.trunc(x)
    return min(max(t, lo), hi)


def _idiv_s(a: int, b: int, int_min: int) -> int:
    if b == 0:
        raise Trap("divide_by_zero", "integer divide by zero")
    if a == int_min and b == -1:
        raise Trap("integer_overflow", "integer overflow")
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _irem_s(a: int, b: int) -> int:
    if b == 0:
        raise Trap("divide_by_zero", "integer divide by zero")
    r = abs(a) % abs(b)
    return -r if a < 0 else r


def _rotl(v: int, n: int, bits: int, mask: int) -> int:
    v &= mask
    n %= bits
    return ((v << n) | (v >> (bits - n))) & mask


def _clz(v: int, bits: int, mask: int) -> int:
    v &= mask
    return bits - v.bit_length()


def _ctz(v: int, bits: int, mask: int) -> int:
    v &= mask
    if v == 0:
        return bits
    return (v & -v).bit_length() - 1


# -- main execution loop --

_UNPACK = {}
for _k, _fmt, _w in [
    (0x28, "<i", 4), (0x29, "<q", 8), (0x2A, "<f", 4), (0x2B, "<d", 8),
    (0x2C, "<b", 1), (0x2D, "<B", 1), (0x2E, "<h", 2), (0x2F, "<H", 2),
    (0x30, "<b", 1), (0x31, "<B", 1), (0x32, "<h", 2), (0x33, "<H", 2),
    (0x34, "<i", 4), (0x35, "<I", 4),
]:
    _UNPACK[_k] = (struct.Struct(_fmt), _w)

_PACK = {}
for _k, _fmt, _w, _mask in [
    (0x36, "<i", 4, None), (0x37, "<q", 8, None), (0x38, "<f", 4, None), (0x39, "<d", 8, None),
    (0x3A, "<B", 1, 0xFF), (0x3B, "<H", 2, 0xFFFF),
    (0x3C, "<B", 1, 0xFF), (0x3D, "<H", 2, 0xFFFF), (0x3E, "<I", 4, M32),
]:
    _PACK[_k] = (struct.Struct(_fmt), _w, _mask)


def _run(engine: Engine, inst: Instance, func_index: int, args: list) -> list:
    fn = inst.decoded(func_index)
    locals_: list = list(args)
    for vt in fn.local_types[fn.param_count:]:
        locals_.append(default_value(vt))

    ops = fn.ops
    n_ops = len(ops)
    stack: list = []
    # label: (target_ip, arity, stack_base, is_loop)
    labels: list[tuple] = [(n_ops, fn.result_count, 0, False)]
    mem = inst.memories[0] if inst.memories else None
    mdata = mem.data if mem is not None else None
    ip = 0

    while ip < n_ops:
        key, a, b = ops[ip]
        ip += 1
        engine.fuel_left -= 1
        if engine.fuel_left < 0:
            raise Exhausted("fuel")
        engine.op_count += 1
        if engine.op_count & 0xFFF == 0:
            engine.check_wall()

        if key == 0x20:  # local.get
            stack.append(locals_[a])
        elif key == 0x21:  # local.set
            locals_[a] = stack.pop()
        elif key == 0x22:  # local.tee
            locals_[a] = stack[-1]
        elif key == 0x41 or key == 0x42 or key == 0x43 or key == 0x44:  # const
            stack.append(a)
        elif 0x45 <= key <= 0xC4:
            _numeric(key, stack)
        elif key == 0x02:  # block
            stack_base = len(stack) - a[0]
            labels.append((b + 1, a[1], stack_base, False))
        elif key == 0x03:  # loop
            stack_base = len(stack) - a[0]
            labels.append((b + 1, a[0], stack_base, True))
        elif key == 0x04:  # if
            cond = stack.pop()
            else_pos, end_pos = b
            stack_base = len(stack) - a[0]
            labels.append((end_pos + 1, a[1], stack_base, False))
            if not cond:
                ip = else_pos + 1 if else_pos is not None else end_pos
        elif key == 0x05:  # else (end of the true branch)
            ip = b
        elif key == 0x0B:  # end
            labels.pop()
            if not labels:
                break
        elif key == 0x0C:  # br
            ip = _branch(stack, labels, a)
        elif key == 0x0D:  # br_if
            if stack.pop():
                ip = _branch(stack, labels, a)
        elif key == 0x0E:  # br_table
            i = stack.pop() & M32
            depth = a[i] if i < len(a) else b
            ip = _branch(stack, labels, depth)
        elif key == 0x0F:  # return
            return stack[len(stack) - fn.result_count:] if fn.result_count else []
        elif key == 0x10:  # call
            callee = inst.funcs[a]
            ft = callee.functype
            np = len(ft.params)
            cargs = stack[len(stack) - np:] if np else []
            if np:
                del stack[len(stack) - np:]
            stack.extend(engine.invoke(callee, cargs))
        elif key == 0x11:  # call_indirect
            i = stack.pop() & M32
            table = inst.tables[b]
            if i >= len(table.elems):
                raise Trap("undefined_element", "undefined element")
            addr = table.elems[i]
            if addr is None:
                raise Trap("uninitialized_element", "uninitialized element")
            if addr.functype != a:
                raise Trap("indirect_call_type_mismatch", "indirect call type mismatch")
            np = len(a.params)
            cargs = stack[len(stack) - np:] if np else []
            if np:
                del stack[len(stack) - np:]
            if (engine.xcall_hook is not None and isinstance(addr, BoundFunction)
                    and addr.instance is not inst):
                stack.extend(engine.xcall_hook(inst, b, i, addr, cargs))
            else:
                stack.extend(engine.invoke(addr, cargs))
        elif key == 0x1A:  # drop
            stack.pop()
        elif key == 0x1B or key == 0x1C:  # select
            c = stack.pop()
            v2 = stack.pop()
            v1 = stack.pop()
            stack.append(v1 if c else v2)
        elif key == 0x23:  # global.get
            stack.append(inst.globals[a].value)
        elif key == 0x24:  # global.set
            inst.globals[a].value = stack.pop()
        elif 0x28 <= key <= 0x35:  # loads
            st, width = _UNPACK[key]
            ea = (stack[-1] & M32) + a
            if ea + width > len(mdata):
                raise Trap("oob_memory", "out of bounds memory access")
            stack[-1] = st.unpack_from(mdata, ea)[0]
        elif 0x36 <= key <= 0x3E:  # stores
            st, width, mask = _PACK[key]
            value = stack.pop()
            ea = (stack.pop() & M32) + a
            if ea + width > len(mdata):
                raise Trap("oob_memory", "out of bounds memory access")
            if mask is not None:
                value &= mask
            elif key == 0x38:
                value = f32_round(value)
            st.pack_into(mdata, ea, value)
        elif key == 0x3F:  # memory.size
            stack.append(mem.pages)
        elif key == 0x40:  # memory.grow
            delta = stack.pop() & M32
            stack.append(to_i32(mem.grow(delta)))
        elif key == 0x25:  # table.get
            table = inst.tables[a]
            i = stack.pop() & M32
            if i >= len(table.elems):
                raise Trap("oob_table", "out of bounds table access")
            stack.append(table.elems[i])
        elif key == 0x26:  # table.set
            table = inst.tables[a]
            v = stack.pop()
            i = stack.pop() & M32
            if i >= len(table.elems):
                raise Trap("oob_table", "out of bounds table access")
            table.elems[i] = v
        elif key == 0xD0:  # ref.null
            stack.append(None)
        elif key == 0xD1:  # ref.is_null
            stack.append(1 if stack.pop() is None else 0)
        elif key == 0xD2:  # ref.func
            stack.append(inst.funcs[a])
        elif key == 0x00:
            raise Trap("unreachable", "unreachable executed")
        elif key == 0x01:
            pass
        elif key >= 0xFC00:
            _misc(key - 0xFC00, a, b, stack, inst, mem, mdata)
        else:  # pragma: no cover - decode guarantees coverage
            raise Trap("internal", f"unhandled opcode {key:#x}")

    return stack[len(stack) - fn.result_count:] if fn.result_count else []


def _branch(stack: list, labels: list, depth: int) -> int:
    target, arity, base, is_loop = labels[-1 - depth]
    if arity:
        vals = stack[len(stack) - arity:]
        del stack[base:]
        stack.extend(vals)
    else:
        del stack[base:]
    if is_loop:
        if depth:
            del labels[len(labels) - depth:]
    else:
        del labels[len(labels) - 1 - depth:]
    return target


def _numeric(key: int, stack: list) -> None:
    # i32 comparisons / arithmetic
    if key == 0x45:
        stack[-1] = 1 if stack[-1] == 0 else 0
    elif key == 0x46:
        b = stack.pop(); stack[-1] = 1 if stack[-1] == b else 0
    elif key == 0x47:
        b = stack.pop(); stack[-1] = 1 if stack[-1] != b else 0
    elif key == 0x48:
        b = stack.pop(); stack[-1] = 1 if stack[-1] < b else 0
    elif key == 0x49:
        b = stack.pop() & M32; stack[-1] = 1 if (stack[-1] & M32) < b else 0
    elif key == 0x4A:
        b = stack.pop(); stack[-1] = 1 if stack[-1] > b else 0
    elif key == 0x4B:
        b = stack.pop() & M32; stack[-1] = 1 if (stack[-1] & M32) > b else 0
    elif key == 0x4C:
        b = stack.pop(); stack[-1] = 1 if stack[-1] <= b else 0
    elif key == 0x4D:
        b = stack.pop() & M32; stack[-1] = 1 if (stack[-1] & M32) <= b else 0
    elif key == 0x4E:
        b = stack.pop(); stack[-1] = 1 if stack[-1] >= b else 0
    elif key == 0x4F:
        b = stack.pop() & M32; stack[-1] = 1 if (stack[-1] & M32) >= b else 0
    # i64 comparisons
    elif key == 0x50:
        stack[-1] = 1 if stack[-1] == 0 else 0
    elif key == 0x51:
        b = stack.pop(); stack[-1] = 1 if stack[-1] == b else 0
    elif key == 0x52:
        b = stack.pop(); stack[-1] = 1 if stack[-1] != b else 0
    elif key == 0x53:
        b = stack.pop(); stack[-1] = 1 if stack[-1] < b else 0
    elif key == 0x54:
        b = stack.pop() & M64; stack[-1] = 1 if (stack[-1] & M64) < b else 0
    elif key == 0x55:
        b = stack.pop(); stack[-1] = 1 if stack[-1] > b else 0
    elif key == 0x56:
        b = stack.pop() & M64; stack[-1] = 1 if (stack[-1] & M64) > b else 0
    elif key == 0x57:
        b = stack.pop(); stack[-1] = 1 if stack[-1] <= b else 0
    elif key == 0x58:
        b = stack.pop() & M64; stack[-1] = 1 if (stack[-1] & M64) <= b else 0
    elif key == 0x59:
        b = stack.pop(); stack[-1] = 1 if stack[-1] >= b else 0
    elif key == 0x5A:
        b = stack.pop() & M64; stack[-1] = 1 if (stack[-1] & M64) >= b else 0
    # float comparisons
    elif 0x5B <= key <= 0x66:
        b = stack.pop()
        a = stack.pop()
        i = (key - 0x5B) % 6
        if math.isnan(a) or math.isnan(b):
            stack.append(1 if i == 1 else 0)  # only ne is true on NaN
        else:
            stack.append(1 if (
                a == b if i == 0 else a != b if i == 1 else
                a < b if i == 2 else a > b if i == 3 else
                a <= b if i == 4 else a >= b) else 0)
    # i32 arithmetic
    elif key == 0x67:
        stack[-1] = _clz(stack[-1], 32, M32)
    elif key == 0x68:
        stack[-1] = _ctz(stack[-1], 32, M32)
    elif key == 0x69:
        stack[-1] = (stack[-1] & M32).bit_count()
    elif key == 0x6A:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] + b)
    elif key == 0x6B:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] - b)
    elif key == 0x6C:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] * b)
    elif key == 0x6D:
        b = stack.pop(); stack[-1] = _idiv_s(stack[-1], b, I32_MIN)
    elif key == 0x6E:
        b = stack.pop() & M32
        if b == 0:
            raise Trap("divide_by_zero", "integer divide by zero")
        stack[-1] = to_i32((stack[-1] & M32) // b)
    elif key == 0x6F:
        b = stack.pop(); stack[-1] = _irem_s(stack[-1], b)
    elif key == 0x70:
        b = stack.pop() & M32
        if b == 0:
            raise Trap("divide_by_zero", "integer divide by zero")
        stack[-1] = to_i32((stack[-1] & M32) % b)
    elif key == 0x71:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] & b)
    elif key == 0x72:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] | b)
    elif key == 0x73:
        b = stack.pop(); stack[-1] = to_i32(stack[-1] ^ b)
    elif key == 0x74:
        b = stack.pop() & 31; stack[-1] = to_i32(stack[-1] << b)
    elif key == 0x75:
        b = stack.pop() & 31; stack[-1] = stack[-1] >> b
    elif key == 0x76:
        b = stack.pop() & 31; stack[-1] = to_i32((stack[-1] & M32) >> b)
    elif key == 0x77:
        b = stack.pop() & 31; stack[-1] = to_i32(_rotl(stack[-1], b, 32, M32))
    elif key == 0x78:
        b = stack.pop() & 31; stack[-1] = to_i32(_rotl(stack[-1], 32 - b, 32, M32))
    # i64 arithmetic
    elif key == 0x79:
        stack[-1] = _clz(stack[-1], 64, M64)
    elif key == 0x7A:
        stack[-1] = _ctz(stack[-1], 64, M64)
    elif key == 0x7B:
        stack[-1] = (stack[-1] & M64).bit_count()
    elif key == 0x7C:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] + b)
    elif key == 0x7D:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] - b)
    elif key == 0x7E:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] * b)
    elif key == 0x7F:
        b = stack.pop(); stack[-1] = _idiv_s(stack[-1], b, I64_MIN)
    elif key == 0x80:
        b = stack.pop() & M64
        if b == 0:
            raise Trap("divide_by_zero", "integer divide by zero")
        stack[-1] = to_i64((stack[-1] & M64) // b)
    elif key == 0x81:
        b = stack.pop(); stack[-1] = _irem_s(stack[-1], b)
    elif key == 0x82:
        b = stack.pop() & M64
        if b == 0:
            raise Trap("divide_by_zero", "integer divide by zero")
        stack[-1] = to_i64((stack[-1] & M64) % b)
    elif key == 0x83:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] & b)
    elif key == 0x84:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] | b)
    elif key == 0x85:
        b = stack.pop(); stack[-1] = to_i64(stack[-1] ^ b)
    elif key == 0x86:
        b = stack.pop() & 63; stack[-1] = to_i64(stack[-1] << b)
    elif key == 0x87:
        b = stack.pop() & 63; stack[-1] = stack[-1] >> b
    elif key == 0x88:
        b = stack.pop() & 63; stack[-1] = to_i64((stack[-1] & M64) >> b)
    elif key == 0x89:
        b = stack.pop() & 63; stack[-1] = to_i64(_rotl(stack[-1], b, 64, M64))
    elif key == 0x8A:
        b = stack.pop() & 63; stack[-1] = to_i64(_rotl(stack[-1], 64 - b, 64, M64))
    # f32 arithmetic
    elif key == 0x8B:
        stack[-1] = abs(stack[-1])
    elif key == 0x8C:
        stack[-1] = -stack[-1]
    elif key == 0x8D:
        stack[-1] = _ceil(stack[-1])
    elif key == 0x8E:
        stack[-1] = _floor(stack[-1])
    elif key == 0x8F:
        stack[-1] = _ftrunc(stack[-1])
    elif key == 0x90:
        stack[-1] = _fnearest(stack[-1])
    elif key == 0x91:
        stack[-1] = f32_round(_fsqrt(stack[-1]))
    elif key == 0x92:
        b = stack.pop(); stack[-1] = f32_round(stack[-1] + b)
    elif key == 0x93:
        b = stack.pop(); stack[-1] = f32_round(stack[-1] - b)
    elif key == 0x94:
        b = stack.pop(); stack[-1] = f32_round(stack[-1] * b)
    elif key == 0x95:
        b = stack.pop(); stack[-1] = f32_round(_fdiv(stack[-1], b))
    elif key == 0x96:
        b = stack.pop(); stack[-1] = _fmin(stack[-1], b)
    elif key == 0x97:
        b = stack.pop(); stack[-1] = _fmax(stack[-1], b)
    elif key == 0x98:
        b = stack.pop(); stack[-1] = math.copysign(stack[-1], b)
    # f64 arithmetic
    elif key == 0x99:
        stack[-1] = abs(stack[-1])
    elif key == 0x9A:
        stack[-1] = -stack[-1]
    elif key == 0x9B:
        stack[-1] = _ceil(stack[-1])
    elif key == 0x9C:
        stack[-1] = _floor(stack[-1])
    elif key == 0x9D:
        stack[-1] = _ftrunc(stack[-1])
    elif key == 0x9E:
        stack[-1] = _fnearest(stack[-1])
    elif key == 0x9F:
        stack[-1] = _fsqrt(stack[-1])
    elif key == 0xA0:
        b = stack.pop(); stack[-1] = stack[-1] + b
    elif key == 0xA1:
        b = stack.pop(); stack[-1] = stack[-1] - b
    elif key == 0xA2:
        b = stack.pop(); stack[-1] = stack[-1] * b
    elif key == 0xA3:
        b = stack.pop(); stack[-1] = _fdiv(stack[-1], b)
    elif key == 0xA4:
        b = stack.pop(); stack[-1] = _fmin(stack[-1], b)
    elif key == 0xA5:
        b = stack.pop(); stack[-1] = _fmax(stack[-1], b)
    elif key == 0xA6:
        b = stack.pop(); stack[-1] = math.copysign(stack[-1], b)
    # conversions
    elif key == 0xA7:
        stack[-1] = to_i32(stack[-1])
    elif key == 0xA8 or key == 0xAA:
        stack[-1] = _trunc_int(stack[-1], I32_MIN, I32_MAX)
    elif key == 0xA9 or key == 0xAB:
        stack[-1] = to_i32(_trunc_int(stack[-1], 0, M32))
    elif key == 0xAC:
        pass  # canonical signed representation is already correct
    elif key == 0xAD:
        stack[-1] = stack[-1] & M32
    elif key == 0xAE or key == 0xB0:
        stack[-1] = _trunc_int(stack[-1], I64_MIN, I64_MAX)
    elif key == 0xAF or key == 0xB1:
        stack[-1] = to_i64(_trunc_int(stack[-1], 0, M64))
    elif key == 0xB2:
        stack[-1] = f32_round(float(stack[-1]))
    elif key == 0xB3:
        stack[-1] = f32_round(float(stack[-1] & M32))
    elif key == 0xB4:
        stack[-1] = f32_round(float(stack[-1]))
    elif key == 0xB5:
        stack[-1] = f32_round(float(stack[-1] & M64))
    elif key == 0xB6:
        stack[-1] = f32_round(stack[-1])
    elif key == 0xB7:
        stack[-1] = float(stack[-1])
    elif key == 0xB8:
        stack[-1] = float(stack[-1] & M32)
    elif key == 0xB9:
        stack[-1] = float(stack[-1])
    elif key == 0xBA:
        stack[-1] = float(stack[-1] & M64)
    elif key == 0xBB:
        pass  # f32 -> f64 is exact
    elif key == 0xBC:
        stack[-1] = struct.unpack("<i", struct.pack("<f", stack[-1]))[0]
    elif key == 0xBD:
        stack[-1] = struct.unpack("<q", struct.pack("<d", stack[-1]))[0]
    elif key == 0xBE:
        stack[-1] = struct.unpack("<f", struct.pack("<i", stack[-1]))[0]
    elif key == 0xBF:
        stack[-1] = struct.unpack("<d", struct.pack("<q", stack[-1]))[0]
    # sign extension
    elif key == 0xC0:
        v = stack[-1] & 0xFF; stack[-1] = v - 0x100 if v & 0x80 else v
    elif key == 0xC1:
        v = stack[-1] & 0xFFFF; stack[-1] = v - 0x10000 if v & 0x8000 else v
    elif key == 0xC2:
        v = stack[-1] & 0xFF; stack[-1] = v - 0x100 if v & 0x80 else v
    elif key == 0xC3:
        v = stack[-1] & 0xFFFF; stack[-1] = v - 0x10000 if v & 0x8000 else v
    elif key == 0xC4:
        v = stack[-1] & M32; stack[-1] = v - 0x100000000 if v & 0x80000000 else v
    else:  # pragma: no cover
        raise Trap("internal", f"unhandled numeric opcode {key:#x}")


def _misc(sub: int, a, b, stack: list, inst: Instance, mem, mdata) -> None:
    if sub <= 7:  # saturating truncations
        x = stack[-1]
        if sub in (0, 2):
            stack[-1] = _trunc_sat(x, I32_MIN, I32_MAX)
        elif sub in (1, 3):
            stack[-1] = to_i32(_trunc_sat(x, 0, M32))
        elif sub in (4, 6):
            stack[-1] = _trunc_sat(x, I64_MIN, I64_MAX)
        else:
            stack[-1] = to_i64(_trunc_sat(x, 0, M64))
    elif sub == 8:  # memory.init
        n = stack.pop() & M32
        s = stack.pop() & M32
        d = stack.pop() & M32
        seg = inst.data_store[a]
        if s + n > len(seg) or d + n > len(mdata):
            raise Trap("oob_memory", "out of bounds memory access")
        mdata[d:d + n] = seg[s:s + n]
    elif sub == 9:  # data.drop
        inst.data_store[a] = b""
    elif sub == 10:  # memory.copy
        n = stack.pop() & M32
        s = stack.pop() & M32
        d = stack.pop() & M32
        if s + n > len(mdata) or d + n > len(mdata):
            raise Trap("oob_memory", "out of bounds memory access")
        mdata[d:d + n] = bytes(mdata[s:s + n])
    elif sub == 11:  # memory.fill
        n = stack.pop() & M32
        v = stack.pop() & 0xFF
        d = stack.pop() & M32
        if d + n > len(mdata):
            raise Trap("oob_memory", "out of bounds memory access")
        mdata[d:d + n] = bytes([v]) * n
    elif sub == 12:  # table.init
        n = stack.pop() & M32
        s = stack.pop() & M32
        d = stack.pop() & M32
        table = inst.tables[b]
        src = inst.elem_store[a]
        if s + n > len(src) or d + n > len(table.elems):
            raise Trap("oob_table", "out of bounds table access")
        table.elems[d:d + n] = src[s:s + n]
    elif sub == 13:  # elem.drop
        inst.elem_store[a] = []
    elif sub == 14:  # table.copy
        n = stack.pop() & M32
        s = stack.pop() & M32
        d = stack.pop() & M32
        dst, src = inst.tables[a], inst.tables[b]
        if s + n > len(src.elems) or d + n > len(dst.elems):
            raise Trap("oob_table", "out of bounds table access")
        dst.elems[d:d + n] = list(src.elems[s:s + n])
    elif sub == 15:  # table.grow
        delta = stack.pop() & M32
        init = stack.pop()
        stack.append(to_i32(inst.tables[a].grow(delta, init)))
    elif sub == 16:  # table.size
        stack.append(len(inst.tables[a].elems))
    elif sub == 17:  # table.fill
        n = stack.pop() & M32
        v = stack.pop()
        d = stack.pop() & M32
        table = inst.tables[a]
        if d + n > len(table.elems):
            raise Trap("oob_table", "out of bounds table access")
        table.elems[d:d + n] = [v] * n
    else:  # pragma: no cover
        raise Trap("internal", f"unhandled misc opcode {sub}")
