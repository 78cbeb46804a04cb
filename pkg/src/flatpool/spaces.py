"""Nested observation/action spaces and their packed byte codecs.

A space tree is built from three leaf kinds (:class:`Discrete`,
:class:`MultiDiscrete`, :class:`Box`) and two composites
(:class:`TupleSpace`, :class:`MapSpace`). :func:`infer_layout` assigns every
leaf a fixed slice of one flat byte record; :func:`flatten` and
:func:`unflatten` move values in and out of that record without loss.

Wire conventions, fixed for every host:

* little-endian, packed (no alignment padding between leaves);
* discrete components are stored as signed 32-bit integers;
* map children are visited in ascending byte order of their UTF-8 keys.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from typing import Any, Iterator, Mapping, Sequence, Union

import numpy as np

from flatpool.errors import (
    InvalidSpace,
    LengthMismatch,
    RangeError,
    ShapeMismatch,
    UnsupportedSpace,
)

# element kind -> little-endian numpy type string
ELEM_KINDS = {
    "float32": "<f4",
    "float64": "<f8",
    "int8": "|i1",
    "uint8": "|u1",
    "int16": "<i2",
    "int32": "<i4",
    "int64": "<i8",
}
DISCRETE_KIND = "int32"


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, (bool, np.bool_))


def _key_order(key: str) -> bytes:
    return key.encode("utf-8")


class Discrete:
    """Integers ``0 .. n-1``."""

    __slots__ = ("n",)

    def __init__(self, n: int):
        if not _is_int(n) or n < 1:
            raise InvalidSpace(f"Discrete needs an integer n >= 1, got {n!r}")
        object.__setattr__(self, "n", int(n))

    def __setattr__(self, name, value):
        raise AttributeError("spaces are immutable")

    def __eq__(self, other):
        return type(other) is Discrete and other.n == self.n

    def __hash__(self):
        return hash(("Discrete", self.n))

    def __repr__(self):
        return f"Discrete({self.n})"


class MultiDiscrete:
    """A vector of independent discrete components."""

    __slots__ = ("nvec",)

    def __init__(self, nvec: Sequence[int]):
        nvec = tuple(nvec)
        if not nvec or not all(_is_int(n) and n >= 1 for n in nvec):
            raise InvalidSpace(f"MultiDiscrete needs a non-empty sequence of integers >= 1, got {nvec!r}")
        object.__setattr__(self, "nvec", tuple(int(n) for n in nvec))

    def __setattr__(self, name, value):
        raise AttributeError("spaces are immutable")

    def __eq__(self, other):
        return type(other) is MultiDiscrete and other.nvec == self.nvec

    def __hash__(self):
        return hash(("MultiDiscrete", self.nvec))

    def __repr__(self):
        return f"MultiDiscrete({list(self.nvec)})"


def _normalize_bound(bound, shape, kind, default):
    count = math.prod(shape)
    cast = float if kind.startswith("float") else int
    if bound is None:
        return cast(default)
    arr = np.asarray(bound)
    if arr.ndim == 0:
        return cast(arr.item())
    try:
        arr = np.broadcast_to(arr, shape).reshape(-1)
    except ValueError:
        raise InvalidSpace(f"Box bound of shape {arr.shape} does not fit shape {shape}") from None
    if count and np.all(arr == arr[0]):
        return cast(arr[0].item())
    return tuple(cast(v) for v in arr.tolist())


class Box:
    """A dense numeric array of fixed shape and element kind.

    Bounds are descriptive only: they steer :func:`sample` but are not
    enforced when flattening.
    """

    __slots__ = ("shape", "dtype", "low", "high")

    def __init__(self, shape: Sequence[int] = (), dtype: str = "float32", low=None, high=None):
        if isinstance(shape, (int, np.integer)):
            shape = (shape,)
        shape = tuple(shape)
        if not all(_is_int(d) and d >= 0 for d in shape):
            raise InvalidSpace(f"Box shape must hold non-negative integers, got {shape!r}")
        shape = tuple(int(d) for d in shape)
        kind = np.dtype(dtype).name if not isinstance(dtype, str) else dtype
        if kind not in ELEM_KINDS:
            raise InvalidSpace(f"unsupported Box element kind {dtype!r}")
        if kind.startswith("float"):
            lo_default, hi_default = -math.inf, math.inf
        else:
            info = np.iinfo(kind)
            lo_default, hi_default = int(info.min), int(info.max)
        lo = _normalize_bound(low, shape, kind, lo_default)
        hi = _normalize_bound(high, shape, kind, hi_default)
        if np.any(np.asarray(lo) > np.asarray(hi)):
            raise InvalidSpace("Box low exceeds high")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "dtype", kind)
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    def __setattr__(self, name, value):
        raise AttributeError("spaces are immutable")

    @property
    def element_count(self) -> int:
        return math.prod(self.shape)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-element bounds broadcast to ``shape``."""
        kind = np.float64 if self.dtype.startswith("float") else np.int64

        def expand(b):
            arr = np.asarray(b, dtype=kind)
            return np.broadcast_to(arr.reshape(-1) if arr.ndim else arr, (self.element_count,)).reshape(self.shape)

        return expand(self.low), expand(self.high)

    def __eq__(self, other):
        return (
            type(other) is Box
            and other.shape == self.shape
            and other.dtype == self.dtype
            and other.low == self.low
            and other.high == self.high
        )

    def __hash__(self):
        return hash(("Box", self.shape, self.dtype, self.low, self.high))

    def __repr__(self):
        return f"Box({list(self.shape)}, {self.dtype})"


class TupleSpace:
    """Ordered composite; children are visited by index."""

    __slots__ = ("children",)

    def __init__(self, *children):
        for c in children:
            if not isinstance(c, SPACE_TYPES):
                raise InvalidSpace(f"TupleSpace child is not a space: {c!r}")
        object.__setattr__(self, "children", tuple(children))

    def __setattr__(self, name, value):
        raise AttributeError("spaces are immutable")

    def __len__(self):
        return len(self.children)

    def __getitem__(self, i):
        return self.children[i]

    def __eq__(self, other):
        return type(other) is TupleSpace and other.children == self.children

    def __hash__(self):
        return hash(("Tuple", self.children))

    def __repr__(self):
        return "TupleSpace(" + ", ".join(map(repr, self.children)) + ")"


class MapSpace:
    """Keyed composite. Iteration order is always ascending UTF-8 byte order
    of the keys, whatever order they were supplied in."""

    __slots__ = ("children",)

    def __init__(self, children: Union[Mapping[str, Any], Sequence[tuple[str, Any]]] = ()):
        pairs = list(children.items()) if isinstance(children, Mapping) else list(children)
        seen = set()
        for key, child in pairs:
            if not isinstance(key, str):
                raise InvalidSpace(f"MapSpace keys must be text, got {key!r}")
            if key in seen:
                raise InvalidSpace(f"duplicate MapSpace key {key!r}")
            seen.add(key)
            if not isinstance(child, SPACE_TYPES):
                raise InvalidSpace(f"MapSpace child {key!r} is not a space")
        pairs.sort(key=lambda kv: _key_order(kv[0]))
        object.__setattr__(self, "children", tuple(pairs))

    def __setattr__(self, name, value):
        raise AttributeError("spaces are immutable")

    def keys(self) -> list[str]:
        return [k for k, _ in self.children]

    def items(self):
        return list(self.children)

    def __len__(self):
        return len(self.children)

    def __getitem__(self, key):
        for k, child in self.children:
            if k == key:
                return child
        raise KeyError(key)

    def __eq__(self, other):
        return type(other) is MapSpace and other.children == self.children

    def __hash__(self):
        return hash(("Map", self.children))

    def __repr__(self):
        return "MapSpace({" + ", ".join(f"{k!r}: {c!r}" for k, c in self.children) + "})"


SPACE_TYPES = (Discrete, MultiDiscrete, Box, TupleSpace, MapSpace)
LEAF_TYPES = (Discrete, MultiDiscrete, Box)
Space = Union[Discrete, MultiDiscrete, Box, TupleSpace, MapSpace]


def iter_leaves(space: Space, path: tuple = ()) -> Iterator[tuple[tuple, Space]]:
    """Depth-first leaves in canonical order as ``(path, leaf)`` pairs."""
    if isinstance(space, LEAF_TYPES):
        yield path, space
    elif isinstance(space, TupleSpace):
        for i, child in enumerate(space.children):
            yield from iter_leaves(child, path + (i,))
    elif isinstance(space, MapSpace):
        for key, child in space.children:
            yield from iter_leaves(child, path + (key,))
    else:
        raise InvalidSpace(f"not a space: {space!r}")


# -- layout ------------------------------------------------------------------


@dataclass(frozen=True)
class LeafDescriptor:
    path: tuple
    space: Space
    elem_kind: str
    shape: tuple
    element_count: int
    byte_offset: int
    byte_length: int

    @property
    def wire_dtype(self) -> np.dtype:
        return np.dtype(ELEM_KINDS[self.elem_kind])


@dataclass(frozen=True)
class FlatLayout:
    leaves: tuple[LeafDescriptor, ...]
    total_bytes: int
    homogeneous_kind: str | None

    def numpy_dtype(self) -> np.dtype:
        """Packed structured dtype with one field per leaf, named by its
        dotted path (``"value"`` for a root leaf)."""
        names, formats, offsets = [], [], []
        for leaf in self.leaves:
            names.append(".".join(str(p) for p in leaf.path) or "value")
            formats.append((leaf.wire_dtype, leaf.shape))
            offsets.append(leaf.byte_offset)
        return np.dtype(
            {"names": names, "formats": formats, "offsets": offsets, "itemsize": self.total_bytes}
        )


def _leaf_kind_shape(leaf: Space) -> tuple[str, tuple, int]:
    if isinstance(leaf, Discrete):
        return DISCRETE_KIND, (), 1
    if isinstance(leaf, MultiDiscrete):
        return DISCRETE_KIND, (len(leaf.nvec),), len(leaf.nvec)
    return leaf.dtype, leaf.shape, leaf.element_count


@functools.lru_cache(maxsize=256)
def infer_layout(space: Space) -> FlatLayout:
    """Assign each leaf a packed byte slice, in canonical depth-first order."""
    if not isinstance(space, SPACE_TYPES):
        raise InvalidSpace(f"not a space: {space!r}")
    leaves = []
    offset = 0
    for path, leaf in iter_leaves(space):
        kind, shape, count = _leaf_kind_shape(leaf)
        length = count * np.dtype(ELEM_KINDS[kind]).itemsize
        leaves.append(LeafDescriptor(path, leaf, kind, shape, count, offset, length))
        offset += length
    kinds = {leaf.elem_kind for leaf in leaves}
    return FlatLayout(tuple(leaves), offset, kinds.pop() if len(kinds) == 1 else None)


# -- conformance ---------------------------------------------------------------


def check_value(value, space: Space, path: tuple = ()) -> None:
    """Raise :class:`ShapeMismatch` unless ``value`` conforms to ``space``."""
    if isinstance(space, Discrete):
        v = value
        if isinstance(v, np.ndarray):
            if v.shape not in ((), (1,)) or v.dtype.kind not in "iu":
                raise ShapeMismatch(f"expected an integer, got array {v.dtype}{v.shape}", path)
            v = v.reshape(-1)[0]
        if not _is_int(v):
            raise ShapeMismatch(f"expected an integer, got {type(value).__name__}", path)
        if not 0 <= v < space.n:
            raise ShapeMismatch(f"{int(v)} outside [0, {space.n})", path)
    elif isinstance(space, MultiDiscrete):
        arr = np.asarray(value)
        if arr.shape != (len(space.nvec),) or (arr.size and arr.dtype.kind not in "iu"):
            raise ShapeMismatch(f"expected {len(space.nvec)} integers, got {arr.dtype}{arr.shape}", path)
        if np.any(arr < 0) or np.any(arr >= np.asarray(space.nvec)):
            raise ShapeMismatch(f"component outside {list(space.nvec)}", path)
    elif isinstance(space, Box):
        if isinstance(value, np.ndarray):
            if value.dtype.newbyteorder("=") != np.dtype(space.dtype).newbyteorder("="):
                raise ShapeMismatch(f"expected {space.dtype}, got {value.dtype}", path)
            arr = value
        else:
            arr = np.asarray(value)
            if arr.dtype.kind not in "iuf" or (arr.dtype.kind == "f" and not space.dtype.startswith("float")):
                raise ShapeMismatch(f"expected {space.dtype}-compatible numbers, got {arr.dtype}", path)
        if arr.shape != space.shape:
            raise ShapeMismatch(f"expected shape {space.shape}, got {arr.shape}", path)
    elif isinstance(space, TupleSpace):
        if not isinstance(value, (tuple, list)) or len(value) != len(space.children):
            raise ShapeMismatch(f"expected a sequence of {len(space.children)}", path)
        for i, (v, child) in enumerate(zip(value, space.children)):
            check_value(v, child, path + (i,))
    elif isinstance(space, MapSpace):
        if not isinstance(value, Mapping):
            raise ShapeMismatch(f"expected a mapping, got {type(value).__name__}", path)
        keys = space.keys()
        if set(value.keys()) != set(keys):
            raise ShapeMismatch(f"expected keys {keys}, got {sorted(value.keys())}", path)
        for key, child in space.children:
            check_value(value[key], child, path + (key,))
    else:
        raise InvalidSpace(f"not a space: {space!r}")


def conforms(value, space: Space) -> bool:
    try:
        check_value(value, space)
    except ShapeMismatch:
        return False
    return True


# -- codec -----------------------------------------------------------------------


def _getter(path: tuple):
    if not path:
        return lambda v: v
    if len(path) == 1:
        (k,) = path
        return lambda v: v[k]

    def get(v):
        for k in path:
            v = v[k]
        return v

    return get


def _builder(space: Space):
    """Return ``build(leaf_values_iterator) -> structured value``."""
    if isinstance(space, LEAF_TYPES):
        return next
    if isinstance(space, TupleSpace):
        subs = [_builder(c) for c in space.children]
        return lambda it: tuple(b(it) for b in subs)
    subs = [(k, _builder(c)) for k, c in space.children]
    return lambda it: {k: b(it) for k, b in subs}


class Codec:
    """Compiled flatten/unflatten pair for one space."""

    def __init__(self, space: Space):
        self.space = space
        self.layout = infer_layout(space)
        self._plan = [
            (_getter(leaf.path), leaf.wire_dtype, leaf) for leaf in self.layout.leaves
        ]
        self._build = _builder(space)

    def flatten(self, value, out=None, check: bool = True) -> np.ndarray:
        """Pack ``value``; write into ``out`` (a writable byte region) if given."""
        if check:
            check_value(value, self.space)
        total = self.layout.total_bytes
        if out is None:
            buf = np.empty(total, dtype=np.uint8)
        else:
            buf = np.frombuffer(out, dtype=np.uint8) if not isinstance(out, np.ndarray) else out.reshape(-1).view(np.uint8)
            if buf.size != total:
                raise LengthMismatch(f"output region is {buf.size} bytes, layout needs {total}")
        for get, wire, leaf in self._plan:
            if leaf.byte_length == 0:
                continue
            src = np.ascontiguousarray(get(value), dtype=wire).reshape(-1)
            buf[leaf.byte_offset:leaf.byte_offset + leaf.byte_length] = src.view(np.uint8)
        return buf

    def unflatten(self, buf, check: bool = True):
        """Decode a packed record. Discrete components outside their range
        raise :class:`RangeError` when ``check`` is set."""
        raw = buf if isinstance(buf, np.ndarray) else np.frombuffer(buf, dtype=np.uint8)
        raw = raw.reshape(-1).view(np.uint8)
        if raw.size != self.layout.total_bytes:
            raise LengthMismatch(f"buffer is {raw.size} bytes, layout needs {self.layout.total_bytes}")
        values = []
        for _, wire, leaf in self._plan:
            arr = raw[leaf.byte_offset:leaf.byte_offset + leaf.byte_length].view(wire)
            arr = arr.astype(wire.newbyteorder("="), copy=True)
            space = leaf.space
            if isinstance(space, Discrete):
                v = int(arr[0])
                if check and not 0 <= v < space.n:
                    raise RangeError(f"discrete value {v} outside [0, {space.n}) at {leaf.path}")
                values.append(v)
            elif isinstance(space, MultiDiscrete):
                if check and (np.any(arr < 0) or np.any(arr >= np.asarray(space.nvec))):
                    raise RangeError(f"multidiscrete value {arr.tolist()} outside {list(space.nvec)} at {leaf.path}")
                values.append(arr.astype(np.int64))
            else:
                values.append(arr.reshape(leaf.shape))
        return self._build(iter(values))


@functools.lru_cache(maxsize=256)
def codec_for(space: Space) -> Codec:
    return Codec(space)


def flatten(value, space: Space, layout: FlatLayout | None = None, out=None) -> np.ndarray:
    """Pack ``value`` into ``layout.total_bytes`` little-endian bytes."""
    codec = codec_for(space)
    if layout is not None and layout != codec.layout:
        raise InvalidSpace("layout was not inferred from this space")
    return codec.flatten(value, out=out)


def unflatten(buf, space: Space, layout: FlatLayout | None = None):
    codec = codec_for(space)
    if layout is not None and layout != codec.layout:
        raise InvalidSpace("layout was not inferred from this space")
    return codec.unflatten(buf)


def struct_equal(a, b) -> bool:
    """Bit-exact structural equality of two space values (NaN-safe)."""
    if isinstance(a, Mapping) or isinstance(b, Mapping):
        if not (isinstance(a, Mapping) and isinstance(b, Mapping)) or set(a) != set(b):
            return False
        return all(struct_equal(a[k], b[k]) for k in a)
    if isinstance(a, (tuple, list)) or isinstance(b, (tuple, list)):
        if not (isinstance(a, (tuple, list)) and isinstance(b, (tuple, list))) or len(a) != len(b):
            return False
        return all(struct_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        if a.shape != b.shape:
            return False
        if a.dtype.kind == "f" or b.dtype.kind == "f":
            if a.dtype.newbyteorder("=") != b.dtype.newbyteorder("="):
                return False
            return np.ascontiguousarray(a).tobytes() == np.ascontiguousarray(b).tobytes()
        return bool(np.array_equal(a, b))
    return a == b


# -- multidiscrete action conversion ---------------------------------------------


@dataclass(frozen=True)
class MultiDiscreteSpec:
    """Flat action description: one choice count per component.

    ``leaf_paths[i]`` is ``(leaf path, position)``; position is ``None`` for
    a :class:`Discrete` leaf and the index within a :class:`MultiDiscrete`.
    """

    nvec: tuple[int, ...]
    leaf_paths: tuple[tuple[tuple, int | None], ...]

    def __len__(self):
        return len(self.nvec)


def action_to_multidiscrete(space: Space) -> MultiDiscreteSpec:
    nvec, paths = [], []
    for path, leaf in iter_leaves(space):
        if isinstance(leaf, Box):
            raise UnsupportedSpace(f"continuous action leaf at {path or '<root>'} is not supported")
        if isinstance(leaf, Discrete):
            nvec.append(leaf.n)
            paths.append((path, None))
        else:
            for i, n in enumerate(leaf.nvec):
                nvec.append(n)
                paths.append((path, i))
    return MultiDiscreteSpec(tuple(nvec), tuple(paths))


def _action_decoder(space: Space):
    """Return ``decode(vec, pos) -> (value, next_pos)``."""
    if isinstance(space, Discrete):
        return lambda vec, pos: (int(vec[pos]), pos + 1)
    if isinstance(space, MultiDiscrete):
        k = len(space.nvec)
        return lambda vec, pos: (np.asarray(vec[pos:pos + k], dtype=np.int64), pos + k)
    if isinstance(space, TupleSpace):
        subs = [_action_decoder(c) for c in space.children]

        def dec_tuple(vec, pos):
            out = []
            for d in subs:
                v, pos = d(vec, pos)
                out.append(v)
            return tuple(out), pos

        return dec_tuple
    if isinstance(space, MapSpace):
        subs = [(k, _action_decoder(c)) for k, c in space.children]

        def dec_map(vec, pos):
            out = {}
            for k, d in subs:
                out[k], pos = d(vec, pos)
            return out, pos

        return dec_map
    raise UnsupportedSpace(f"continuous action leaf {space!r} is not supported")


class ActionCodec:
    """Maps structured discrete actions to and from flat int32 vectors."""

    def __init__(self, space: Space):
        self.space = space
        self.spec = action_to_multidiscrete(space)
        self.nvec = np.asarray(self.spec.nvec, dtype=np.int32)
        self._getters = [_getter(p) for p, _ in self.spec.leaf_paths]
        self._decode = _action_decoder(space)

    def encode(self, action, check: bool = True) -> np.ndarray:
        if check:
            check_value(action, self.space)
        out = np.empty(len(self.nvec), dtype=np.int32)
        for i, (get, (_, pos)) in enumerate(zip(self._getters, self.spec.leaf_paths)):
            v = get(action)
            out[i] = v if pos is None else np.asarray(v).reshape(-1)[pos]
        return out

    def decode(self, vec, check: bool = True):
        vec = np.asarray(vec)
        if vec.shape != self.nvec.shape:
            raise LengthMismatch(f"expected {len(self.nvec)} action components, got shape {vec.shape}")
        if check and (np.any(vec < 0) or np.any(vec >= self.nvec)):
            raise RangeError(f"action {vec.tolist()} outside nvec {self.nvec.tolist()}")
        value, _ = self._decode(vec, 0)
        return value


@functools.lru_cache(maxsize=256)
def action_codec_for(space: Space) -> ActionCodec:
    return ActionCodec(space)


def encode_action(action, space: Space) -> np.ndarray:
    return action_codec_for(space).encode(action)


def decode_action(vec, space: Space):
    return action_codec_for(space).decode(vec)


# -- sampling ----------------------------------------------------------------------


def _sample(space: Space, rng: np.random.Generator):
    if isinstance(space, Discrete):
        return int(rng.integers(space.n))
    if isinstance(space, MultiDiscrete):
        return rng.integers(0, np.asarray(space.nvec)).astype(np.int64)
    if isinstance(space, Box):
        lo, hi = space.bounds()
        if space.dtype.startswith("float"):
            finite = np.isfinite(lo) & np.isfinite(hi)
            uniform = rng.uniform(np.where(finite, lo, 0.0), np.where(finite, hi, 1.0), size=space.shape)
            normal = np.clip(rng.normal(size=space.shape), lo, hi)
            return np.where(finite, uniform, normal).astype(space.dtype)
        return rng.integers(lo, hi, size=space.shape,
                            dtype=space.dtype, endpoint=True)
    if isinstance(space, TupleSpace):
        return tuple(_sample(c, rng) for c in space.children)
    if isinstance(space, MapSpace):
        return {k: _sample(c, rng) for k, c in space.children}
    raise InvalidSpace(f"not a space: {space!r}")


def sample(space: Space, seed: int | np.random.Generator | None = None):
    """Draw a conforming value; deterministic for a given integer seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _sample(space, rng)


# -- JSON form ---------------------------------------------------------------------


def _bound_to_json(b):
    if isinstance(b, tuple):
        return [_bound_to_json(v) for v in b]
    if isinstance(b, float) and math.isinf(b):
        return "inf" if b > 0 else "-inf"
    return b


def _bound_from_json(b):
    if isinstance(b, list):
        return [_bound_from_json(v) for v in b]
    if isinstance(b, str):
        return float(b)
    return b


def to_json(space: Space) -> dict:
    if isinstance(space, Discrete):
        return {"type": "Discrete", "n": space.n}
    if isinstance(space, MultiDiscrete):
        return {"type": "MultiDiscrete", "nvec": list(space.nvec)}
    if isinstance(space, Box):
        return {
            "type": "Box",
            "shape": list(space.shape),
            "dtype": space.dtype,
            "low": _bound_to_json(space.low),
            "high": _bound_to_json(space.high),
        }
    if isinstance(space, TupleSpace):
        return {"type": "Tuple", "children": [to_json(c) for c in space.children]}
    if isinstance(space, MapSpace):
        return {"type": "Map", "children": {k: to_json(c) for k, c in space.children}}
    raise InvalidSpace(f"not a space: {space!r}")


def from_json(obj: Mapping) -> Space:
    try:
        kind = obj["type"]
        if kind == "Discrete":
            return Discrete(obj["n"])
        if kind == "MultiDiscrete":
            return MultiDiscrete(obj["nvec"])
        if kind == "Box":
            return Box(
                obj["shape"],
                obj.get("dtype", "float32"),
                _bound_from_json(obj.get("low")),
                _bound_from_json(obj.get("high")),
            )
        if kind == "Tuple":
            return TupleSpace(*(from_json(c) for c in obj["children"]))
        if kind == "Map":
            children = obj["children"]
            pairs = children.items() if isinstance(children, Mapping) else children
            return MapSpace([(k, from_json(c)) for k, c in pairs])
    except (KeyError, TypeError) as exc:
        raise InvalidSpace(f"malformed space JSON: {exc}") from None
    raise InvalidSpace(f"unknown space type {obj.get('type')!r}")


def _no_duplicates(pairs):
    keys = [k for k, _ in pairs]
    if len(set(keys)) != len(keys):
        raise InvalidSpace(f"duplicate keys in JSON object: {keys}")
    return dict(pairs)


def dumps(space: Space) -> str:
    """Canonical JSON text (sorted keys, no whitespace variance)."""
    return json.dumps(to_json(space), sort_keys=True, separators=(",", ":"))


def loads(text: str) -> Space:
    return from_json(json.loads(text, object_pairs_hook=_no_duplicates))
