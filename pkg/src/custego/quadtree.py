"""CU quad-trees: kinds, z-order scan, depth queries and the side-info format.

A CTU tree is built from two immutable node types, :class:`Leaf` and
:class:`Split`. Children of a split are always ordered top-left, top-right,
bottom-left, bottom-right, which is also the coding (z-) order.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Union

import numpy as np

from .errors import FormatError

CTU = 64
SIDEINFO_MAGIC = b"CUSI"
SIDEINFO_VERSION = 1
_SI_HEADER = struct.Struct(">4sBHH")


class CuKind(enum.IntEnum):
    """CU shape; the integer value is the maximum depth (MD) of the CU."""

    S64 = 0
    S32 = 1
    S16 = 2
    S8_2Nx2N = 3
    S8_NxN = 4

    @property
    def size(self) -> int:
        return CTU >> min(int(self), 3)

    @property
    def tree_depth(self) -> int:
        return min(int(self), 3)

    @property
    def is_8x8(self) -> bool:
        return self >= CuKind.S8_2Nx2N


# fixed feature order used for counts and CBSSM vectors
CARRIER_KINDS = (CuKind.S32, CuKind.S16, CuKind.S8_2Nx2N, CuKind.S8_NxN)
_KIND_FOR_DEPTH = (CuKind.S64, CuKind.S32, CuKind.S16, CuKind.S8_2Nx2N)


@dataclass(frozen=True)
class Leaf:
    kind: CuKind


@dataclass(frozen=True)
class Split:
    children: tuple

    def __post_init__(self):
        if len(self.children) != 4:
            raise ValueError("a split node has exactly four children")


Node = Union[Leaf, Split]


def kind_for_depth(depth: int) -> CuKind:
    return _KIND_FOR_DEPTH[depth]


def uniform_split(kind: CuKind) -> Split:
    """Four equal leaves of ``kind``."""
    leaf = Leaf(kind)
    return Split((leaf, leaf, leaf, leaf))


def flip_node(kind: CuKind) -> Node:
    """The one-depth change that toggles a carrier bit.

    32/16/8-2Nx2N CUs split one level (8x8 splits its PU into 4x4 units);
    an 8x8 NxN CU merges back to 2Nx2N.
    """
    if kind == CuKind.S32:
        return uniform_split(CuKind.S16)
    if kind == CuKind.S16:
        return uniform_split(CuKind.S8_2Nx2N)
    if kind == CuKind.S8_2Nx2N:
        return Leaf(CuKind.S8_NxN)
    if kind == CuKind.S8_NxN:
        return Leaf(CuKind.S8_2Nx2N)
    raise ValueError("64x64 CUs are not carriers")


def validate_tree(node: Node, depth: int = 0) -> None:
    if isinstance(node, Split):
        if depth >= 3:
            raise ValueError(f"split below 8x8 at depth {depth}")
        for child in node.children:
            validate_tree(child, depth + 1)
    elif isinstance(node, Leaf):
        if node.kind.tree_depth != depth:
            raise ValueError(f"{node.kind.name} leaf at depth {depth}")
    else:
        raise TypeError(f"not a tree node: {node!r}")


@dataclass(frozen=True)
class StructureMap:
    """Per-frame forest of CTU trees in raster order."""

    width: int
    height: int
    ctus: tuple

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width % CTU or self.height % CTU:
            raise ValueError(f"structure dimensions must be multiples of {CTU}")
        if len(self.ctus) != self.cols * self.rows:
            raise ValueError("CTU count does not match the frame grid")
        for ctu in self.ctus:
            validate_tree(ctu)

    @property
    def cols(self) -> int:
        return -(-self.width // CTU)

    @property
    def rows(self) -> int:
        return -(-self.height // CTU)

    def ctu_origin(self, index: int) -> tuple:
        return (index % self.cols) * CTU, (index // self.cols) * CTU

    def ctu_index(self, x: int, y: int) -> int:
        return (y // CTU) * self.cols + x // CTU

    @classmethod
    def uniform(cls, width: int, height: int, node: Node = Leaf(CuKind.S64)) -> "StructureMap":
        n = (-(-width // CTU)) * (-(-height // CTU))
        return cls(width, height, (node,) * n)


class CuRef(NamedTuple):
    frame: int
    x: int
    y: int
    size: int
    kind: CuKind
    k: int

    @property
    def rect(self) -> tuple:
        return self.x, self.y, self.size


def iter_leaves(node: Node, x: int = 0, y: int = 0, size: int = CTU) -> Iterator[tuple]:
    """Yield ``(x, y, size, kind)`` for every leaf in z-order."""
    if isinstance(node, Leaf):
        yield x, y, size, node.kind
        return
    half = size // 2
    tl, tr, bl, br = node.children
    yield from iter_leaves(tl, x, y, half)
    yield from iter_leaves(tr, x + half, y, half)
    yield from iter_leaves(bl, x, y + half, half)
    yield from iter_leaves(br, x + half, y + half, half)


def iter_map_leaves(smap: StructureMap) -> Iterator[tuple]:
    for i, ctu in enumerate(smap.ctus):
        ox, oy = smap.ctu_origin(i)
        yield from iter_leaves(ctu, ox, oy, CTU)


def zigzag_scan(smap: StructureMap, include64: bool = False, frame: int = 0) -> list:
    """CUs in coding order: CTUs in raster order, z-order inside each CTU."""
    out = []
    for x, y, size, kind in iter_map_leaves(smap):
        if kind == CuKind.S64 and not include64:
            continue
        out.append(CuRef(frame, x, y, size, kind, len(out)))
    return out


def max_depth(kind: CuKind) -> int:
    if kind == CuKind.S64:
        raise ValueError("64x64 CUs are never carriers and have no MD")
    return int(kind)


def _check_rect(smap: StructureMap, rect) -> None:
    x, y, size = rect
    if size not in (8, 16, 32, 64) or x % size or y % size:
        raise ValueError(f"unaligned rect {rect}")
    if x < 0 or y < 0 or x + size > smap.width or y + size > smap.height:
        raise ValueError(f"rect {rect} outside {smap.width}x{smap.height} frame")


def node_at(smap: StructureMap, rect) -> tuple:
    """Descend to ``rect``; returns ``(node, node_size)``.

    If a leaf larger than ``rect`` covers it, that leaf is returned together
    with its own size.
    """
    _check_rect(smap, rect)
    x, y, size = rect
    node = smap.ctus[smap.ctu_index(x, y)]
    nx, ny, nsize = (x // CTU) * CTU, (y // CTU) * CTU, CTU
    while nsize > size and isinstance(node, Split):
        half = nsize // 2
        right = x >= nx + half
        bottom = y >= ny + half
        node = node.children[2 * bottom + right]
        nx += half * right
        ny += half * bottom
        nsize = half
    return node, nsize


def region_max_depth(smap: StructureMap, rect) -> int:
    """Largest leaf MD (S64 -> 0, NxN -> 4) among leaves meeting ``rect``."""
    node, _ = node_at(smap, rect)
    return max(int(kind) for *_, kind in iter_leaves(node))


def mdd(orig: CuRef, recompressed: StructureMap) -> int:
    return abs(max_depth(orig.kind) - region_max_depth(recompressed, orig.rect))


def structure_equal_region(a: StructureMap, b: StructureMap, rect, kind: CuKind) -> int:
    """1 iff ``rect`` is exactly one ``kind`` leaf in ``b``."""
    node, nsize = node_at(b, rect)
    return int(isinstance(node, Leaf) and nsize == rect[2] and node.kind == kind)


def replace_node(smap: StructureMap, rect, new: Node) -> StructureMap:
    """Return a copy of ``smap`` with the subtree at ``rect`` replaced.

    ``rect`` must coincide with an existing node (leaf or split).
    """
    _check_rect(smap, rect)
    x, y, size = rect
    idx = smap.ctu_index(x, y)

    def rebuild(node, nx, ny, nsize):
        if nsize == size:
            return new
        if not isinstance(node, Split):
            raise ValueError(f"rect {rect} falls inside a leaf of size {nsize}")
        half = nsize // 2
        right = int(x >= nx + half)
        bottom = int(y >= ny + half)
        pos = 2 * bottom + right
        children = list(node.children)
        children[pos] = rebuild(children[pos], nx + half * right, ny + half * bottom, half)
        return Split(tuple(children))

    ctus = list(smap.ctus)
    ctus[idx] = rebuild(ctus[idx], (x // CTU) * CTU, (y // CTU) * CTU, CTU)
    return StructureMap(smap.width, smap.height, tuple(ctus))


def count_leaves(smap: StructureMap) -> dict:
    counts = {k: 0 for k in CuKind}
    for *_, kind in iter_map_leaves(smap):
        counts[kind] += 1
    return counts


def random_tree(rng: np.random.Generator, depth: int = 0, p_split=(0.6, 0.5, 0.4), p_nxn: float = 0.4) -> Node:
    if depth < 3 and rng.random() < p_split[depth]:
        return Split(tuple(random_tree(rng, depth + 1, p_split, p_nxn) for _ in range(4)))
    if depth == 3:
        return Leaf(CuKind.S8_NxN if rng.random() < p_nxn else CuKind.S8_2Nx2N)
    return Leaf(kind_for_depth(depth))


def random_structure(width: int, height: int, rng: np.random.Generator, **kw) -> StructureMap:
    n = (width // CTU) * (height // CTU)
    return StructureMap(width, height, tuple(random_tree(rng, **kw) for _ in range(n)))


# side-info serialisation ---------------------------------------------------


def tree_bits(node: Node, depth: int = 0, out: list = None) -> list:
    """Pre-order flag bits: split flag at depths 0-2, PU flag at depth 3."""
    if out is None:
        out = []
    if depth == 3:
        out.append(1 if node.kind == CuKind.S8_NxN else 0)
    elif isinstance(node, Split):
        out.append(1)
        for child in node.children:
            tree_bits(child, depth + 1, out)
    else:
        out.append(0)
    return out


def serialize_structure(smap: StructureMap) -> bytes:
    bits = []
    for ctu in smap.ctus:
        tree_bits(ctu, 0, bits)
    bits.extend([0] * (-len(bits) % 8))
    payload = np.packbits(np.array(bits, np.uint8)).tobytes() if bits else b""
    return _SI_HEADER.pack(SIDEINFO_MAGIC, SIDEINFO_VERSION, smap.width, smap.height) + payload


def _read_tree(bits: np.ndarray, pos: int, depth: int) -> tuple:
    if pos >= len(bits):
        raise FormatError("truncated structure stream")
    bit = int(bits[pos])
    pos += 1
    if depth == 3:
        return Leaf(CuKind.S8_NxN if bit else CuKind.S8_2Nx2N), pos
    if not bit:
        return Leaf(kind_for_depth(depth)), pos
    children = []
    for _ in range(4):
        child, pos = _read_tree(bits, pos, depth + 1)
        children.append(child)
    return Split(tuple(children)), pos


def parse_structure_prefix(data: bytes, offset: int = 0) -> tuple:
    """Parse one serialized map starting at ``offset``; returns ``(map, end)``."""
    if len(data) - offset < _SI_HEADER.size:
        raise FormatError("truncated structure header")
    magic, version, width, height = _SI_HEADER.unpack_from(data, offset)
    if magic != SIDEINFO_MAGIC:
        raise FormatError("bad magic in structure side info")
    if version != SIDEINFO_VERSION:
        raise FormatError(f"unsupported side-info version {version}")
    if width == 0 or height == 0 or width % CTU or height % CTU:
        raise FormatError(f"invalid structure dimensions {width}x{height}")
    bits = np.unpackbits(np.frombuffer(data, np.uint8, offset=offset + _SI_HEADER.size))
    pos = 0
    ctus = []
    for _ in range((width // CTU) * (height // CTU)):
        tree, pos = _read_tree(bits, pos, 0)
        ctus.append(tree)
    end = offset + _SI_HEADER.size + (pos + 7) // 8
    return StructureMap(width, height, tuple(ctus)), end


def parse_structure(data: bytes) -> StructureMap:
    smap, _ = parse_structure_prefix(data)
    return smap


def serialize_structures(maps) -> bytes:
    """Concatenate per-frame records (one side-info file per video)."""
    return b"".join(serialize_structure(m) for m in maps)


def parse_structures(data: bytes) -> list:
    maps, pos = [], 0
    while pos < len(data):
        smap, pos = parse_structure_prefix(data, pos)
        maps.append(smap)
    if not maps:
        raise FormatError("empty structure side info")
    return maps
