"""Intra-only quad-tree codec with Lagrangian partition decisions.

Every node at depth 0-2 chooses between coding itself as one CU (leaf) and
splitting into four children by comparing ``J = SSE + lambda * bits``;
8x8 CUs further choose between one 8x8 prediction unit and four 4x4 ones.
Rates are the exact number of bits the writer emits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .bitio import BitReader, BitWriter, se_bits, se_lengths
from .errors import FormatError
from .frame_io import Frame
from .quadtree import (
    CTU,
    CuKind,
    CuRef,
    Leaf,
    Split,
    StructureMap,
    flip_node,
    iter_leaves,
    kind_for_depth,
    node_at,
    validate_tree,
    zigzag_scan,
)
from .transform import check_qp, dct_forward, dct_inverse, lambda_from_qp, qstep

MAGIC = b"CUSG"
VERSION = 1
_HEADER = struct.Struct(">4sBHHBH")

DC, PLANAR, HORIZONTAL, VERTICAL = range(4)
MODE_NAMES = ("DC", "Planar", "Horizontal", "Vertical")
MODE_BITS = 2

_LOG2 = {4: 2, 8: 3, 16: 4, 32: 5, 64: 6}


@dataclass(frozen=True)
class RdCost:
    distortion: float
    rate: int
    j: float

    @classmethod
    def of(cls, distortion, rate, lam) -> "RdCost":
        return cls(distortion, rate, distortion + lam * rate)


@dataclass(frozen=True, eq=False)
class CodedLeaf:
    x: int
    y: int
    size: int
    kind: CuKind
    modes: tuple
    levels: tuple = field(repr=False)
    cost: RdCost

    @property
    def rect(self) -> tuple:
        return self.x, self.y, self.size


@dataclass(frozen=True, eq=False)
class CodedFrame:
    structure: StructureMap
    leaves: tuple = field(repr=False)
    qp: int
    recon: Frame = field(repr=False)
    cost: RdCost

    def leaf_at(self, rect) -> CodedLeaf:
        index = self.__dict__.get("_index")
        if index is None:
            index = {lf.rect: lf for lf in self.leaves}
            object.__setattr__(self, "_index", index)
        return index[tuple(rect)]


@dataclass(frozen=True)
class RdoMargin:
    cu: CuRef
    j_opt: float
    delta: float
    epsilon: float


# prediction ----------------------------------------------------------------


def _references(recon: np.ndarray, x: int, y: int, n: int):
    top = recon[y - 1, x : x + n].astype(np.int64) if y > 0 else None
    left = recon[y : y + n, x - 1].astype(np.int64) if x > 0 else None
    return top, left


def predict_all(recon: np.ndarray, x: int, y: int, n: int) -> np.ndarray:
    """Stack of the four mode predictions, shape ``(4, n, n)``, int64.

    Missing neighbours (frame border) are replaced by 128.
    """
    top, left = _references(recon, x, y, n)
    if top is None and left is None:
        dc = 128
    else:
        avail = [r for r in (top, left) if r is not None]
        total = sum(int(r.sum()) for r in avail)
        count = n * len(avail)
        dc = (total + count // 2) // count
    t = top if top is not None else np.full(n, 128, np.int64)
    l = left if left is not None else np.full(n, 128, np.int64)
    xs = np.arange(n)[None, :]
    ys = np.arange(n)[:, None]
    planar = ((n - 1 - xs) * l[:, None] + (xs + 1) * t[n - 1] + (n - 1 - ys) * t[None, :] + (ys + 1) * l[n - 1] + n) >> (
        _LOG2[n] + 1
    )
    out = np.empty((4, n, n), np.int64)
    out[DC] = dc
    out[PLANAR] = planar
    out[HORIZONTAL] = l[:, None]
    out[VERTICAL] = t[None, :]
    return out


def predict(recon: np.ndarray, rect, mode: int) -> np.ndarray:
    x, y, n = rect
    return predict_all(np.asarray(recon), x, y, n)[mode]


def reconstruct_block(pred: np.ndarray, levels: np.ndarray, qp: int) -> np.ndarray:
    """Decoder-side reconstruction; the encoder uses this same path."""
    resid = dct_inverse(np.asarray(levels, np.float64) * qstep(qp))
    return np.clip(np.floor(pred + resid + 0.5), 0, 255).astype(np.uint8)


def entropy_size(leaf: CodedLeaf) -> int:
    """Bits the leaf occupies in the stream.

    Includes the terminating split flag (depths 0-2) or the PU flag (8x8),
    the mode indices and the exp-Golomb coefficients.
    """
    return 1 + MODE_BITS * len(leaf.modes) + sum(se_bits(lv) for lv in leaf.levels)


# encoder core --------------------------------------------------------------


class _Coder:
    """Codes CUs into a shared reconstruction buffer."""

    def __init__(self, src: np.ndarray, recon: np.ndarray, qp: int):
        self.src = src
        self.recon = recon
        self.qp = qp
        self.lam = lambda_from_qp(qp)
        self.step = qstep(qp)

    def code_pu(self, x: int, y: int, n: int):
        preds = predict_all(self.recon, x, y, n)
        src = self.src[y : y + n, x : x + n]
        coeffs = dct_forward((src - preds).astype(np.float64))
        levels = (np.sign(coeffs) * np.floor(np.abs(coeffs) / self.step + 0.5)).astype(np.int64)
        bits = se_lengths(levels).reshape(4, -1).sum(axis=1) + MODE_BITS
        best = None
        for mode in range(4):
            rec = reconstruct_block(preds[mode], levels[mode], self.qp)
            sse = int(((rec.astype(np.int64) - src) ** 2).sum())
            j = sse + self.lam * int(bits[mode])
            if best is None or j < best[0]:
                best = (j, mode, levels[mode], rec, sse, int(bits[mode]))
        _, mode, lv, rec, sse, nbits = best
        return mode, lv, rec, sse, nbits

    def leaf(self, x: int, y: int, size: int, kind: CuKind) -> CodedLeaf:
        """Code one CU with the given kind, writing its reconstruction."""
        if kind == CuKind.S8_NxN:
            modes, levels, sse, rate = [], [], 0, 1
            for sy, sx in ((0, 0), (0, 4), (4, 0), (4, 4)):
                mode, lv, rec, e, b = self.code_pu(x + sx, y + sy, 4)
                self.recon[y + sy : y + sy + 4, x + sx : x + sx + 4] = rec
                modes.append(mode)
                levels.append(lv)
                sse += e
                rate += b
            return CodedLeaf(x, y, size, kind, tuple(modes), tuple(levels), RdCost.of(sse, rate, self.lam))
        mode, lv, rec, sse, bits = self.code_pu(x, y, size)
        self.recon[y : y + size, x : x + size] = rec
        return CodedLeaf(x, y, size, kind, (mode,), (lv,), RdCost.of(sse, bits + 1, self.lam))

    def rdo(self, x: int, y: int, size: int, depth: int):
        """Best subtree for this node; returns ``(j, node, leaves)``."""
        region = (slice(y, y + size), slice(x, x + size))
        if depth == 3:
            coarse = self.leaf(x, y, size, CuKind.S8_2Nx2N)
            saved = self.recon[region].copy()
            fine = self.leaf(x, y, size, CuKind.S8_NxN)
            if fine.cost.j < coarse.cost.j:
                return fine.cost.j, Leaf(CuKind.S8_NxN), [fine]
            self.recon[region] = saved
            return coarse.cost.j, Leaf(CuKind.S8_2Nx2N), [coarse]
        whole = self.leaf(x, y, size, kind_for_depth(depth))
        saved = self.recon[region].copy()
        half = size // 2
        j_split = self.lam
        children, leaves = [], []
        for cx, cy in ((x, y), (x + half, y), (x, y + half), (x + half, y + half)):
            j, node, lv = self.rdo(cx, cy, half, depth + 1)
            j_split += j
            children.append(node)
            leaves.extend(lv)
        if j_split < whole.cost.j:
            return j_split, Split(tuple(children)), leaves
        self.recon[region] = saved
        return whole.cost.j, Leaf(whole.kind), [whole]

    def forced(self, node, x: int, y: int, size: int) -> tuple:
        """Code a fixed subtree; returns ``(j, leaves)``."""
        if isinstance(node, Leaf):
            lf = self.leaf(x, y, size, node.kind)
            return lf.cost.j, [lf]
        half = size // 2
        j_total = self.lam
        leaves = []
        for child, (cx, cy) in zip(node.children, ((x, y), (x + half, y), (x, y + half), (x + half, y + half))):
            j, lv = self.forced(child, cx, cy, half)
            j_total += j
            leaves.extend(lv)
        return j_total, leaves


def _check_padded(frame: Frame) -> None:
    if frame.width % CTU or frame.height % CTU:
        raise ValueError(f"unpadded frame {frame.width}x{frame.height}; call pad_to_ctu first")


def _finish(frame: Frame, qp: int, ctus, leaves, recon, lam) -> CodedFrame:
    distortion = sum(lf.cost.distortion for lf in leaves)
    n_split = sum(_count_splits(c) for c in ctus)
    rate = sum(lf.cost.rate for lf in leaves) + n_split
    structure = StructureMap(frame.width, frame.height, tuple(ctus))
    return CodedFrame(structure, tuple(leaves), qp, Frame.from_array(recon), RdCost.of(distortion, rate, lam))


def _count_splits(node) -> int:
    if isinstance(node, Split):
        return 1 + sum(_count_splits(c) for c in node.children)
    return 0


def encode_coded(frame: Frame, qp: int, forced: StructureMap = None) -> CodedFrame:
    _check_padded(frame)
    qp = check_qp(qp)
    if forced is not None:
        if (forced.width, forced.height) != (frame.width, frame.height):
            raise ValueError("forced structure does not match the frame dimensions")
        for ctu in forced.ctus:
            validate_tree(ctu)
    src = frame.luma.astype(np.int64)
    recon = np.zeros((frame.height, frame.width), np.uint8)
    coder = _Coder(src, recon, qp)
    ctus, leaves = [], []
    for i in range((frame.width // CTU) * (frame.height // CTU)):
        ox = (i % (frame.width // CTU)) * CTU
        oy = (i // (frame.width // CTU)) * CTU
        if forced is None:
            _, node, lv = coder.rdo(ox, oy, CTU, 0)
        else:
            node = forced.ctus[i]
            _, lv = coder.forced(node, ox, oy, CTU)
        ctus.append(node)
        leaves.extend(lv)
    return _finish(frame, qp, ctus, leaves, recon, coder.lam)


def encode_frame(frame: Frame, qp: int):
    """RDO-encode one padded frame; returns ``(CodedFrame, bitstream, recon)``."""
    coded = encode_coded(frame, qp)
    return coded, write_stream([coded]), coded.recon


def encode_frame_forced(frame: Frame, qp: int, forced: StructureMap):
    """Encode with a fixed partition; only intra modes are optimised."""
    coded = encode_coded(frame, qp, forced)
    return coded, write_stream([coded]), coded.recon


def encode_video(frames, qp: int, forced=None):
    """Encode a sequence; ``forced`` is an optional list of per-frame maps."""
    frames = list(frames)
    if forced is None:
        coded = [encode_coded(f, qp) for f in frames]
    else:
        coded = [encode_coded(f, qp, m) for f, m in zip(frames, forced, strict=True)]
    return coded, write_stream(coded)


def region_cost(frame: Frame, recon: Frame, rect, node, qp: int) -> RdCost:
    """Cost of coding ``node`` at ``rect`` with fixed surrounding reconstruction.

    Neighbouring samples come from ``recon``; ``node`` may be a leaf or a
    subtree. The returned rate includes every split/PU flag in the region.
    """
    x, y, size = rect
    buf = recon.luma.copy()
    coder = _Coder(frame.luma.astype(np.int64), buf, qp)
    _, leaves = coder.forced(node, x, y, size)
    distortion = sum(lf.cost.distortion for lf in leaves)
    rate = sum(lf.cost.rate for lf in leaves) + _count_splits(node)
    return RdCost.of(distortion, rate, coder.lam)


def rd_cost_leaf(frame: Frame, recon: Frame, rect, kind: CuKind, qp: int):
    """Best mode(s) and cost for one CU of ``kind`` at ``rect``."""
    x, y, size = rect
    buf = recon.luma.copy()
    coder = _Coder(frame.luma.astype(np.int64), buf, qp)
    lf = coder.leaf(x, y, size, kind)
    return lf.modes, lf.cost


# margins -------------------------------------------------------------------


def rdo_margins(frame: Frame, coded: CodedFrame) -> list:
    """Cost gap between each non-64 CU and its one-depth alternatives.

    Alternatives: split one level (or PU flip for 8x8), and merging into
    the parent when all four siblings are leaves.
    """
    qp = coded.qp
    lam = lambda_from_qp(qp)
    src = frame.luma.astype(np.int64)
    rec = coded.recon.luma.astype(np.int64)
    merge_cache = {}
    out = []
    for cu in zigzag_scan(coded.structure):
        leaf = coded.leaf_at(cu.rect)
        deltas = [region_cost(frame, coded.recon, cu.rect, flip_node(cu.kind), qp).j - leaf.cost.j]
        psize = 2 * cu.size
        if psize <= CTU:
            prect = (cu.x - cu.x % psize, cu.y - cu.y % psize, psize)
            if prect not in merge_cache:
                parent, _ = node_at(coded.structure, prect)
                merge_cache[prect] = None
                if isinstance(parent, Split) and all(isinstance(c, Leaf) for c in parent.children):
                    j_now = lam + sum(coded.leaf_at(r[:3]).cost.j for r in iter_leaves(parent, *prect))
                    depth = {64: 0, 32: 1, 16: 2}[psize]
                    j_merged = region_cost(frame, coded.recon, prect, Leaf(kind_for_depth(depth)), qp).j
                    merge_cache[prect] = j_merged - j_now
            if merge_cache[prect] is not None:
                deltas.append(merge_cache[prect])
        x, y, s = cu.rect
        eps = float(np.sqrt(((rec[y : y + s, x : x + s] - src[y : y + s, x : x + s]) ** 2).sum()))
        out.append(RdoMargin(cu, leaf.cost.j, float(min(deltas)), eps))
    return out


# bitstream -----------------------------------------------------------------


def write_leaf(w: BitWriter, leaf: CodedLeaf) -> None:
    """Leaf syntax after the split flag: PU flag (8x8), modes, coefficients."""
    if leaf.kind.is_8x8:
        w.write_bit(1 if leaf.kind == CuKind.S8_NxN else 0)
    for mode in leaf.modes:
        w.write_bits(mode, MODE_BITS)
    for lv in leaf.levels:
        w.write_se_array(lv)


def _write_node(w: BitWriter, node, leaves, depth: int) -> None:
    if depth < 3:
        if isinstance(node, Split):
            w.write_bit(1)
            for child in node.children:
                _write_node(w, child, leaves, depth + 1)
            return
        w.write_bit(0)
    write_leaf(w, next(leaves))


def write_stream(coded_frames) -> bytes:
    coded_frames = list(coded_frames)
    if not coded_frames:
        raise ValueError("nothing to write")
    first = coded_frames[0]
    w = BitWriter()
    for cf in coded_frames:
        if (cf.structure.width, cf.structure.height, cf.qp) != (first.structure.width, first.structure.height, first.qp):
            raise ValueError("all frames in a stream share size and qp")
        leaves = iter(cf.leaves)
        for ctu in cf.structure.ctus:
            _write_node(w, ctu, leaves, 0)
        w.align()
    header = _HEADER.pack(MAGIC, VERSION, first.structure.width, first.structure.height, first.qp, len(coded_frames))
    return header + w.getvalue()


def read_leaf(r: BitReader, depth: int, x: int, y: int, size: int):
    """Inverse of :func:`write_leaf`; returns ``(kind, modes, levels)``."""
    if depth == 3:
        kind = CuKind.S8_NxN if r.read_bit() else CuKind.S8_2Nx2N
    else:
        kind = kind_for_depth(depth)
    n_pu, n = (4, 4) if kind == CuKind.S8_NxN else (1, size)
    modes = tuple(r.read_bits(MODE_BITS) for _ in range(n_pu))
    levels = tuple(np.array(r.read_se_array(n * n), np.int64).reshape(n, n) for _ in range(n_pu))
    return kind, modes, levels


@dataclass
class DecodedVideo:
    width: int
    height: int
    qp: int
    structures: list
    frames: list
    frame_bits: list


def read_header(data: bytes) -> tuple:
    if len(data) < _HEADER.size:
        raise FormatError("truncated stream header")
    magic, version, width, height, qp, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError("bad magic")
    if version != VERSION:
        raise FormatError(f"unsupported stream version {version}")
    if width == 0 or height == 0 or width % CTU or height % CTU:
        raise FormatError(f"invalid stream dimensions {width}x{height}")
    if qp > 51:
        raise FormatError(f"invalid qp {qp}")
    return width, height, qp, count


def decode_video(data: bytes, reconstruct: bool = True) -> DecodedVideo:
    width, height, qp, count = read_header(data)
    r = BitReader(data, _HEADER.size)
    cols = width // CTU
    structures, frames, frame_bits = [], [], []
    for _ in range(count):
        start = r.pos
        recon = np.zeros((height, width), np.uint8)

        def read_node(x, y, size, depth):
            if depth < 3 and r.read_bit():
                half = size // 2
                return Split(
                    tuple(
                        read_node(cx, cy, half, depth + 1)
                        for cx, cy in ((x, y), (x + half, y), (x, y + half), (x + half, y + half))
                    )
                )
            kind, modes, levels = read_leaf(r, depth, x, y, size)
            if any(m > 3 for m in modes):
                raise FormatError("illegal intra mode")
            if reconstruct:
                if kind == CuKind.S8_NxN:
                    for (sy, sx), mode, lv in zip(((0, 0), (0, 4), (4, 0), (4, 4)), modes, levels):
                        pred = predict_all(recon, x + sx, y + sy, 4)[mode]
                        recon[y + sy : y + sy + 4, x + sx : x + sx + 4] = reconstruct_block(pred, lv, qp)
                else:
                    pred = predict_all(recon, x, y, size)[modes[0]]
                    recon[y : y + size, x : x + size] = reconstruct_block(pred, levels[0], qp)
            return Leaf(kind)

        ctus = [read_node((i % cols) * CTU, (i // cols) * CTU, CTU, 0) for i in range((width // CTU) * (height // CTU))]
        frame_bits.append(r.pos - start)
        r.align()
        structures.append(StructureMap(width, height, tuple(ctus)))
        frames.append(Frame.from_array(recon) if reconstruct else None)
    return DecodedVideo(width, height, qp, structures, frames, frame_bits)


def decode_frame(data: bytes):
    """Structure and reconstruction of the first frame in ``data``."""
    dv = decode_video(data)
    return dv.structures[0], dv.frames[0]


def read_structures(data: bytes) -> list:
    """Parse partitions only, skipping reconstruction."""
    return decode_video(data, reconstruct=False).structures
