"""CU-size steganography: carrier mapping, three-level costs, embed/extract.

Cover bits come from CU shapes (0 for 32x32, 16x16 and 8x8 2Nx2N, 1 for
8x8 NxN). A flipped bit is realised by changing the CU by exactly one
depth level, see :func:`custego.quadtree.flip_node`. Costs favour CUs whose
partition is already unstable under recompression.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .codec import CodedFrame, decode_video, encode_video, read_header, region_cost, write_stream, encode_coded
from .errors import CapacityError, ExtractionError, FormatError
from .quadtree import (
    CuKind,
    Leaf,
    StructureMap,
    flip_node,
    max_depth,
    mdd,
    node_at,
    parse_structures,
    replace_node,
    serialize_structures,
    structure_equal_region,
    zigzag_scan,
)
from .stc import StcParams, stc_embed, stc_extract

SCHEMES = ("full", "8x8")


@dataclass
class CarrierSequence:
    frame: int
    refs: list
    bits: np.ndarray

    @property
    def q(self) -> int:
        return len(self.refs)


def carrier_bit(kind: CuKind) -> int:
    return 1 if kind == CuKind.S8_NxN else 0


def map_full(smap: StructureMap, frame: int = 0) -> CarrierSequence:
    refs = zigzag_scan(smap, include64=False, frame=frame)
    return CarrierSequence(frame, refs, np.array([carrier_bit(r.kind) for r in refs], np.uint8))


def map_8x8(smap: StructureMap, frame: int = 0) -> CarrierSequence:
    refs = [r for r in zigzag_scan(smap, include64=False, frame=frame) if r.kind.is_8x8]
    return CarrierSequence(frame, refs, np.array([carrier_bit(r.kind) for r in refs], np.uint8))


def map_carriers(smap: StructureMap, scheme: str, frame: int = 0) -> CarrierSequence:
    if scheme == "full":
        return map_full(smap, frame)
    if scheme == "8x8":
        return map_8x8(smap, frame)
    raise ValueError(f"unknown scheme {scheme!r}")


def recompress_structure(coded: CodedFrame, qp: int = None) -> StructureMap:
    """Partition chosen when the decoded frame is encoded again."""
    return encode_coded(coded.recon, coded.qp if qp is None else qp).structure


def dr(frame, coded: CodedFrame, cu, qp: int = None) -> float:
    """Relative RD-cost change caused by flipping carrier ``cu``."""
    qp = coded.qp if qp is None else qp
    j = coded.leaf_at(cu.rect).cost.j
    if j == 0:
        return 0.0
    j_flipped = region_cost(frame, coded.recon, cu.rect, flip_node(cu.kind), qp).j
    return abs(j - j_flipped) / j


def three_level_cost(md: int, dr_value: float, mdd_value: int) -> float:
    """Stable CUs cost ``MD*DR``, one-level changes ``DR``, larger ones ``DR/MDD``."""
    if mdd_value == 0:
        return md * dr_value
    if mdd_value == 1:
        return dr_value
    return dr_value / mdd_value


@dataclass
class ThreeLevelCosts:
    case: np.ndarray
    md: np.ndarray
    mdd: np.ndarray
    dr: np.ndarray
    cost: np.ndarray


def three_level_costs(frame, coded: CodedFrame, recompressed: StructureMap, carriers: CarrierSequence, qp: int = None) -> ThreeLevelCosts:
    q = carriers.q
    md = np.empty(q, np.int64)
    mdds = np.empty(q, np.int64)
    drs = np.empty(q, np.float64)
    cost = np.empty(q, np.float64)
    for i, cu in enumerate(carriers.refs):
        md[i] = max_depth(cu.kind)
        mdds[i] = mdd(cu, recompressed)
        drs[i] = dr(frame, coded, cu, qp)
        cost[i] = three_level_cost(md[i], drs[i], mdds[i])
    case = np.where(mdds == 0, 1, np.where(mdds == 1, 2, 3))
    return ThreeLevelCosts(case, md, mdds, drs, cost)


def apply_modifications(smap: StructureMap, carriers: CarrierSequence, stego_bits) -> StructureMap:
    """Rules 1-3: unchanged on equal bits, otherwise one-depth split/merge."""
    stego_bits = np.asarray(stego_bits, np.uint8)
    if len(stego_bits) != carriers.q:
        raise ValueError("stego bits and carriers differ in length")
    out = smap
    for ref, c, s in zip(carriers.refs, carriers.bits, stego_bits):
        if c != s:
            out = replace_node(out, ref.rect, flip_node(ref.kind))
    return out


def audit_modifications(cover: StructureMap, stego: StructureMap, carriers: CarrierSequence) -> list:
    """Problems found when diffing cover and stego partitions (empty = clean).

    Every changed region must be a carrier leaf replaced by its one-depth
    flip; everything else must be identical.
    """
    carrier_rects = {r.rect for r in carriers.refs}
    problems = []
    for cu in zigzag_scan(cover, include64=True):
        node, nsize = node_at(stego, cu.rect)
        if nsize != cu.size:
            problems.append(f"{cu.rect}: absorbed into a {nsize}x{nsize} leaf")
        elif node == Leaf(cu.kind):
            continue
        elif cu.rect not in carrier_rects:
            problems.append(f"{cu.rect}: non-carrier {cu.kind.name} modified")
        elif node != flip_node(cu.kind):
            problems.append(f"{cu.rect}: {cu.kind.name} changed by more than one depth")
    return problems


# packaging -----------------------------------------------------------------


@dataclass
class StegoHeader:
    scheme: str
    alpha: float
    qp: int
    message_len: int
    carrier_counts: list
    frame_bits: list
    stc: StcParams = field(default_factory=StcParams)

    def to_json(self) -> str:
        d = {
            "scheme": self.scheme,
            "alpha": self.alpha,
            "qp": self.qp,
            "message_len": self.message_len,
            "carrier_counts": list(map(int, self.carrier_counts)),
            "frame_bits": list(map(int, self.frame_bits)),
        }
        d.update(self.stc.to_dict())
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StegoHeader":
        try:
            d = json.loads(text)
            return cls(
                d["scheme"],
                float(d["alpha"]),
                int(d["qp"]),
                int(d["message_len"]),
                list(d["carrier_counts"]),
                list(d["frame_bits"]),
                StcParams.from_dict(d),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad stego header: {exc}") from exc


@dataclass
class StegoPackage:
    bitstream: bytes
    header: StegoHeader
    side_info: bytes = None

    def save(self, path, sideinfo_path=None) -> None:
        """Stream to ``path``, header to ``path + '.json'``, side info optional."""
        with open(path, "wb") as fh:
            fh.write(self.bitstream)
        with open(os.fspath(path) + ".json", "w") as fh:
            fh.write(self.header.to_json() + "\n")
        if sideinfo_path is not None and self.side_info is not None:
            with open(sideinfo_path, "wb") as fh:
                fh.write(self.side_info)

    @classmethod
    def load(cls, path, sideinfo_path=None, header_path=None) -> "StegoPackage":
        with open(path, "rb") as fh:
            bitstream = fh.read()
        header_path = header_path or os.fspath(path) + ".json"
        with open(header_path) as fh:
            header = StegoHeader.from_json(fh.read())
        side = None
        if sideinfo_path is not None:
            with open(sideinfo_path, "rb") as fh:
                side = fh.read()
        return cls(bitstream, header, side)


# embedding -----------------------------------------------------------------


@dataclass
class FrameAnalysis:
    """Everything about one cover frame that does not depend on the message."""

    index: int
    source: object
    coded: CodedFrame
    recompressed: StructureMap
    carriers: CarrierSequence
    costs: ThreeLevelCosts


def analyse_frame(source, index: int, qp: int, scheme: str = "full", coded: CodedFrame = None) -> FrameAnalysis:
    if coded is None:
        coded = encode_coded(source, qp)
    recompressed = recompress_structure(coded)
    carriers = map_carriers(coded.structure, scheme, index)
    costs = three_level_costs(source, coded, recompressed, carriers, qp)
    return FrameAnalysis(index, source, coded, recompressed, carriers, costs)


def prepare_cover(video, qp: int, scheme: str = "full") -> list:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    return [analyse_frame(f, i, qp, scheme) for i, f in enumerate(video)]


def frame_message_lengths(carrier_counts, alpha: float, message_len: int) -> list:
    """Sequential chunking: frame i takes up to floor(alpha * q_i) bits."""
    out, left = [], message_len
    for q in carrier_counts:
        take = min(int(math.floor(alpha * q + 1e-9)), left)
        out.append(take)
        left -= take
    return out


def capacity(carrier_counts, alpha: float) -> int:
    return sum(int(math.floor(alpha * q + 1e-9)) for q in carrier_counts)


@dataclass
class EmbedResult:
    package: StegoPackage
    cover: list
    stego: list
    cover_bits: list
    stego_bits: list
    analyses: list = field(repr=False, default=None)

    @property
    def n_changed(self) -> int:
        return int(sum(int((c != s).sum()) for c, s in zip(self.cover_bits, self.stego_bits)))


def embed_prepared(analyses, message, alpha: float, params: StcParams = StcParams(), scheme: str = "full") -> EmbedResult:
    message = np.asarray(message, np.uint8).ravel()
    if not 0 < alpha <= 1:
        raise ValueError("payload alpha must be in (0, 1]")
    counts = [a.carriers.q for a in analyses]
    available = capacity(counts, alpha)
    if len(message) > available:
        raise CapacityError(f"message needs {len(message)} bits but only {available} are available")
    lengths = frame_message_lengths(counts, alpha, len(message))
    qp = analyses[0].coded.qp
    stego_coded, cover_bits, stego_bits = [], [], []
    pos = 0
    for a, m_i in zip(analyses, lengths):
        chunk = message[pos : pos + m_i]
        pos += m_i
        if m_i:
            s, _ = stc_embed(a.carriers.bits, a.costs.cost, chunk, params)
        else:
            s = a.carriers.bits.copy()
        cover_bits.append(a.carriers.bits)
        stego_bits.append(s)
        if np.array_equal(s, a.carriers.bits):
            stego_coded.append(a.coded)
        else:
            modified = apply_modifications(a.coded.structure, a.carriers, s)
            stego_coded.append(encode_coded(a.source, qp, modified))
    header = StegoHeader(scheme, float(alpha), qp, len(message), counts, lengths, params)
    side = serialize_structures([a.coded.structure for a in analyses]) if scheme == "full" else None
    package = StegoPackage(write_stream(stego_coded), header, side)
    return EmbedResult(package, [a.coded for a in analyses], stego_coded, cover_bits, stego_bits, analyses)


def embed(video, message, alpha: float, qp: int, scheme: str = "full", params: StcParams = StcParams()) -> StegoPackage:
    """Hide ``message`` (bits) in the CU partitions of ``video``."""
    return embed_prepared(prepare_cover(video, qp, scheme), message, alpha, params, scheme).package


def stego_bits_full(original: StructureMap, stego: StructureMap, frame: int = 0) -> np.ndarray:
    """Recovered stego bits over the original carrier grid: ``c XOR changed``."""
    carriers = map_full(original, frame)
    changed = np.array(
        [1 - structure_equal_region(original, stego, r.rect, r.kind) for r in carriers.refs], np.uint8
    )
    return carriers.bits ^ changed


def extract(package: StegoPackage, original_video=None) -> np.ndarray:
    """Recover the message bits from a stego package.

    The 8x8 scheme reads PU flags blindly. The full scheme needs the
    original partition, either from the side info or by re-encoding
    ``original_video`` with the same qp.
    """
    hdr = package.header
    width, height, qp, count = read_header(package.bitstream)
    if count != len(hdr.carrier_counts) or qp != hdr.qp:
        raise ExtractionError("stego header does not match the bitstream")
    if hdr.scheme == "tew":
        from .evaluation import tew_extract

        return tew_extract(package, original_video)
    stego_maps = decode_video(package.bitstream, reconstruct=False).structures
    if hdr.scheme == "8x8":
        seqs = [map_8x8(m, i).bits for i, m in enumerate(stego_maps)]
    elif hdr.scheme == "full":
        if package.side_info is not None:
            originals = parse_structures(package.side_info)
        elif original_video is not None:
            originals = [c.structure for c in encode_video(original_video, qp)[0]]
        else:
            raise ExtractionError("full-scheme extraction needs side info or the original video")
        if len(originals) != count:
            raise ExtractionError("side info frame count does not match the stream")
        seqs = [stego_bits_full(o, s, i) for i, (o, s) in enumerate(zip(originals, stego_maps))]
    else:
        raise ExtractionError(f"unknown scheme {hdr.scheme!r}")
    out = []
    for i, (bits, m_i) in enumerate(zip(seqs, hdr.frame_bits)):
        if len(bits) != hdr.carrier_counts[i]:
            raise ExtractionError(f"frame {i}: {len(bits)} carriers, header says {hdr.carrier_counts[i]}")
        if m_i:
            out.append(stc_extract(bits, m_i, hdr.stc))
    msg = np.concatenate(out) if out else np.zeros(0, np.uint8)
    if len(msg) != hdr.message_len:
        raise ExtractionError("recovered length differs from the header")
    return msg


def bytes_to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, np.uint8))


def bits_to_bytes(bits) -> bytes:
    return np.packbits(np.asarray(bits, np.uint8)).tobytes()
