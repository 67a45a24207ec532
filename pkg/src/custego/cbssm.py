"""CU block-structure stability features and recompression analysis.

For each carrier kind ``t`` (32x32, 16x16, 8x8 2Nx2N, 8x8 NxN) a frame
yields two numbers after decode + re-encode at the same qp:

* BQUM: ``exp(-|N - N_rec| / N)``, how well the block count survives;
* BSIM: share of ``t`` blocks whose exact region is still one ``t`` block.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .codec import decode_video, encode_coded, rdo_margins
from .quadtree import CARRIER_KINDS, CuKind, StructureMap, count_leaves, structure_equal_region, zigzag_scan

FEATURE_NAMES = ("bqum32", "bqum16", "bqum8_2n", "bqum8_n", "bsim32", "bsim16", "bsim8_2n", "bsim8_n")


@dataclass(frozen=True)
class BlockCounts:
    n32: int
    n16: int
    n8_2n: int
    n8_n: int

    def as_tuple(self) -> tuple:
        return self.n32, self.n16, self.n8_2n, self.n8_n


def count_blocks(smap: StructureMap) -> BlockCounts:
    c = count_leaves(smap)
    return BlockCounts(*(c[k] for k in CARRIER_KINDS))


def bqum(n: int, n_rec: int) -> float:
    if n < 0 or n_rec < 0:
        raise ValueError("block counts are non-negative")
    if n == 0 and n_rec == 0:
        return 1.0
    return math.exp(-abs(n - n_rec) / max(n, 1))


def bsim(orig: StructureMap, rec: StructureMap, t: CuKind) -> float:
    refs = [r for r in zigzag_scan(orig) if r.kind == t]
    if not refs:
        return 1.0
    return sum(structure_equal_region(orig, rec, r.rect, t) for r in refs) / len(refs)


@dataclass(frozen=True)
class CbssmFeatureVector:
    bqum: tuple
    bsim: tuple

    def as_array(self) -> np.ndarray:
        return np.array(self.bqum + self.bsim, dtype=np.float64)

    @property
    def mean_bsim(self) -> float:
        return float(np.mean(self.bsim))

    @classmethod
    def from_array(cls, arr) -> "CbssmFeatureVector":
        arr = [float(v) for v in arr]
        return cls(tuple(arr[:4]), tuple(arr[4:]))


def frame_features(orig: StructureMap, rec: StructureMap) -> CbssmFeatureVector:
    n, n_rec = count_blocks(orig).as_tuple(), count_blocks(rec).as_tuple()
    return CbssmFeatureVector(
        tuple(bqum(a, b) for a, b in zip(n, n_rec)),
        tuple(bsim(orig, rec, t) for t in CARRIER_KINDS),
    )


def frame_feature_rows(bitstream: bytes, qp: int = None, n_frames: int = None) -> list:
    """Per-frame CBSSM vectors of a coded video (decode, re-encode, compare)."""
    dv = decode_video(bitstream)
    qp = dv.qp if qp is None else qp
    count = len(dv.frames) if n_frames is None else n_frames
    if count > len(dv.frames):
        raise ValueError(f"asked for {count} frames, stream has {len(dv.frames)}")
    return [
        frame_features(s, encode_coded(f, qp).structure) for s, f in zip(dv.structures[:count], dv.frames[:count])
    ]


def coded_features(coded_frames, qp: int = None) -> list:
    """Per-frame vectors straight from encoder output (recon is decoder-exact)."""
    return [frame_features(c.structure, encode_coded(c.recon, c.qp if qp is None else qp).structure) for c in coded_frames]


def average_features(rows) -> CbssmFeatureVector:
    return CbssmFeatureVector.from_array(np.mean([r.as_array() for r in rows], axis=0))


def feature_vector(bitstream: bytes, qp: int = None, n_frames: int = None) -> CbssmFeatureVector:
    """Frame-averaged CBSSM vector over the first ``n_frames`` frames."""
    return average_features(frame_feature_rows(bitstream, qp, n_frames))


def write_features_csv(fh, rows) -> None:
    """``rows`` are ``(video, frame, CbssmFeatureVector)`` triples."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("video", "frame") + FEATURE_NAMES)
    for video, frame, vec in rows:
        w.writerow([video, frame] + [f"{v:.6f}" for v in vec.as_array()])


# restoration analysis ------------------------------------------------------


@dataclass
class RestorationReport:
    n_cus: int
    fraction_structure_unchanged: float
    mean_bsim: float
    lipschitz: float
    fraction_above_bound: float
    unchanged_above_bound: float
    change_rate_above_bound: float
    per_frame: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _per_frame_series(margins, changed) -> list:
    frames = sorted({m.cu.frame for m in margins})
    out = []
    for f in frames:
        ch = [m.delta for m, c in zip(margins, changed) if m.cu.frame == f and c]
        un = [m.delta for m, c in zip(margins, changed) if m.cu.frame == f and not c]
        out.append(
            {
                "frame": f,
                "n_changed": len(ch),
                "n_unchanged": len(un),
                "mean_delta_changed": float(np.mean(ch)) if ch else None,
                "mean_delta_unchanged": float(np.mean(un)) if un else None,
            }
        )
    return out


def estimate_lipschitz(margins, changed) -> RestorationReport:
    """Estimate the restoration bound ``2 * L_J * eps`` from labelled margins.

    ``L_J`` is half the median of ``delta / eps`` over CUs whose structure
    changed under recompression. With no changed CUs the bound is not
    estimable and ``lipschitz`` is NaN.
    """
    margins = list(margins)
    changed = np.asarray(changed, dtype=bool)
    if not margins:
        raise ValueError("empty margin sample")
    if len(changed) != len(margins):
        raise ValueError("one changed/unchanged label per margin")
    delta = np.array([m.delta for m in margins])
    eps = np.array([m.epsilon for m in margins])
    usable = changed & (eps > 0)
    series = _per_frame_series(margins, changed)
    frac_unchanged = float(1.0 - changed.mean())
    if not usable.any():
        return RestorationReport(
            len(margins), frac_unchanged, float("nan"), float("nan"), float("nan"), float("nan"), float("nan"),
            series, "no changed CUs; bound not estimable",
        )
    l_hat = float(np.median(delta[usable] / eps[usable]) / 2.0)
    above = delta > 2.0 * l_hat * eps
    unchanged_above = float(above[~changed].mean()) if (~changed).any() else float("nan")
    rate_above = float(changed[above].mean()) if above.any() else float("nan")
    return RestorationReport(
        len(margins), frac_unchanged, float("nan"), l_hat, float(above.mean()), unchanged_above, rate_above, series
    )


def restoration_analysis(frames, qp: int) -> RestorationReport:
    """Encode, recompress and relate each CU's RD margin to its stability."""
    margins, changed, bsims = [], [], []
    for i, frame in enumerate(frames):
        coded = encode_coded(frame, qp)
        rec = encode_coded(coded.recon, qp).structure
        for m in rdo_margins(frame, coded):
            m = type(m)(m.cu._replace(frame=i), m.j_opt, m.delta, m.epsilon)
            margins.append(m)
            changed.append(1 - structure_equal_region(coded.structure, rec, m.cu.rect, m.cu.kind))
        present = [t for t in CARRIER_KINDS if count_leaves(coded.structure)[t]]
        bsims.extend(bsim(coded.structure, rec, t) for t in present)
    if not margins:
        nan = float("nan")
        return RestorationReport(0, 1.0, 1.0, nan, nan, nan, nan, [], "only 64x64 CUs; nothing to analyse")
    report = estimate_lipschitz(margins, changed)
    report.mean_bsim = float(np.mean(bsims)) if bsims else 1.0
    return report
