"""Quality/rate metrics, the forced-8x8 baseline, a CBSSM detector and the
experiment grid driver."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cbssm import FEATURE_NAMES, average_features, coded_features, restoration_analysis
from .codec import decode_video, encode_coded, encode_video, read_header, write_stream
from .errors import CapacityError, ExtractionError
from .frame_io import Frame, pad_to_ctu
from .quadtree import CuKind, Leaf, Split, StructureMap, iter_leaves, node_at, parse_structures, replace_node, serialize_structures, zigzag_scan
from .stc import StcParams
from .stego import StegoHeader, StegoPackage, analyse_frame, embed_prepared, frame_message_lengths

PSNR_CAP = 99.0
UNBOUNDED = float("inf")


# metrics -------------------------------------------------------------------


def _mse(a, b) -> float:
    a = a.luma if isinstance(a, Frame) else np.asarray(a)
    b = b.luma if isinstance(b, Frame) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))


def _psnr_from_mse(mse: float) -> float:
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0**2 / mse))


def psnr(a, b) -> float:
    """Luma PSNR in dB, capped at 99 for identical frames."""
    return _psnr_from_mse(_mse(a, b))


def video_psnr(reference, test) -> float:
    """PSNR of the mean squared error over all frames."""
    reference, test = list(reference), list(test)
    if len(reference) != len(test) or not reference:
        raise ValueError("videos must have the same, non-zero number of frames")
    return _psnr_from_mse(float(np.mean([_mse(a, b) for a, b in zip(reference, test)])))


def delta_psnr(psnr_ori: float, psnr_stg: float, capacity: float) -> float:
    """PSNR change per 1000 embedded bits."""
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    return 1000.0 * abs(psnr_ori - psnr_stg) / capacity


def bir(bit_ori: float, bit_stg: float, capacity: float) -> float:
    """Bitrate increase ratio per 1000 embedded bits."""
    if bit_ori <= 0:
        raise ValueError("original bitrate must be positive")
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    return 1000.0 * abs(bit_stg - bit_ori) / (capacity * bit_ori)


def capacity_per_1pct(bir_value: float) -> float:
    """Bits that fit in a 1% bitrate increase; ``UNBOUNDED`` when BIR is 0."""
    if bir_value < 0:
        raise ValueError("BIR is non-negative")
    if bir_value == 0:
        return UNBOUNDED
    return 10.0 / bir_value


@dataclass(frozen=True)
class MetricsReport:
    psnr_ori: float
    psnr_stg: float
    bit_ori: int
    bit_stg: int
    capacity: int
    delta_psnr: float
    bir: float
    capacity_per_1pct: float

    @classmethod
    def measure(cls, sources, cover_recon, stego_recon, bit_ori: int, bit_stg: int, capacity: int) -> "MetricsReport":
        p_ori = video_psnr(sources, cover_recon)
        p_stg = video_psnr(sources, stego_recon)
        if capacity == 0:
            # nothing embedded: the stego video is the cover
            return cls(p_ori, p_stg, bit_ori, bit_stg, 0, 0.0, 0.0, UNBOUNDED)
        b = bir(bit_ori, bit_stg, capacity)
        return cls(p_ori, p_stg, bit_ori, bit_stg, capacity, delta_psnr(p_ori, p_stg, capacity), b, capacity_per_1pct(b))


# forced-8x8 baseline -------------------------------------------------------


def tew_carriers(smap: StructureMap, frame: int = 0) -> list:
    """Every CU larger than 8x8, 64x64 included, in scan order."""
    return [r for r in zigzag_scan(smap, include64=True, frame=frame) if not r.kind.is_8x8]


def all_8x8(size: int):
    node = Leaf(CuKind.S8_2Nx2N)
    while size > 8:
        node = Split((node,) * 4)
        size //= 2
    return node


def _is_forced(stego: StructureMap, rect) -> int:
    node, nsize = node_at(stego, rect)
    if nsize != rect[2] or isinstance(node, Leaf):
        return 0
    return int(all(kind.is_8x8 for *_, kind in iter_leaves(node, size=nsize)))


def tew_embed_coded(sources, coded_frames, message, alpha: float = None):
    """Baseline embedding on already coded cover frames.

    Each 1 bit turns the next non-8x8 CU into 8x8 leaves, each 0 bit leaves
    it alone. With ``alpha`` every frame takes ``floor(alpha * q_i)`` bits,
    otherwise frames are filled in order. Returns ``(package, stego_frames)``.
    """
    message = np.asarray(message, np.uint8).ravel()
    refs = [tew_carriers(c.structure, i) for i, c in enumerate(coded_frames)]
    counts = [len(r) for r in refs]
    if alpha is None:
        lengths, left = [], len(message)
        for q in counts:
            lengths.append(min(q, left))
            left -= lengths[-1]
    else:
        lengths = frame_message_lengths(counts, alpha, len(message))
    if sum(lengths) < len(message):
        raise CapacityError(f"message needs {len(message)} bits but only {sum(lengths)} CUs are usable")
    qp = coded_frames[0].qp
    out, pos = [], 0
    for src, coded, frefs, m_i in zip(sources, coded_frames, refs, lengths):
        bits = message[pos : pos + m_i]
        pos += m_i
        smap = coded.structure
        for ref, b in zip(frefs, bits):
            if b:
                smap = replace_node(smap, ref.rect, all_8x8(ref.size))
        out.append(coded if smap is coded.structure else encode_coded(src, qp, smap))
    header = StegoHeader("tew", 1.0 if alpha is None else float(alpha), qp, len(message), counts, lengths)
    side = serialize_structures([c.structure for c in coded_frames])
    return StegoPackage(write_stream(out), header, side), out


def baseline_tew_embed(video, message, qp: int, alpha: float = None) -> StegoPackage:
    """Forced-8x8 embedding: no coding, no costs, one CU per message bit."""
    frames = [pad_to_ctu(f) for f in video]
    coded = [encode_coded(f, qp) for f in frames]
    return tew_embed_coded(frames, coded, message, alpha)[0]


def tew_extract(package: StegoPackage, original_video=None) -> np.ndarray:
    hdr = package.header
    width, height, qp, count = read_header(package.bitstream)
    if package.side_info is not None:
        originals = parse_structures(package.side_info)
    elif original_video is not None:
        originals = [c.structure for c in encode_video(original_video, qp)[0]]
    else:
        raise ExtractionError("baseline extraction needs side info or the original video")
    stego = decode_video(package.bitstream, reconstruct=False).structures
    if len(originals) != count or len(hdr.frame_bits) != count:
        raise ExtractionError("side info frame count does not match the stream")
    out = []
    for i, (orig, st, m_i) in enumerate(zip(originals, stego, hdr.frame_bits)):
        refs = tew_carriers(orig, i)
        if len(refs) != hdr.carrier_counts[i] or m_i > len(refs):
            raise ExtractionError(f"frame {i}: carrier count does not match the header")
        out.append(np.array([_is_forced(st, r.rect) for r in refs[:m_i]], np.uint8))
    msg = np.concatenate(out) if out else np.zeros(0, np.uint8)
    if len(msg) != hdr.message_len:
        raise ExtractionError("recovered length differs from the header")
    return msg


# detector ------------------------------------------------------------------


@dataclass
class ClassifierModel:
    """Logistic regression on standardised features."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray
    seed: int = 0
    repeats: int = 0
    split: float = 0.5

    def decision_function(self, X) -> np.ndarray:
        X = (np.atleast_2d(np.asarray(X, np.float64)) - self.mean) / self.std
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "seed": self.seed,
            "repeats": self.repeats,
            "split": self.split,
        }


def fit_logistic(X, y, iterations: int = 500, lr: float = 0.1, l2: float = 1e-3) -> ClassifierModel:
    """Full-batch gradient descent; features standardised on ``X``."""
    X = np.asarray(X, np.float64)
    y = np.asarray(y, np.float64)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std < 1e-12] = 1.0
    Z = (X - mean) / std
    w = np.zeros(Z.shape[1])
    b = 0.0
    for _ in range(iterations):
        p = 0.5 * (1.0 + np.tanh(0.5 * (Z @ w + b)))
        g = p - y
        w -= lr * (Z.T @ g / len(y) + l2 * w)
        b -= lr * float(g.mean())
    return ClassifierModel(w, b, mean, std)


def _split(rng, y, groups):
    if groups is None:
        train = []
        for c in (0, 1):
            idx = rng.permutation(np.flatnonzero(y == c))
            train.extend(idx[: len(idx) // 2])
        mask = np.zeros(len(y), bool)
        mask[train] = True
        return mask
    # whole groups (a cover and its stego) land on one side
    uniq = rng.permutation(np.unique(groups))
    return np.isin(groups, uniq[: len(uniq) // 2])


def train_detector(X, y, seed: int = 0, repeats: int = 100, groups=None, iterations: int = 500, lr: float = 0.1):
    """Mean test accuracy over ``repeats`` random 1:1 train/test splits.

    Returns ``(model, accuracy)``; the model is fitted on all samples.
    ``groups`` keeps paired samples on the same side of every split.
    """
    X = np.asarray(X, np.float64)
    y = np.asarray(y, np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (samples, features) with one label per row")
    if len(y) < 4:
        raise ValueError("need at least 4 samples")
    if len(np.unique(y)) != 2 or not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must contain both classes 0 and 1")
    groups = None if groups is None else np.asarray(groups)
    rng = np.random.default_rng(seed)
    accs = []
    for _ in range(repeats):
        train = _split(rng, y, groups)
        test = ~train
        if len(np.unique(y[train])) < 2 or not test.any():
            continue
        m = fit_logistic(X[train], y[train], iterations, lr)
        accs.append(float((m.predict(X[test]) == y[test]).mean()))
    if not accs:
        raise ValueError("no split had both classes in the training half")
    model = fit_logistic(X, y, iterations, lr)
    model.seed, model.repeats = seed, repeats
    return model, float(np.mean(accs))


# experiment grid -----------------------------------------------------------


@dataclass
class ExperimentConfig:
    qps: tuple = (26, 32, 38)
    payloads: tuple = (0.1, 0.3, 0.5)
    schemes: tuple = ("full", "8x8", "tew")
    seed: int = 0
    repeats: int = 100
    stc: StcParams = field(default_factory=StcParams)
    restoration: bool = True
    jobs: int = 1


METRICS = ("delta_psnr", "bir", "capacity_per_1pct", "capacity", "n_changed")


@dataclass
class ExperimentResult:
    rows: list
    features: list
    detection: list
    restoration: dict
    config: ExperimentConfig

    def summary(self) -> dict:
        grid = {}
        for r in self.rows:
            key = f"qp{r['qp']}/a{r['payload']}/{r['scheme']}"
            grid.setdefault(key, []).append(r)
        out = {}
        for key, rs in grid.items():
            out[key] = {m: _finite_mean([r[m] for r in rs]) for m in METRICS}
        for d in self.detection:
            out.setdefault(f"qp{d['qp']}/a{d['payload']}/{d['scheme']}", {})["accuracy"] = d["accuracy"]
        cfg = asdict(self.config)
        cfg["stc"] = self.config.stc.to_dict()
        return {"config": cfg, "grid": out, "restoration": self.restoration, "n_videos": len({r["video"] for r in self.rows})}


def _finite_mean(values):
    vals = [v for v in values if math.isfinite(v)]
    return float(np.mean(vals)) if vals else None


def video_class(name: str) -> str:
    return name.rstrip("0123456789") or name


def _message(seed: int, video: int, qp: int, payload: float, scheme: str, n: int) -> np.ndarray:
    tag = sum(map(ord, scheme))
    rng = np.random.default_rng([seed, video, qp, int(round(payload * 1000)), tag])
    return rng.integers(0, 2, n, dtype=np.uint8)


def _video_job(args):
    vi, video, cfg = args
    frames = [pad_to_ctu(f) for f in video]
    name = getattr(video, "name", f"video{vi}")
    rows, feats = [], []
    for qp in cfg.qps:
        full = [analyse_frame(f, i, qp, "full") for i, f in enumerate(frames)]
        coded = [a.coded for a in full]
        cover_recon = [c.recon for c in coded]
        bit_ori = 8 * len(write_stream(coded))
        cover_vec = average_features(coded_features(coded)).as_array()
        feats.append({"video": name, "qp": qp, "payload": 0.0, "scheme": "cover", "features": cover_vec})
        by8 = None
        for payload in cfg.payloads:
            for scheme in cfg.schemes:
                if scheme == "tew":
                    counts = [len(tew_carriers(c.structure)) for c in coded]
                    n = sum(int(math.floor(payload * q + 1e-9)) for q in counts)
                    msg = _message(cfg.seed, vi, qp, payload, scheme, n)
                    pkg, stego = tew_embed_coded(frames, coded, msg, payload)
                    changed = int(msg.sum())
                else:
                    if scheme == "8x8":
                        by8 = by8 or [analyse_frame(f, i, qp, "8x8", c) for i, (f, c) in enumerate(zip(frames, coded))]
                        analyses = by8
                    else:
                        analyses = full
                    n = sum(int(math.floor(payload * a.carriers.q + 1e-9)) for a in analyses)
                    res = embed_prepared(analyses, _message(cfg.seed, vi, qp, payload, scheme, n), payload, cfg.stc, scheme)
                    pkg, stego, changed = res.package, res.stego, res.n_changed
                rep = MetricsReport.measure(
                    frames, cover_recon, [c.recon for c in stego], bit_ori, 8 * len(pkg.bitstream), n
                )
                rows.append(
                    {
                        "video": name,
                        "class": video_class(name),
                        "qp": qp,
                        "payload": payload,
                        "scheme": scheme,
                        "n_changed": changed,
                        **asdict(rep),
                    }
                )
                vec = average_features(coded_features(stego)).as_array()
                feats.append({"video": name, "qp": qp, "payload": payload, "scheme": scheme, "features": vec})
    return rows, feats


def run_experiment(corpus, config: ExperimentConfig = None, out_dir=None) -> ExperimentResult:
    """Embed every video at every (qp, payload, scheme) and score it.

    Produces per-video metric rows, CBSSM features for cover and stego, one
    detector accuracy per grid point and, optionally, a recompression
    restoration report per qp. With ``out_dir`` the tables are written too.
    """
    cfg = config or ExperimentConfig()
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    jobs = [(i, v, cfg) for i, v in enumerate(corpus)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            parts = list(pool.map(_video_job, jobs))
    else:
        parts = [_video_job(j) for j in jobs]
    rows = [r for p in parts for r in p[0]]
    feats = [f for p in parts for f in p[1]]

    detection = []
    names = [getattr(v, "name", f"video{i}") for i, v in enumerate(corpus)]
    if len(corpus) >= 2:
        for qp in cfg.qps:
            cover = {f["video"]: f["features"] for f in feats if f["qp"] == qp and f["scheme"] == "cover"}
            for payload in cfg.payloads:
                for scheme in cfg.schemes:
                    stego = {
                        f["video"]: f["features"]
                        for f in feats
                        if f["qp"] == qp and f["payload"] == payload and f["scheme"] == scheme
                    }
                    X = np.vstack([cover[n] for n in names] + [stego[n] for n in names])
                    y = np.r_[np.zeros(len(names)), np.ones(len(names))]
                    groups = np.r_[np.arange(len(names)), np.arange(len(names))]
                    seed = cfg.seed * 1_000_003 + qp * 1000 + int(round(payload * 100)) + sum(map(ord, scheme))
                    _, acc = train_detector(X, y, seed, cfg.repeats, groups)
                    detection.append({"qp": qp, "payload": payload, "scheme": scheme, "accuracy": acc})

    restoration = {}
    if cfg.restoration:
        frames = [pad_to_ctu(v[0]) for v in corpus]
        for qp in cfg.qps:
            restoration[qp] = restoration_analysis(frames, qp).to_dict()

    result = ExperimentResult(rows, feats, detection, restoration, cfg)
    if out_dir is not None:
        write_results(result, out_dir)
    return result


def _fmt(v) -> str:
    if isinstance(v, float):
        return "inf" if math.isinf(v) else ("nan" if math.isnan(v) else f"{v:.6g}")
    return str(v)


def write_results(result: ExperimentResult, out_dir) -> list:
    """CSV per metric, feature and detection tables, JSON summary, plot data."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    head = ("video", "class", "qp", "payload", "scheme", "value")
    for m in METRICS:
        path = os.path.join(out_dir, f"{m}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(head)
            for r in result.rows:
                w.writerow([r["video"], r["class"], r["qp"], r["payload"], r["scheme"], _fmt(r[m])])
        written.append(path)
    path = os.path.join(out_dir, "detection.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for d in result.detection:
            w.writerow(["corpus", "all", d["qp"], d["payload"], d["scheme"], _fmt(d["accuracy"])])
    written.append(path)
    path = os.path.join(out_dir, "features.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("video", "qp", "payload", "scheme") + FEATURE_NAMES)
        for f in result.features:
            w.writerow([f["video"], f["qp"], f["payload"], f["scheme"]] + [f"{v:.6f}" for v in f["features"]])
    written.append(path)
    for qp, rep in result.restoration.items():
        path = os.path.join(out_dir, f"margins_qp{qp}.dat")
        with open(path, "w") as fh:
            fh.write("# frame mean_delta_changed mean_delta_unchanged\n")
            for s in rep["per_frame"]:
                ch = s["mean_delta_changed"]
                un = s["mean_delta_unchanged"]
                fh.write(f"{s['frame']} {'nan' if ch is None else f'{ch:.6g}'} {'nan' if un is None else f'{un:.6g}'}\n")
        written.append(path)
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w") as fh:
        json.dump(jsonable(result.summary()), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    return written


def jsonable(obj):
    """Replace non-finite floats and numpy scalars so ``json`` emits strict JSON."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else "inf"
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    return obj
