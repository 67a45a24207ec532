import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from custego.cbssm import (
    FEATURE_NAMES,
    CbssmFeatureVector,
    average_features,
    bqum,
    bsim,
    count_blocks,
    estimate_lipschitz,
    feature_vector,
    frame_feature_rows,
    frame_features,
    restoration_analysis,
    write_features_csv,
)
from custego.codec import RdoMargin, encode_video
from custego.frame_io import synth_frame
from custego.quadtree import CuKind, CuRef, Leaf, StructureMap, random_structure, replace_node, uniform_split

S32, S16 = CuKind.S32, CuKind.S16


def test_bqum_values():
    assert bqum(2, 1) == pytest.approx(math.exp(-0.5), abs=1e-9)
    assert bqum(1, 0) == pytest.approx(math.exp(-1.0), abs=1e-9)
    assert bqum(2, 4) == pytest.approx(math.exp(-1.0), abs=1e-9)
    assert bqum(5, 5) == 1.0
    assert bqum(0, 0) == 1.0
    with pytest.raises(ValueError):
        bqum(-1, 2)


def test_bsim_hand_example():
    orig = StructureMap(64, 64, (uniform_split(S32),))
    rec = replace_node(orig, (32, 32, 32), uniform_split(S16))
    assert bsim(orig, rec, S32) == 0.75
    assert bsim(orig, rec, S16) == 1.0  # no 16x16 blocks in the original
    merged = StructureMap(64, 64, (Leaf(CuKind.S64),))
    assert bsim(orig, merged, S32) == 0.0


def test_counts():
    orig = StructureMap(64, 64, (uniform_split(S32),))
    assert count_blocks(orig).as_tuple() == (4, 0, 0, 0)


@given(st.integers(0, 2**32 - 1))
def test_identical_maps_give_ones(seed):
    smap = random_structure(128, 64, np.random.default_rng(seed))
    assert np.all(frame_features(smap, smap).as_array() == 1.0)


@given(st.integers(0, 2**32 - 1))
def test_features_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    a, b = random_structure(128, 128, rng), random_structure(128, 128, rng)
    v = frame_features(a, b).as_array()
    assert v.shape == (8,) and np.all((v >= 0) & (v <= 1))


def test_vector_round_trip():
    v = CbssmFeatureVector((1.0, 0.5, 0.25, 0.0), (0.9, 0.8, 0.7, 0.6))
    assert CbssmFeatureVector.from_array(v.as_array()) == v
    assert v.mean_bsim == pytest.approx(0.75)
    avg = average_features([v, CbssmFeatureVector.from_array(np.ones(8))])
    assert avg.bqum[1] == pytest.approx(0.75)


def test_stream_features():
    frames = [synth_frame("scene", 64, 64, seed=s) for s in (1, 2)]
    _, data = encode_video(frames, 32)
    rows = frame_feature_rows(data)
    assert len(rows) == 2
    assert len(frame_feature_rows(data, n_frames=1)) == 1
    np.testing.assert_allclose(feature_vector(data).as_array(), average_features(rows).as_array())
    with pytest.raises(ValueError):
        frame_feature_rows(data, n_frames=3)


def test_csv_layout():
    buf = io.StringIO()
    write_features_csv(buf, [("v", 0, CbssmFeatureVector.from_array(np.ones(8)))])
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",") == ["video", "frame", *FEATURE_NAMES]
    assert lines[1].startswith("v,0,1.000000")


def _margin(frame, delta, eps, k=0):
    return RdoMargin(CuRef(frame, 0, 0, 8, CuKind.S8_2Nx2N, k), 100.0, delta, eps)


def test_lipschitz_hand_example():
    margins = [_margin(0, 2, 1), _margin(0, 8, 2), _margin(0, 12, 2), _margin(1, 50, 1), _margin(1, 3, 1)]
    changed = [1, 1, 1, 0, 0]
    rep = estimate_lipschitz(margins, changed)
    # ratios over changed CUs: 2, 4, 6 -> median 4 -> L = 2, bound = 4 * eps
    assert rep.lipschitz == pytest.approx(2.0)
    above = [2 > 4, 8 > 8, 12 > 8, 50 > 4, 3 > 4]
    assert rep.fraction_above_bound == pytest.approx(np.mean(above))
    assert rep.unchanged_above_bound == pytest.approx(0.5)
    assert rep.change_rate_above_bound == pytest.approx(0.5)
    assert rep.fraction_structure_unchanged == pytest.approx(0.4)
    assert [s["frame"] for s in rep.per_frame] == [0, 1]
    assert rep.per_frame[0]["mean_delta_changed"] == pytest.approx(22 / 3)
    assert rep.per_frame[1]["mean_delta_changed"] is None


def test_lipschitz_degenerate():
    rep = estimate_lipschitz([_margin(0, 1, 1)], [0])
    assert math.isnan(rep.lipschitz) and "not estimable" in rep.note
    with pytest.raises(ValueError):
        estimate_lipschitz([], [])
    with pytest.raises(ValueError):
        estimate_lipschitz([_margin(0, 1, 1)], [0, 1])


def test_restoration_report_shape():
    frames = [synth_frame("scene", 64, 64, seed=s) for s in (4, 5)]
    rep = restoration_analysis(frames, 32)
    assert rep.n_cus > 0
    assert 0.0 <= rep.fraction_structure_unchanged <= 1.0
    assert 0.0 <= rep.mean_bsim <= 1.0
    assert {s["frame"] for s in rep.per_frame} == {0, 1}
    assert set(rep.to_dict()) >= {"lipschitz", "fraction_structure_unchanged", "per_frame"}


def test_flat_frame_is_stable():
    rep = restoration_analysis([synth_frame("flat", 64, 64, value=60)], 32)
    assert rep.n_cus == 0 and rep.fraction_structure_unchanged == 1.0 and rep.mean_bsim == 1.0
