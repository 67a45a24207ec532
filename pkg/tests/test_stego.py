import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from custego.codec import encode_coded, region_cost, write_stream
from custego.errors import CapacityError, ExtractionError
from custego.frame_io import synth_frame
from custego.quadtree import (
    CuKind,
    Leaf,
    Split,
    StructureMap,
    flip_node,
    node_at,
    random_structure,
    replace_node,
    uniform_split,
    zigzag_scan,
)
from custego.stc import StcParams, build_parity, stc_embed
from custego.stego import (
    StegoHeader,
    StegoPackage,
    analyse_frame,
    apply_modifications,
    audit_modifications,
    bits_to_bytes,
    bytes_to_bits,
    capacity,
    dr,
    embed,
    embed_prepared,
    extract,
    frame_message_lengths,
    map_8x8,
    map_full,
    prepare_cover,
    recompress_structure,
    three_level_cost,
    three_level_costs,
)

S32, S16, S8, N8 = CuKind.S32, CuKind.S16, CuKind.S8_2Nx2N, CuKind.S8_NxN


def _mixed_map():
    # z-order: S32, then a 32x32 quadrant holding S16, S8_2Nx2N x2, S8_NxN x2 ...
    q = Split((Leaf(S16), Split((Leaf(S8), Leaf(N8), Leaf(S8), Leaf(N8))), Leaf(S16), Leaf(S16)))
    return StructureMap(64, 64, (Split((Leaf(S32), q, Leaf(S32), Leaf(S32))),))


def test_map_full_bits():
    c = map_full(_mixed_map())
    assert [r.kind for r in c.refs][:6] == [S32, S16, S8, N8, S8, N8]
    assert list(c.bits[:6]) == [0, 0, 0, 1, 0, 1]
    assert c.q == 10


def test_map_8x8_keeps_only_8x8():
    c = map_8x8(_mixed_map())
    assert [r.kind for r in c.refs] == [S8, N8, S8, N8]
    assert list(c.bits) == [0, 1, 0, 1]


def test_map_empty_cases():
    assert map_full(StructureMap.uniform(64, 64)).q == 0
    assert map_8x8(StructureMap.uniform(64, 64, uniform_split(S32))).q == 0
    nxn = Split((Split((uniform_split(N8),) * 4),) * 4)
    assert map_full(StructureMap(64, 64, (nxn,))).bits.sum() == 64


def test_three_level_cost_values():
    assert three_level_cost(3, 0.1, 0) == pytest.approx(0.3)
    assert three_level_cost(3, 0.1, 1) == pytest.approx(0.1)
    assert three_level_cost(3, 0.1, 2) == pytest.approx(0.05)


@given(st.integers(1, 4), st.floats(0.0, 10.0), st.integers(2, 4))
def test_three_level_ordering(md, d, mdd_value):
    c1, c2, c3 = (three_level_cost(md, d, m) for m in (0, 1, mdd_value))
    assert c1 >= d >= c2
    if d > 0:
        assert c2 > c3


def test_dr_formula(scene128, coded128):
    for cu in zigzag_scan(coded128.structure)[:10]:
        j = coded128.leaf_at(cu.rect).cost.j
        j2 = region_cost(scene128, coded128.recon, cu.rect, flip_node(cu.kind), 32).j
        assert dr(scene128, coded128, cu) == pytest.approx(abs(j - j2) / j)


def test_recompression_examples():
    flat = synth_frame("flat", 64, 64, value=90)
    assert recompress_structure(encode_coded(flat, 32)).ctus == (Leaf(CuKind.S64),)
    # qp 4 has step 1; when the reconstruction is exact the second encode
    # sees identical input and must pick the identical partition
    checker = synth_frame("checker", 64, 64, period=8)
    lossless = encode_coded(checker, 4)
    assert lossless.recon == checker
    assert recompress_structure(lossless) == lossless.structure


def test_rules_and_audit():
    smap = _mixed_map()
    c = map_full(smap)
    s = c.bits.copy()
    s[0] ^= 1  # S32 -> 4 x S16
    s[1] ^= 1  # S16 -> 4 x S8
    s[3] ^= 1  # NxN -> 2Nx2N
    out = apply_modifications(smap, c, s)
    assert audit_modifications(smap, out, c) == []
    assert node_at(out, (0, 0, 32))[0] == uniform_split(S16)
    assert node_at(out, (32, 0, 16))[0] == uniform_split(S8)
    assert node_at(out, (56, 0, 8))[0] == Leaf(S8)
    unchanged = apply_modifications(smap, c, c.bits)
    assert unchanged == smap


def test_audit_flags_violations():
    smap = _mixed_map()
    c = map_full(smap)
    two_levels = replace_node(smap, (0, 0, 32), Split((uniform_split(S8),) * 4))
    assert any("more than one depth" in p for p in audit_modifications(smap, two_levels, c))
    merged = StructureMap.uniform(64, 64)
    assert audit_modifications(smap, merged, c)


def test_message_lengths():
    assert frame_message_lengths([64], 0.5, 32) == [32]
    assert frame_message_lengths([64, 10, 7], 0.5, 36) == [32, 4, 0]
    assert capacity([64, 10, 7], 0.5) == 32 + 5 + 3


@pytest.fixture(scope="module")
def prepared(small_video):
    return {s: prepare_cover(small_video, 32, s) for s in ("full", "8x8")}


@pytest.mark.parametrize("scheme", ["full", "8x8"])
@given(seed=st.integers(0, 2**32 - 1), alpha=st.sampled_from([0.1, 0.3, 0.5]))
def test_round_trip(prepared, scheme, seed, alpha):
    analyses = prepared[scheme]
    rng = np.random.default_rng(seed)
    n = capacity([a.carriers.q for a in analyses], alpha)
    msg = rng.integers(0, 2, int(rng.integers(1, n + 1))).astype(np.uint8)
    res = embed_prepared(analyses, msg, alpha, StcParams(7, seed=seed % 5), scheme)
    for a, st_frame, s in zip(analyses, res.stego, res.stego_bits):
        assert audit_modifications(a.coded.structure, st_frame.structure, a.carriers) == []
    pkg = res.package
    assert (pkg.side_info is None) == (scheme == "8x8")
    np.testing.assert_array_equal(extract(pkg), msg)


def test_empty_message_is_identity(prepared):
    analyses = prepared["full"]
    res = embed_prepared(analyses, np.zeros(0, np.uint8), 0.5)
    assert res.package.bitstream == write_stream([a.coded for a in analyses])
    assert res.n_changed == 0


def test_cover_syndrome_message_changes_nothing(prepared):
    analyses = prepared["full"]
    params = StcParams(7)
    msg = []
    for a in analyses:
        m = int(np.floor(0.5 * a.carriers.q + 1e-9))
        msg.append(build_parity(a.carriers.q, m, params).syndrome(a.carriers.bits))
    res = embed_prepared(analyses, np.concatenate(msg), 0.5, params)
    assert res.n_changed == 0
    assert res.package.bitstream == write_stream([a.coded for a in analyses])


def test_variant_keeps_carrier_grid(prepared):
    analyses = prepared["8x8"]
    msg = np.random.default_rng(0).integers(0, 2, capacity([a.carriers.q for a in analyses], 0.5))
    res = embed_prepared(analyses, msg, 0.5, scheme="8x8")
    for a, s in zip(analyses, res.stego):
        assert [r.rect for r in map_8x8(s.structure).refs] == [r.rect for r in a.carriers.refs]


def test_capacity_error(prepared):
    analyses = prepared["full"]
    n = capacity([a.carriers.q for a in analyses], 0.1)
    with pytest.raises(CapacityError):
        embed_prepared(analyses, np.ones(n + 1, np.uint8), 0.1)


def test_full_scheme_needs_side_info(small_video):
    msg = np.random.default_rng(1).integers(0, 2, 20).astype(np.uint8)
    pkg = embed(small_video, msg, 0.5, 32)
    bare = StegoPackage(pkg.bitstream, pkg.header, None)
    with pytest.raises(ExtractionError):
        extract(bare)
    # the original video regenerates the side info
    np.testing.assert_array_equal(extract(bare, list(small_video)), msg)


def test_header_mismatch(small_video):
    pkg = embed(small_video, np.ones(10, np.uint8), 0.5, 32)
    h = pkg.header
    wrong = StegoHeader(h.scheme, h.alpha, 26, h.message_len, h.carrier_counts, h.frame_bits, h.stc)
    with pytest.raises(ExtractionError):
        extract(StegoPackage(pkg.bitstream, wrong, pkg.side_info))


def test_package_files(tmp_path, small_video):
    pkg = embed(small_video, np.ones(12, np.uint8), 0.3, 32)
    pkg.save(tmp_path / "s.cusg", tmp_path / "s.cusi")
    back = StegoPackage.load(tmp_path / "s.cusg", tmp_path / "s.cusi")
    assert back.bitstream == pkg.bitstream and back.side_info == pkg.side_info
    assert back.header == pkg.header
    np.testing.assert_array_equal(extract(back), np.ones(12, np.uint8))


def test_bytes_bits_round_trip():
    data = b"\x00\xffhello"
    assert bits_to_bytes(bytes_to_bits(data)) == data


def test_stc_prefers_case3_carriers():
    """Flip rate among Case3 carriers >= among Case1, over 20 frames.

    The recompressed partition is replaced by a random one so that every
    case is well populated; costs still come from the real DR values.
    """
    flips = {1: [0, 0], 3: [0, 0]}
    rng = np.random.default_rng(5)
    for i in range(20):
        frame = synth_frame("scene", 64, 64, seed=300 + i)
        a = analyse_frame(frame, 0, 32)
        costs = three_level_costs(frame, a.coded, random_structure(64, 64, rng), a.carriers)
        m = int(0.3 * a.carriers.q)
        stego, _ = stc_embed(a.carriers.bits, costs.cost, rng.integers(0, 2, m).astype(np.uint8))
        changed = stego != a.carriers.bits
        for case in (1, 3):
            sel = costs.case == case
            flips[case][0] += int(changed[sel].sum())
            flips[case][1] += int(sel.sum())
    assert flips[3][1] > 20 and flips[1][1] > 20
    assert flips[3][0] / flips[3][1] >= flips[1][0] / flips[1][1]
