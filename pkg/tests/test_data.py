import hashlib
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmtransformer.data import (
    DatasetError,
    GeoMap,
    SynthChannelParams,
    assemble_input,
    bresenham_cells,
    denormalize_dbm,
    generate_layout,
    load_dataset,
    los_wall_count,
    normalize_dbm,
    split_indices,
    synth_radio_map,
    wall_count_map,
    write_dataset,
)
from rmtransformer.pgm import (
    PGMError,
    decode_mask_pgm,
    decode_pgm16,
    encode_mask_pgm,
    encode_pgm16,
)
from rmtransformer.rng import MASK64, Rng64, rng_next


def splitmix_reference(state):
    """Straight transcription of the update with Python big ints."""
    state = (state + 0x9E3779B97F4A7C15) % 2**64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) % 2**64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) % 2**64
    return state, z ^ (z >> 31)


# rng --------------------------------------------------------------------------

def test_splitmix_seed_zero():
    r = Rng64(0)
    assert rng_next(r) == 0xE220A8397B1DCDAF
    assert rng_next(r) == 0x6E789E6AA1B965F4


@settings(max_examples=50, deadline=None)
@given(st.integers(0, MASK64))
def test_block_matches_scalar_reference(seed):
    block = Rng64(seed).next_block(5)
    s, ref = seed, []
    for _ in range(5):
        s, z = splitmix_reference(s)
        ref.append(z)
    assert [int(v) for v in block] == ref
    a, b = Rng64(seed), Rng64(seed)
    assert [a.next() for _ in range(3)] == [b.next() for _ in range(3)]


def test_uniform_open_interval_and_normals():
    u = Rng64(1).uniform_block(100_000)
    assert u.min() > 0 and u.max() < 1
    z = Rng64(2).normal_block(200_001)
    assert z.shape == (200_001,)
    assert abs(z.mean()) < 0.01 and abs(z.std() - 1) < 0.01


# normalisation ---------------------------------------------------------------------

def test_normalize_reference_points():
    assert normalize_dbm(-254.0) == 0.0
    assert normalize_dbm(0.0) == 1.0
    assert normalize_dbm(-127.0) == 0.5
    assert normalize_dbm(-400.0) == 0.0 and normalize_dbm(5.0) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_normalize_denormalize_round_trip(v):
    assert normalize_dbm(denormalize_dbm(v)) == pytest.approx(v, abs=2 * np.finfo(float).eps)


# pgm -------------------------------------------------------------------------------

def test_pgm16_pixel_values():
    blob = encode_pgm16(np.array([[0.0, 1.0, 0.5]]))
    assert blob.startswith(b"P5\n3 1\n65535\n")
    px = np.frombuffer(blob[-6:], dtype=">u2")
    assert list(px) == [0, 65535, 32768]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pgm16_round_trip_bound(seed):
    v = np.random.default_rng(seed).random((9, 7))
    back = decode_pgm16(encode_pgm16(v))
    assert np.max(np.abs(back - v)) <= 1 / 131070 + 1e-15


def test_pgm_errors():
    good = encode_pgm16(np.zeros((2, 2)))
    with pytest.raises(PGMError):
        decode_pgm16(b"P2" + good[2:])
    with pytest.raises(PGMError):
        decode_pgm16(good[:-1])
    with pytest.raises(PGMError):
        decode_pgm16(encode_mask_pgm(np.ones((2, 2), dtype=bool)))
    with pytest.raises(PGMError):
        encode_pgm16(np.array([[1.5]]))


def test_pgm_header_comment_and_mask():
    mask = np.array([[True, False], [False, True]])
    blob = encode_mask_pgm(mask)
    commented = blob.replace(b"P5\n", b"P5\n# made by hand\n", 1)
    np.testing.assert_array_equal(decode_mask_pgm(commented), mask)


# layout ---------------------------------------------------------------------------

def test_layout_deterministic():
    a = generate_layout(42, 32, 32, 4, (4, 10))
    b = generate_layout(42, 32, 32, 4, (4, 10))
    assert a.roi_mask.tobytes() == b.roi_mask.tobytes() and a.tx == b.tx
    assert a.roi_mask[a.tx]


def test_layout_without_rectangles_is_free():
    g = generate_layout(3, 32, 64, 0)
    assert g.roi_mask.all()


def test_layout_golden():
    # frozen from the first run of the generator
    g = generate_layout(7, 64, 64, 6, (6, 16))
    assert g.building_fraction() == 564 / 4096
    assert g.tx == (35, 31)
    assert hashlib.sha256(g.roi_mask.tobytes()).hexdigest()[:16] == "e792dcffaa6bbb9f"


def test_layout_rejects_bad_extents():
    with pytest.raises(ValueError):
        generate_layout(0, 48, 64, 1)


# line of sight ------------------------------------------------------------------------

def _free(h, w):
    return np.ones((h, w), dtype=bool)


def test_wall_count_examples():
    mask = _free(8, 8)
    geo = GeoMap(mask, (0, 0))
    assert los_wall_count(geo, (3, 3), (3, 4)) == 0
    mask = _free(8, 8)
    mask[2, 3:6] = False
    geo = GeoMap(mask, (2, 0))
    assert los_wall_count(geo, (2, 0), (2, 7)) == 3
    mask = _free(8, 8)
    mask[5, 5] = False
    geo = GeoMap(mask, (0, 0))
    assert los_wall_count(geo, (5, 1), (5, 5)) == 0
    with pytest.raises(IndexError):
        los_wall_count(geo, (0, 0), (8, 0))


def test_bresenham_endpoints_and_connectivity():
    cells = bresenham_cells((0, 0), (3, 7))
    assert cells[0] == (0, 0) and cells[-1] == (3, 7)
    for (r0, c0), (r1, c1) in zip(cells, cells[1:]):
        assert max(abs(r1 - r0), abs(c1 - c0)) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.tuples(st.integers(0, 31), st.integers(0, 31)),
       st.tuples(st.integers(0, 31), st.integers(0, 31)))
def test_wall_count_symmetric(seed, a, b):
    geo = generate_layout(seed, 32, 32, 5, (3, 9))
    assert los_wall_count(geo, a, b) == los_wall_count(geo, b, a)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_vectorised_wall_map_matches_scalar(seed):
    geo = generate_layout(seed, 32, 32, 6, (3, 10))
    fast = wall_count_map(geo)
    for r in range(32):
        for c in range(32):
            assert fast[r, c] == los_wall_count(geo, geo.tx, (r, c))


# radio map ---------------------------------------------------------------------------

def test_synth_pathloss_example():
    p = SynthChannelParams(alpha=2.0, beta=30.0, sigma_sf=0.0, wall_loss_db=0.0, d0_m=1.0)
    geo = GeoMap(_free(128, 128), (0, 0), cell_size_m=1.0)
    rm = synth_radio_map(geo, p, 0)
    # 10*2*log10(100) + 30 = 70 dB -> -70 dBm
    assert rm[0, 100] == pytest.approx((254 - 70) / 254, abs=1e-12)
    assert rm[0, 100] == pytest.approx(0.724409, abs=1e-6)
    assert rm[0, 0] == pytest.approx((254 - 30) / 254, abs=1e-12)


def test_synth_masks_buildings_and_is_deterministic():
    geo = generate_layout(5, 32, 32, 4, (4, 8))
    p = SynthChannelParams()
    a, b = synth_radio_map(geo, p, 9), synth_radio_map(geo, p, 9)
    assert a.tobytes() == b.tobytes()
    assert np.all(a[~geo.roi_mask] == 0)
    assert np.all(a[geo.roi_mask] > 0) and np.all(np.isfinite(a))
    assert np.all(a <= 1)


def test_synth_monotone_in_distance_without_walls_or_fading():
    p = SynthChannelParams(sigma_sf=0.0, wall_loss_db=0.0)
    geo = GeoMap(_free(32, 32), (10, 12))
    rm = synth_radio_map(geo, p, 0)
    rr, cc = np.mgrid[0:32, 0:32]
    d = np.hypot(rr - 10, cc - 12).ravel()
    order = np.argsort(d, kind="stable")
    v = rm.ravel()[order]
    assert np.all(np.diff(v) <= 1e-15)


def test_shadow_fading_statistics():
    p = SynthChannelParams(alpha=2.0, beta=30.0, sigma_sf=6.0, wall_loss_db=0.0, sf_smooth=2)
    geo = GeoMap(_free(64, 64), (0, 0))
    no_sf = synth_radio_map(geo, SynthChannelParams(alpha=2.0, beta=30.0, sigma_sf=0.0, wall_loss_db=0.0), 0)
    sf_db = (no_sf - synth_radio_map(geo, p, 4)) * 254
    assert sf_db.std() == pytest.approx(6.0, rel=1e-9)
    assert abs(sf_db.mean()) < 1e-9


# input assembly -------------------------------------------------------------------------

def test_assemble_input():
    x = assemble_input(GeoMap(_free(4, 4), (3, 2))).data
    assert x.shape == (1, 2, 4, 4) and np.all(x[0, 0] == 1)
    geo = GeoMap(_free(8, 8), (3, 4))
    x = assemble_input(geo).data
    assert x[0, 1].sum() == 1.0 and x[0, 1, 3, 4] == 1.0
    mask = _free(4, 4)
    mask[1, 1] = False
    assert assemble_input(GeoMap(mask, (0, 0))).data[0, 0].sum() == 15


# dataset ------------------------------------------------------------------------------------

def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_dataset_round_trip_and_determinism(tmp_path):
    m = write_dataset(tmp_path / "a", 4, 100, size=32)
    write_dataset(tmp_path / "b", 4, 100, size=32)
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    assert m["channel_params"]["alpha"] == 3.0 and m["channel_params"]["beta"] == 32.4
    assert m["channel_params"]["sigma_sf"] == 6.0 and m["cell_size_m"] == 0.86
    ds = load_dataset(tmp_path / "a")
    assert len(ds) == 4
    from rmtransformer.data import make_sample, LayoutParams
    for i, s in enumerate(ds.samples):
        ref = make_sample(100, i, 32, SynthChannelParams(), LayoutParams.for_size(32))
        np.testing.assert_array_equal(s.geo.roi_mask, ref.geo.roi_mask)
        assert s.geo.tx == ref.geo.tx
        assert np.max(np.abs(s.radio - ref.radio)) <= 1 / 131070 + 1e-15


def test_split_sizes():
    train, test = split_indices(10, 3)
    assert len(train) == 9 and len(test) == 1
    assert sorted(train + test) == list(range(10))
    assert split_indices(10, 3) == (train, test)


def test_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)
    write_dataset(tmp_path / "d", 2, 0, size=32)
    (tmp_path / "d" / "samples" / "00001.rm.pgm").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "d")
    write_dataset(tmp_path / "e", 2, 0, size=32)
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    man["count"] = 3
    (tmp_path / "e" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "e")
    write_dataset(tmp_path / "f", 1, 0, size=32)
    p = tmp_path / "f" / "samples" / "00000.rm.pgm"
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "f")
