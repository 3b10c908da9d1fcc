import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vatseg.data.manifest import ManifestRecord, load_manifest, write_manifest
from vatseg.data.phantom import (
    PhantomParams,
    generate_cohort,
    generate_phantom,
    region_masks,
    sample_geometry,
)
from vatseg.data.volume import HEADER_SIZE, LabelMask, Volume, read_volume, write_volume
from vatseg.evaluation import depot_volume
from vatseg.preprocess import ff_threshold

# -- MVF volumes ---------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 4), h=st.integers(1, 6), w=st.integers(1, 6),
       spacing=st.tuples(*[st.floats(0.25, 10, width=32)] * 3), seed=st.integers(0, 1000))
def test_volume_round_trip(tmp_path_factory, d, h, w, spacing, seed):
    rng = np.random.default_rng(seed)
    path = tmp_path_factory.mktemp("mvf") / "v.mvf"
    vol = Volume(rng.standard_normal((3, d, h, w)).astype(np.float32), spacing)
    write_volume(path, vol)
    back = read_volume(path)
    assert isinstance(back, Volume)
    assert back.data.tobytes() == vol.data.tobytes() and back.spacing == vol.spacing
    lab = LabelMask(rng.integers(0, 3, (d, h, w)).astype(np.uint8), spacing)
    write_volume(path, lab)
    back = read_volume(path)
    assert isinstance(back, LabelMask) and back.data.tobytes() == lab.data.tobytes()


def test_truncated_payload_names_byte_counts(tmp_path):
    path = tmp_path / "v.mvf"
    write_volume(path, Volume(np.zeros((3, 2, 4, 4), np.float32)))
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    expected = HEADER_SIZE + 3 * 2 * 4 * 4 * 4
    with pytest.raises(ValueError, match=f"expected {expected} bytes.*got {expected - 5}"):
        read_volume(path)
    path.write_bytes(raw[:10])
    with pytest.raises(ValueError, match="truncated header"):
        read_volume(path)
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError, match="bad magic"):
        read_volume(path)


def test_label_value_outside_domain_rejected(tmp_path):
    path = tmp_path / "l.mvf"
    write_volume(path, LabelMask(np.zeros((1, 2, 2), np.uint8)))
    raw = bytearray(path.read_bytes())
    raw[HEADER_SIZE] = 3
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="label value 3"):
        read_volume(path)
    with pytest.raises(ValueError):
        LabelMask(np.full((1, 2, 2), 3, np.uint8))


def test_header_layout(tmp_path):
    path = tmp_path / "v.mvf"
    write_volume(path, Volume(np.zeros((3, 2, 5, 7), np.float32), (2.07, 2.07, 8.0)))
    magic, c, d, h, w, sx, sy, sz, code = struct.unpack("<4s4I3fB", path.read_bytes()[:HEADER_SIZE])
    assert (magic, c, d, h, w, code) == (b"MVF1", 3, 2, 5, 7, 0)
    assert (sx, sy, sz) == pytest.approx((2.07, 2.07, 8.0))


# -- manifest ------------------------------------------------------------------


def _touch_records(tmp_path, n_patients, visits):
    records = []
    for p in range(n_patients):
        for v in range(1, visits + 1):
            img, lab = tmp_path / f"p{p}_v{v}.mvf", tmp_path / f"p{p}_v{v}.label.mvf"
            img.touch()
            lab.touch()
            records.append(ManifestRecord(f"p{p}", v, img, lab, "a" if p % 2 else "b"))
    return records


def test_manifest_round_trip_90_records(tmp_path):
    records = _touch_records(tmp_path, 45, 2)
    write_manifest(tmp_path / "m.csv", records)
    back = load_manifest(tmp_path / "m.csv")
    assert len(back) == 90
    assert back == records


def test_manifest_empty_and_comments(tmp_path):
    (tmp_path / "m.csv").write_text("", encoding="utf-8")
    assert load_manifest(tmp_path / "m.csv") == []
    (tmp_path / "m.csv").write_text("# only a comment\n\n", encoding="utf-8")
    assert load_manifest(tmp_path / "m.csv") == []


def test_manifest_errors_name_line(tmp_path):
    _touch_records(tmp_path, 1, 1)
    m = tmp_path / "m.csv"
    m.write_text("# header\np0, 1, p0_v1.mvf, p0_v1.label.mvf, a\np0, 1, p0_v1.mvf, p0_v1.label.mvf, a\n")
    with pytest.raises(ValueError, match=r"m.csv:3: duplicate"):
        load_manifest(m)
    m.write_text("p0, 1, p0_v1.mvf\n")
    with pytest.raises(ValueError, match=r"m.csv:1: expected 5"):
        load_manifest(m)
    m.write_text("p0, x, p0_v1.mvf, p0_v1.label.mvf, a\n")
    with pytest.raises(ValueError, match=r"m.csv:1: visit"):
        load_manifest(m)
    m.write_text("p0, 1, missing.mvf, p0_v1.label.mvf, a\n")
    with pytest.raises(FileNotFoundError, match="missing.mvf"):
        load_manifest(m)


# -- phantom -------------------------------------------------------------------


def _brute_force_labels(geom):
    """Classify every voxel with scalar point-in-region tests."""
    d, h, w = geom.dims
    out = np.zeros((d, h, w), np.uint8)
    for z in range(d):
        s = geom.taper(z)
        ay, ax = geom.body[0] * s - geom.skin, geom.body[1] * s - geom.skin
        by, bx = geom.body[0] * s, geom.body[1] * s
        for y in range(h):
            for x in range(w):
                dy, dx = y - geom.center[0], x - geom.center[1]
                if (dy / by) ** 2 + (dx / bx) ** 2 > 1 or (dy / ay) ** 2 + (dx / ax) ** 2 > 1:
                    continue
                t = geom.sat_thickness * (1 + geom.sat_modulation * math.cos(math.atan2(dy, dx) - geom.sat_phase))
                if (dy / (ay - t)) ** 2 + (dx / (ax - t)) ** 2 > 1:
                    out[z, y, x] = 2
                    continue
                cy, cx = ay - t - geom.wall, ax - t - geom.wall
                if (dy / cy) ** 2 + (dx / cx) ** 2 > 1:
                    continue
                if (dy - geom.spine_dy) ** 2 + dx ** 2 <= geom.spine_radius ** 2:
                    continue
                if any(((z - b.z) / b.rz) ** 2 + ((dy - b.y) / b.ry) ** 2 + ((dx - b.x) / b.rx) ** 2 <= 1
                       for b in geom.blobs):
                    out[z, y, x] = 1
    return out


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_phantom_labels_match_geometry_predicates(seed):
    params = PhantomParams(seed=seed, dims=(4, 48, 48))
    geom = sample_geometry(params, np.random.default_rng(seed))
    _, labels, _ = generate_phantom(params, geom)
    np.testing.assert_array_equal(labels.data, _brute_force_labels(geom))
    regions = region_masks(geom)
    vat, sat = labels.data == 1, labels.data == 2
    assert not (vat & regions["spine"]).any() and not (vat & ~regions["inner"]).any()
    assert (sat == regions["sat"]).all()
    assert not (regions["gas"] & (vat | sat)).any()


def test_phantom_is_deterministic():
    params = PhantomParams(seed=11, include_background_noise=True)
    a, b = generate_phantom(params), generate_phantom(params)
    assert a[0].data.tobytes() == b[0].data.tobytes()
    assert a[1].data.tobytes() == b[1].data.tobytes()
    assert a[2].tobytes() == b[2].tobytes()


@pytest.mark.parametrize("noise", [False, True])
def test_phantom_signal_and_fat_fraction_model(noise):
    vol, labels, body = generate_phantom(PhantomParams(seed=4, include_background_noise=noise))
    fat_tissue = labels.data > 0
    assert np.all(vol.fat_fraction[fat_tissue] >= 0.5)
    assert np.array_equal(ff_threshold(labels, vol), labels.data)
    assert vol.fat[fat_tissue].mean() > 3 * vol.water[fat_tissue].mean()
    lean = body & ~fat_tissue
    assert vol.water[lean].mean() > vol.fat[lean].mean()
    bg = vol.fat_fraction[~body]
    if noise:
        assert 0.4 < bg.mean() < 0.6 and bg.min() >= 0 and bg.max() <= 1
    else:
        assert not vol.data[:, ~body].any()


def test_phantom_rejects_degenerate_geometry():
    with pytest.raises(ValueError, match="cavity"):
        generate_phantom(PhantomParams(wall_thickness=0.6))
    with pytest.raises(ValueError, match="spine_radius"):
        generate_phantom(PhantomParams(spine_radius=0.0))
    with pytest.raises(ValueError, match="sat_thickness"):
        generate_phantom(PhantomParams(sat_thickness=(0.3, 0.1)))


def test_cohort_layout_and_visit_correlation(tmp_path):
    manifest, records = generate_cohort(10, 2, PhantomParams(dims=(6, 64, 64)), seed=7, out_dir=tmp_path)
    assert len(records) == 20 and len(load_manifest(manifest)) == 20
    assert len(list(tmp_path.glob("*_v?.mvf"))) == 20
    assert len(list(tmp_path.glob("*.label.mvf"))) == 20
    masks = {}
    for pid in {r.patient_id for r in records}:
        v1, v2 = [read_volume(r.label_path) for r in records if r.patient_id == pid]
        masks[pid] = v1.data
        for cls in (1, 2):
            a, b = depot_volume(v1, v1.spacing, cls), depot_volume(v2, v2.spacing, cls)
            assert abs(a - b) / max(a, b) < 0.10
    keys = sorted(masks)
    for i, p in enumerate(keys):
        for q in keys[i + 1:]:
            assert not np.array_equal(masks[p], masks[q])
