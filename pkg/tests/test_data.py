import struct

import numpy as np
import pytest

from knee_xai.core.errors import (
    BadMagicError,
    HeaderError,
    ManifestError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)
from knee_xai.core.schemas import AugmentParams, DataConfig, PhantomParams
from knee_xai.data import (
    PhantomDataset,
    Volume,
    apply_transform,
    augment,
    generate_phantom,
    load_dataset,
    load_manifest,
    load_volume,
    mask_path_for,
    make_split,
    read_container,
    resize_volume,
    write_container,
    write_manifest,
    write_phantom_set,
)
from knee_xai.data.container import encode_header
from knee_xai.data.manifest import ManifestRow


def test_phantom_is_a_pure_function_of_seed_and_index(tiny_params):
    first = generate_phantom(tiny_params, 2)
    again = generate_phantom(tiny_params, 2)
    np.testing.assert_array_equal(first.data, again.data)
    np.testing.assert_array_equal(first.roi_mask, again.roi_mask)
    assert first.patient_id == again.patient_id
    assert first.data.dtype == np.float32
    assert 0.0 <= first.data.min() and first.data.max() <= 1.0


def test_phantom_mask_agrees_with_label(tiny_params):
    for index in range(12):
        volume = generate_phantom(tiny_params, index)
        assert volume.roi_mask.any() == (volume.label == 1)
        assert tiny_params.s_range[0] <= volume.num_slices <= tiny_params.s_range[1]


def test_phantom_lesion_probability_extremes(tiny_params):
    never = tiny_params.model_copy(update={"lesion_probability": 0.0})
    always = tiny_params.model_copy(update={"lesion_probability": 1.0})
    assert all(generate_phantom(never, i).label == 0 for i in range(8))
    assert all(generate_phantom(always, i).label == 1 for i in range(8))


def test_phantom_params_validation():
    with pytest.raises(ValueError):
        PhantomParams(edge=24)
    with pytest.raises(ValueError):
        PhantomParams(s_range=(5, 3))
    with pytest.raises(ValueError):
        PhantomParams(lesion_size=(1, 3))


def test_volume_invariants():
    with pytest.raises(ShapeError):
        Volume(patient_id="p", data=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        Volume(patient_id="p", data=np.full((1, 4, 4), 1.5))
    with pytest.raises(ValueError):
        Volume(patient_id="p", data=np.zeros((1, 4, 4)), label=0, roi_mask=np.ones((1, 4, 4)))
    assert Volume(patient_id="p", data=np.zeros((1, 4, 4)), label=1, roi_mask=np.zeros((1, 4, 4))).label == 1


def test_identity_transform_and_flip_involution(tiny_params):
    volume = generate_phantom(tiny_params.model_copy(update={"lesion_probability": 1.0}), 0)
    same = apply_transform(volume)
    np.testing.assert_array_equal(same.data, volume.data)
    twice = apply_transform(apply_transform(volume, flip=True), flip=True)
    np.testing.assert_array_equal(twice.data, volume.data)
    np.testing.assert_array_equal(twice.roi_mask, volume.roi_mask)
    flipped = apply_transform(volume, flip=True)
    np.testing.assert_array_equal(flipped.data, volume.data[:, :, ::-1])


def test_zero_range_augmentation_is_identity(tiny_params):
    volume = generate_phantom(tiny_params, 1)
    still = AugmentParams(max_rotation_deg=0.0, max_shift_px=0.0, flip_probability=0.0)
    np.testing.assert_array_equal(augment(volume, still, seed=5).data, volume.data)


def test_augment_is_seeded_and_shared_by_slices(tiny_params):
    volume = generate_phantom(tiny_params, 1)
    params = AugmentParams(max_rotation_deg=20.0, max_shift_px=40.0, flip_probability=0.0)
    first = augment(volume, params, seed=3)
    np.testing.assert_array_equal(first.data, augment(volume, params, seed=3).data)
    assert first.data.shape == volume.data.shape
    assert 0.0 <= first.data.min() and first.data.max() <= 1.0


def test_shift_moves_mask_with_image():
    data = np.zeros((1, 16, 16), dtype=np.float32)
    mask = np.zeros((1, 16, 16), dtype=bool)
    data[0, 6:9, 6:9] = 1.0
    mask[0, 6:9, 6:9] = True
    moved = apply_transform(Volume(patient_id="p", data=data, label=1, roi_mask=mask), shift=(2.0, 3.0))
    assert moved.roi_mask[0, 8:11, 9:12].all()
    assert moved.data[0, 9, 10] == pytest.approx(1.0)


def test_lesion_leaving_the_frame_keeps_the_label():
    data = np.zeros((1, 16, 16), dtype=np.float32)
    mask = np.zeros((1, 16, 16), dtype=bool)
    mask[0, 0, 0] = True
    data[0, 0, 0] = 1.0
    moved = apply_transform(Volume(patient_id="p", data=data, label=1, roi_mask=mask), shift=(-8.0, -8.0))
    assert not moved.roi_mask.any()
    assert moved.label == 1
    assert moved.data.shape == data.shape


def test_container_header_layout(tmp_path):
    header = encode_header("<f4", (3, 4, 4))
    assert header[:6] == b"\x93NUMPY"
    assert header[6:8] == b"\x01\x00"
    (length,) = struct.unpack("<H", header[8:10])
    assert len(header) == 10 + length
    assert len(header) % 64 == 0
    text = header[10:].decode("latin1")
    assert text.startswith("{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4, 4), }")
    assert text.endswith("\n")


@pytest.mark.parametrize("dtype", ["<f4", "<f8", "|u1"])
def test_container_interoperates_with_numpy(tmp_path, rng, dtype):
    array = (rng.random((2, 5, 3)) * 200).astype(dtype)
    path = write_container(array, tmp_path / "a.npy")
    np.testing.assert_array_equal(np.load(path), array)
    np.save(tmp_path / "b.npy", array)
    loaded = read_container(tmp_path / "b.npy")
    assert loaded.dtype == np.dtype(dtype)
    np.testing.assert_array_equal(loaded, array)


def test_container_reads_fortran_order(tmp_path, rng):
    array = np.asfortranarray(rng.random((3, 4)))
    np.save(tmp_path / "f.npy", array)
    np.testing.assert_array_equal(read_container(tmp_path / "f.npy"), array)


def test_container_errors(tmp_path):
    with pytest.raises(UnsupportedDtypeError):
        write_container(np.zeros(3, dtype=np.int32), tmp_path / "i.npy")
    bad = tmp_path / "bad.npy"
    bad.write_bytes(b"NOTNUMPY" + b"\x00" * 60)
    with pytest.raises(BadMagicError):
        read_container(bad)
    path = write_container(np.zeros((4, 4), dtype=np.float32), tmp_path / "t.npy")
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(TruncatedPayloadError):
        read_container(path)
    broken = tmp_path / "h.npy"
    text = b"{'descr': '<f4', 'shape': (2,), }"
    text = text + b" " * (-(10 + len(text) + 1) % 64) + b"\n"
    broken.write_bytes(b"\x93NUMPY\x01\x00" + struct.pack("<H", len(text)) + text + b"\x00" * 8)
    with pytest.raises(HeaderError):
        read_container(broken)


def test_load_volume_normalizes(tmp_path):
    raw = np.arange(2 * 4 * 4, dtype=np.float64).reshape(2, 4, 4) * 10.0
    volume = load_volume(write_container(raw, tmp_path / "scan.npy"))
    assert volume.patient_id == "scan"
    assert volume.data.dtype == np.float32
    assert volume.data.min() == 0.0 and volume.data.max() == 1.0
    flat = load_volume(write_container(np.full((4, 4), 7.0), tmp_path / "flat.npy"))
    assert flat.data.shape == (1, 4, 4)
    assert not flat.data.any()
    in_range = np.linspace(0.2, 0.7, 16, dtype=np.float32).reshape(1, 4, 4)
    np.testing.assert_array_equal(load_volume(write_container(in_range, tmp_path / "kept.npy")).data, in_range)


def test_resize_volume_keeps_small_lesions(tiny_params):
    volume = generate_phantom(tiny_params.model_copy(update={"lesion_probability": 1.0}), 0)
    smaller = resize_volume(volume, 8)
    assert smaller.data.shape == (volume.num_slices, 8, 8)
    assert smaller.roi_mask.any()
    assert smaller.label == 1
    assert resize_volume(volume, volume.edge) is volume


def test_split_is_disjoint_exhaustive_and_stable():
    train, val = make_split(10, 0.8, seed=4)
    assert len(train) == 8 and len(val) == 2
    assert sorted(train + val) == list(range(10))
    assert make_split(10, 0.8, seed=4) == (train, val)
    assert make_split(["a", "b"], 0.99, seed=0)[0] in (["a"], ["b"])


def test_split_places_a_positive_on_each_side():
    labels = [1, 1] + [0] * 18
    for seed in range(10):
        train, val = make_split(20, 0.5, seed, labels=labels)
        assert any(labels[i] for i in train) and any(labels[i] for i in val)


def test_split_errors():
    with pytest.raises(ValueError):
        make_split(1, 0.5, 0)
    with pytest.raises(ValueError):
        make_split(4, 1.0, 0)
    with pytest.raises(ValueError):
        make_split(["a", "a"], 0.5, 0)
    with pytest.raises(ValueError):
        make_split(3, 0.5, 0, labels=[0, 1])


def test_manifest_round_trip_and_errors(tmp_path):
    rows = [ManifestRow("p1", "a.npy", 1), ManifestRow("p2", "b.npy", None)]
    path = write_manifest(tmp_path / "m.csv", rows)
    assert path.read_text().splitlines()[0] == "patient_id,path,label"
    loaded = load_manifest(path)
    assert [r.patient_id for r in loaded] == ["p1", "p2"]
    assert loaded[0].label == 1 and loaded[1].label is None
    assert loaded[0].path == str(tmp_path / "a.npy")
    dup = tmp_path / "dup.csv"
    dup.write_text("patient_id,path,label\np1,a.npy,0\np1,b.npy,1\n")
    with pytest.raises(ManifestError, match="p1"):
        load_manifest(dup)
    bad = tmp_path / "bad.csv"
    bad.write_text("patient_id,path,label\np1,a.npy,1\np2,b.npy,2\n")
    with pytest.raises(ManifestError, match="Line 3"):
        load_manifest(bad)
    partial = tmp_path / "partial.csv"
    partial.write_text("patient_id,path\np1,a.npy\n")
    with pytest.raises(ManifestError, match="label"):
        load_manifest(partial)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ManifestError):
        load_manifest(empty)
    assert write_manifest(tmp_path / "none.csv", []).read_text() == "patient_id,path,label\n"
    assert load_manifest(tmp_path / "none.csv") == []


def test_phantom_set_round_trips_through_the_manifest(tmp_path, tiny_params):
    manifest = write_phantom_set(tiny_params, 4, tmp_path / "set")
    dataset = PhantomDataset.from_manifest(manifest)
    assert len(dataset) == 4
    for index, volume in enumerate(dataset):
        original = generate_phantom(tiny_params, index)
        assert volume.patient_id == original.patient_id
        assert volume.label == original.label
        np.testing.assert_array_equal(volume.data, original.data)
        np.testing.assert_array_equal(volume.roi_mask, original.roi_mask)
    config = DataConfig(manifest=str(manifest), resize_edge=8)
    assert load_dataset(config)[0].data.shape[1:] == (8, 8)
    with pytest.raises(ValueError):
        DataConfig(phantom=tiny_params, manifest=str(manifest))


def test_dataset_split_keeps_patients_apart(tiny_params):
    dataset = PhantomDataset.from_phantoms(tiny_params, 8)
    train, val = dataset.split(0.75, seed=2)
    assert len(train) == 6 and len(val) == 2
    assert not set(train.patient_ids) & set(val.patient_ids)
    assert sorted(train.patient_ids + val.patient_ids) == sorted(dataset.patient_ids)


def test_mask_path_only_for_phantom_volume_names(tmp_path):
    assert mask_path_for(tmp_path / "volume_0003.npy") == tmp_path / "mask_0003.npy"
    assert mask_path_for(tmp_path / "scan.npy") is None


def test_phantom_lesion_takes_the_configured_intensity(tiny_params):
    params = tiny_params.model_copy(update={"lesion_probability": 1.0, "lesion_intensity": 0.6})
    volume = generate_phantom(params, 0)
    assert volume.label == 1
    np.testing.assert_allclose(volume.data[volume.roi_mask], 0.6)
    assert PhantomParams().lesion_intensity == pytest.approx(0.45)


def test_phantom_positive_fraction_matches_the_probability():
    params = PhantomParams(edge=16, s_range=(1, 1), lesion_probability=0.35, lesion_size=(2, 2), seed=11)
    draws = 2000
    positives = np.mean([generate_phantom(params, i).label for i in range(draws)])
    assert abs(positives - 0.35) <= 3.0 * np.sqrt(0.35 * 0.65 / draws)


@pytest.mark.parametrize("angle", [-20.0, 20.0])
def test_rotation_round_trip_is_close(angle):
    params = PhantomParams(edge=64, s_range=(4, 4), lesion_probability=0.0, noise_level=0.0, seed=2)
    volume = generate_phantom(params, 0)
    back = apply_transform(apply_transform(volume, angle), -angle)
    assert np.abs(back.data - volume.data).mean() <= 0.02


def test_split_is_valid_for_many_seeds():
    labels = (np.random.default_rng(0).random(250) < 0.35).astype(int).tolist()
    for seed in range(100):
        train, val = make_split(250, 0.8, seed, labels=labels)
        assert len(train) == 200 and len(val) == 50
        assert not set(train) & set(val)
        assert sorted(train + val) == list(range(250))
        assert any(labels[i] for i in train) and any(labels[i] for i in val)
