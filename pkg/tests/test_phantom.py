import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from betaseg.errors import ConfigError, FormatError
from betaseg.phantom import (BACKGROUND, BONE, CAVITIES, CSF, EYES, GM,
                             NUM_CLASSES, SKIN, VENTRICLES, WM, Dataset,
                             NoiseSpec, PhantomSpec, build_dataset,
                             corrupt_labels, generate_phantom,
                             intensity_overlap, read_dataset, split_sizes,
                             write_dataset)

SPEC = PhantomSpec(seed=0)
NOISE = NoiseSpec(seed=0)


def test_phantom_shapes_and_ranges():
    image, labels = generate_phantom(SPEC, index=0)
    assert image.shape == (1, 64, 64)
    assert image.dtype == np.float32
    assert labels.shape == (64, 64)
    assert labels.dtype == np.uint8
    assert labels.max() < NUM_CLASSES


def test_phantom_contains_every_class():
    _, labels = generate_phantom(SPEC, index=3)
    assert set(np.unique(labels)) == set(range(NUM_CLASSES))


def test_phantom_determinism_and_index_variation():
    img_a, lab_a = generate_phantom(SPEC, index=5)
    img_b, lab_b = generate_phantom(SPEC, index=5)
    assert np.array_equal(img_a, img_b)
    assert np.array_equal(lab_a, lab_b)
    img_c, lab_c = generate_phantom(SPEC, index=6)
    assert not np.array_equal(img_a, img_c)
    other = PhantomSpec(seed=1)
    _, lab_d = generate_phantom(other, index=5)
    assert not np.array_equal(lab_a, lab_d)


def test_phantom_nesting_structure():
    # dilating a class mask by one pixel must only reach its anatomical
    # neighbours: shells nest, ventricles sit strictly inside WM, eyes and
    # cavities may span their host shell up to the adjacent interfaces
    adjacency_ok = {
        BACKGROUND: {SKIN, EYES},
        WM: {GM, VENTRICLES},
        GM: {WM, CSF},
        CSF: {GM, BONE, CAVITIES},
        BONE: {CSF, SKIN, CAVITIES, EYES},
        SKIN: {BACKGROUND, BONE, CAVITIES, EYES},
        CAVITIES: {BONE, CSF, SKIN},
        EYES: {BACKGROUND, BONE, SKIN},
        VENTRICLES: {WM},
    }
    for index in range(5):
        _, labels = generate_phantom(SPEC, index=index)
        for cls, allowed in adjacency_ok.items():
            ring = binary_dilation(labels == cls) & (labels != cls)
            assert set(np.unique(labels[ring])) <= allowed, (index, cls)


def test_ventricles_strictly_inside_wm():
    for index in range(5):
        _, labels = generate_phantom(SPEC, index=index)
        ring = binary_dilation(labels == VENTRICLES) & (labels != VENTRICLES)
        assert set(np.unique(labels[ring])) == {WM}


def test_eyes_are_rare():
    total = 0
    eyes = 0
    for index in range(100):
        _, labels = generate_phantom(SPEC, index=index)
        eyes += int((labels == EYES).sum())
        total += labels.size
    frac = eyes / total
    assert 0.0 < frac < 0.005


def test_cavity_stays_out_of_soft_tissue():
    for index in range(5):
        _, labels = generate_phantom(SPEC, index=index)
        cav_ring = binary_dilation(labels == CAVITIES) & (labels != CAVITIES)
        assert not set(np.unique(labels[cav_ring])) & {WM, GM, VENTRICLES, BACKGROUND}
        eye_ring = binary_dilation(labels == EYES) & (labels != EYES)
        assert not set(np.unique(labels[eye_ring])) & {WM, GM, VENTRICLES, CSF}


def test_image_intensity_tracks_class_means():
    image, labels = generate_phantom(SPEC, index=0)
    means = np.asarray(SPEC.class_means)
    for cls in (BACKGROUND, WM, SKIN):
        vals = image[0][labels == cls]
        assert abs(vals.mean() - means[cls]) < 3 * SPEC.noise_sigma / np.sqrt(len(vals))


def test_intensity_overlap_csf_bone_high():
    overlap = intensity_overlap(SPEC, CSF, BONE)
    assert 0.5 < overlap < 1.0
    assert intensity_overlap(SPEC, BACKGROUND, EYES) < 1e-6


def test_geometry_rejections():
    with pytest.raises(ConfigError):
        PhantomSpec(resolution=(16, 16))
    with pytest.raises(ConfigError):
        PhantomSpec(center_jitter=0.2)
    with pytest.raises(ConfigError):
        PhantomSpec(axis_jitter=0.5)
    with pytest.raises(ConfigError):
        PhantomSpec(class_means=(0.1,) * 4)
    with pytest.raises(ConfigError):
        PhantomSpec(noise_sigma=-0.1)


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(swap_pairs=((CSF, BONE, 1.5),))
    with pytest.raises(ConfigError):
        NoiseSpec(swap_pairs=((CSF, CSF, 0.3),))
    with pytest.raises(ConfigError):
        NoiseSpec(swap_pairs=((CSF, 99, 0.3),))
    with pytest.raises(ConfigError):
        NoiseSpec(band_width=0)


def test_corrupt_zero_rate_is_identity():
    _, labels = generate_phantom(SPEC, index=0)
    noise = NoiseSpec(swap_pairs=((CSF, BONE, 0.0),), seed=0)
    assert np.array_equal(corrupt_labels(labels, noise), labels)


def test_corrupt_full_rate_matches_band_oracle():
    _, labels = generate_phantom(SPEC, index=0)
    noise = NoiseSpec(swap_pairs=((CSF, BONE, 1.0),), band_width=2, seed=0)
    noisy = corrupt_labels(labels, noise)
    near_csf = binary_dilation(labels == CSF, np.ones((3, 3), bool), iterations=2)
    near_bone = binary_dilation(labels == BONE, np.ones((3, 3), bool), iterations=2)
    expected = labels.copy()
    expected[(labels == CSF) & near_bone] = BONE
    expected[(labels == BONE) & near_csf] = CSF
    assert np.array_equal(noisy, expected)


def test_corrupt_only_touches_named_classes():
    _, labels = generate_phantom(SPEC, index=1)
    noisy = corrupt_labels(labels, NOISE, index=1)
    changed = noisy != labels
    assert changed.any()
    touched = set(np.unique(labels[changed])) | set(np.unique(noisy[changed]))
    assert touched <= {CSF, BONE, CAVITIES}


def test_corrupt_determinism_and_index():
    _, labels = generate_phantom(SPEC, index=2)
    a = corrupt_labels(labels, NOISE, index=2)
    b = corrupt_labels(labels, NOISE, index=2)
    assert np.array_equal(a, b)
    c = corrupt_labels(labels, NOISE, index=3)
    assert not np.array_equal(a, c)


def test_corrupt_flip_rate_matches_binomial():
    # pooled over 50 samples the per-pair flip count inside the band must
    # sit within 3 sigma of Binomial(n_band, rate)
    rate = 0.3
    noise = NoiseSpec(swap_pairs=((CSF, BONE, rate),), band_width=2, seed=9)
    flips = 0
    eligible = 0
    for index in range(50):
        _, labels = generate_phantom(SPEC, index=index)
        noisy = corrupt_labels(labels, noise, index=index)
        near_csf = binary_dilation(labels == CSF, np.ones((3, 3), bool), iterations=2)
        near_bone = binary_dilation(labels == BONE, np.ones((3, 3), bool), iterations=2)
        band = ((labels == CSF) & near_bone) | ((labels == BONE) & near_csf)
        eligible += int(band.sum())
        flips += int((noisy != labels).sum())
    sigma = np.sqrt(eligible * rate * (1 - rate))
    assert abs(flips - eligible * rate) < 3 * sigma


def test_corrupt_leaves_absent_classes_alone():
    labels = np.full((64, 64), SKIN, dtype=np.uint8)
    labels[:8] = BACKGROUND
    noisy = corrupt_labels(labels, NOISE)
    assert np.array_equal(noisy, labels)


def test_split_sizes():
    assert split_sizes(10, (0.6, 0.2, 0.2)) == (6, 2, 2)
    assert split_sizes(7, (0.6, 0.2, 0.2)) == (5, 1, 1)
    assert split_sizes(200, (0.6, 0.2, 0.2)) == (120, 40, 40)
    assert split_sizes(10, (1.0, 0.0, 0.0)) == (10, 0, 0)
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        split_sizes(10, (0.5, 0.2, 0.2))  # does not sum to 1
    with pytest.raises(ConfigError):
        build_dataset(10, SPEC, NOISE, split=(1.0, 0.0, 0.0))  # empty val/test


def test_build_dataset_splits_and_determinism():
    data = build_dataset(10, SPEC, NOISE, seed=4)
    assert len(data) == 10
    assert data.images.shape == (10, 1, 64, 64)
    assert [len(data.split_indices(t)) for t in ("train", "val", "test")] == [6, 2, 2]
    again = build_dataset(10, SPEC, NOISE, seed=4)
    assert np.array_equal(data.images, again.images)
    assert data.split_tags == again.split_tags
    other = build_dataset(10, SPEC, NOISE, seed=5)
    assert data.split_tags != other.split_tags  # permutation differs
    assert np.array_equal(data.images, other.images)  # samples do not


def test_build_dataset_noisy_differs_from_clean():
    data = build_dataset(6, SPEC, NOISE, seed=0)
    assert not np.array_equal(data.clean_labels, data.noisy_labels)
    changed = data.clean_labels != data.noisy_labels
    touched = set(np.unique(data.clean_labels[changed]))
    assert touched <= {CSF, BONE, CAVITIES}


def test_build_dataset_rejects_tiny_counts():
    with pytest.raises(ConfigError):
        build_dataset(4, SPEC, NOISE)


def test_dataset_round_trip(tmp_path):
    data = build_dataset(6, SPEC, NOISE, seed=1)
    write_dataset(data, tmp_path / "d")
    loaded = read_dataset(tmp_path / "d")
    assert np.array_equal(loaded.images, data.images)
    assert np.array_equal(loaded.clean_labels, data.clean_labels)
    assert np.array_equal(loaded.noisy_labels, data.noisy_labels)
    assert loaded.split_tags == data.split_tags


def test_read_dataset_rejects_corruption(tmp_path):
    data = build_dataset(6, SPEC, NOISE, seed=1)
    root = tmp_path / "d"
    write_dataset(data, root)

    with pytest.raises(FormatError):
        read_dataset(tmp_path / "missing")

    images = root / "images.f32"
    blob = images.read_bytes()
    images.write_bytes(blob[:-4])
    with pytest.raises(FormatError):
        read_dataset(root)
    images.write_bytes(blob + b"\x00" * 4)
    with pytest.raises(FormatError):
        read_dataset(root)
    images.write_bytes(blob)
    read_dataset(root)  # healthy again

    labels = root / "labels_clean.u8"
    lab_blob = labels.read_bytes()
    labels.write_bytes(b"\xff" + lab_blob[1:])  # label 255 out of range
    with pytest.raises(FormatError):
        read_dataset(root)
    labels.write_bytes(lab_blob)

    manifest = root / "manifest.txt"
    text = manifest.read_text()
    manifest.write_text(text.replace("format_version=1", "format_version=9"))
    with pytest.raises(FormatError):
        read_dataset(root)
    manifest.write_text(text.replace("count=6", "count=7"))
    with pytest.raises(FormatError):
        read_dataset(root)
    manifest.write_text("\n".join(line for line in text.splitlines()
                                  if not line.startswith("height=")) + "\n")
    with pytest.raises(FormatError):
        read_dataset(root)
    manifest.write_text(text + "mystery_key=3\n")
    with pytest.raises(FormatError):
        read_dataset(root)
    manifest.write_text(text)
    read_dataset(root)


def test_write_dataset_files(tmp_path):
    data = build_dataset(5, SPEC, NOISE, seed=2)
    root = tmp_path / "d"
    write_dataset(data, root)
    assert (root / "manifest.txt").exists()
    n, h, w = 5, 64, 64
    assert (root / "images.f32").stat().st_size == n * h * w * 4
    assert (root / "labels_clean.u8").stat().st_size == n * h * w
    assert (root / "labels_noisy.u8").stat().st_size == n * h * w
    manifest = (root / "manifest.txt").read_text()
    for key in ("format_version=", "count=5", "height=64", "width=64",
                "class_count=9", "splits="):
        assert key in manifest
