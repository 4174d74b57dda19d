import json
import struct

import numpy as np
import pytest

from seizurecast.clipdata import (
    ClipBundle,
    ClipGeometry,
    ClipMeta,
    Configuration,
    DatasetSpec,
    build_fewshot_pool,
    build_pretrain_dataset,
    clip_roundtrip,
    generate_synthetic_clip,
    load_clip,
    read_dataset,
    sample_frames,
    save_clip,
    write_dataset,
)
from seizurecast.errors import ConfigError, ContractError, FormatError, LengthError, MagicError, TruncationError

SMALL = ClipGeometry(1, 8, 16, 16)


def band_energy(frames: np.ndarray) -> float:
    """Mean squared frame-difference energy in the upper half of the temporal
    frequency band (0.25 to 0.5 cycles per frame), averaged over pixels."""
    diff = np.diff(frames.astype(np.float64), axis=1)
    spec = np.abs(np.fft.rfft(diff, axis=1)) ** 2
    freqs = np.fft.rfftfreq(diff.shape[1])
    return float(spec[:, freqs >= 0.25].sum(axis=1).mean() / diff.shape[1])


# --- metadata -------------------------------------------------------------------


def test_labels_follow_condition():
    assert ClipMeta("human", "preictal", 1).label == 1
    assert ClipMeta("human", "interictal", 1).label == 0
    assert ClipMeta("rodent", "seizure", 1).label == 1
    assert ClipMeta("rodent", "normal", 1).label == 0


@pytest.mark.parametrize(
    "kwargs",
    [
        {"species": "cat", "condition": "normal", "seed": 0},
        {"species": "human", "condition": "asleep", "seed": 0},
        {"species": "human", "condition": "normal", "seed": -1},
        {"species": "human", "condition": "normal", "seed": 0, "fps": 0},
        {"species": "human", "condition": "normal", "seed": 0, "id": "a=b"},
    ],
)
def test_invalid_meta(kwargs):
    with pytest.raises(ContractError):
        ClipMeta(**kwargs)


def test_meta_text_roundtrip():
    m = ClipMeta("rodent", "seizure", 2**64 - 1, fps=25, id="r-01")
    assert ClipMeta.from_text(m.to_text()) == m


# --- generator ------------------------------------------------------------------


def test_generator_is_deterministic():
    m = ClipMeta("human", "preictal", 42)
    assert generate_synthetic_clip(m) == generate_synthetic_clip(m)


def test_default_geometry():
    c = generate_synthetic_clip(ClipMeta("rodent", "normal", 0))
    assert c.frames.shape == (1, 40, 32, 32)
    assert c.frames.dtype == np.float32


def test_pixels_in_unit_interval():
    for seed in range(100):
        for species, condition in (("rodent", "seizure"), ("human", "interictal")):
            f = generate_synthetic_clip(ClipMeta(species, condition, seed)).frames
            assert f.min() >= 0.0 and f.max() <= 1.0


def test_zero_sized_geometry_rejected():
    with pytest.raises(ContractError):
        ClipGeometry(1, 0, 32, 32)


@pytest.mark.parametrize("species, jittery, calm", [("human", "preictal", "interictal"), ("rodent", "seizure", "normal")])
def test_jitter_raises_high_band_energy(species, jittery, calm):
    ratios = []
    for seed in range(50):
        a = band_energy(generate_synthetic_clip(ClipMeta(species, jittery, seed)).frames)
        b = band_energy(generate_synthetic_clip(ClipMeta(species, calm, seed)).frames)
        assert a > b
        ratios.append(a / b)
    assert min(ratios) >= 2.0


def test_same_seed_differs_only_in_jitter_region():
    a = generate_synthetic_clip(ClipMeta("human", "preictal", 9)).frames
    b = generate_synthetic_clip(ClipMeta("human", "interictal", 9)).frames
    # same background; far from the blob only Gaussian tails (< 1e-6) differ
    np.testing.assert_allclose(a[:, :, :3, :3], b[:, :, :3, :3], atol=1e-6)
    assert not np.array_equal(a, b)


def test_species_differ_in_look():
    rod = [generate_synthetic_clip(ClipMeta("rodent", "normal", s)).frames.mean() for s in range(10)]
    hum = [generate_synthetic_clip(ClipMeta("human", "normal", s)).frames.mean() for s in range(10)]
    assert max(rod) < min(hum)


# --- container ------------------------------------------------------------------


def test_roundtrip_thousand_random_clips(tmp_path):
    rng = np.random.default_rng(0)
    conditions = ["seizure", "normal", "preictal", "interictal"]
    for k in range(1000):
        shape = tuple(int(v) for v in rng.integers(1, 6, size=4))
        frames = rng.random(shape, dtype=np.float32)
        if k % 7 == 0:
            frames.flat[0] = np.float32(np.nextafter(np.float32(0), np.float32(1)))  # subnormal survives
        meta = ClipMeta(str(rng.choice(["rodent", "human"])), str(rng.choice(conditions)), int(rng.integers(0, 2**63)), int(rng.integers(1, 60)), f"clip-{k}")
        clip = ClipBundle(meta, frames)
        assert clip_roundtrip(clip, tmp_path / "c.clpb") == clip


def test_payload_size_from_layout(tmp_path):
    clip = generate_synthetic_clip(ClipMeta("human", "normal", 1, id="x"), ClipGeometry(1, 8, 32, 32))
    path = tmp_path / "c.clpb"
    save_clip(clip, path)
    raw = path.read_bytes()
    meta_len = struct.unpack_from("<I", raw, 24)[0]
    assert len(raw) - 28 - meta_len == 32768


@pytest.fixture
def saved(tmp_path):
    clip = generate_synthetic_clip(ClipMeta("human", "normal", 1, id="x"), SMALL)
    path = tmp_path / "c.clpb"
    save_clip(clip, path)
    return path, path.read_bytes()


def test_truncated_by_one_byte(saved):
    path, raw = saved
    path.write_bytes(raw[:-1])
    with pytest.raises(TruncationError) as err:
        load_clip(path)
    assert err.value.field == "payload"


def test_trailing_bytes_rejected(saved):
    path, raw = saved
    path.write_bytes(raw + b"\0\0\0\0")
    with pytest.raises(FormatError) as err:
        load_clip(path)
    assert err.value.field == "payload"


def test_bad_magic(saved):
    path, raw = saved
    path.write_bytes(b"CLPX" + raw[4:])
    with pytest.raises(MagicError):
        load_clip(path)


@pytest.mark.parametrize(
    "offset, value, field",
    [(4, 2, "version"), (12, 0, "dims"), (12, 9, "payload")],
    ids=["version", "zero-dim", "dims-vs-payload"],
)
def test_header_corruption(saved, offset, value, field):
    path, raw = saved
    raw = bytearray(raw)
    struct.pack_into("<I", raw, offset, value)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as err:
        load_clip(path)
    assert err.value.field == field


def test_truncated_header_and_metadata(saved):
    path, raw = saved
    path.write_bytes(raw[:20])
    with pytest.raises(TruncationError):
        load_clip(path)
    path.write_bytes(raw[:30])
    with pytest.raises(TruncationError) as err:
        load_clip(path)
    assert err.value.field == "metadata"


def test_malformed_metadata(saved):
    path, raw = saved
    meta_len = struct.unpack_from("<I", raw, 24)[0]
    garbage = b"nonsense".ljust(meta_len, b"x")
    path.write_bytes(raw[:28] + garbage + raw[28 + meta_len :])
    with pytest.raises(FormatError) as err:
        load_clip(path)
    assert err.value.field == "metadata"


# --- sampling -------------------------------------------------------------------


def test_sample_indices_and_normalization():
    frames = np.arange(40, dtype=np.float32).reshape(1, 40, 1, 1) / 40
    clip = ClipBundle(ClipMeta("human", "normal", 0), np.broadcast_to(frames, (1, 40, 2, 2)).copy())
    x = sample_frames(clip, T=16, rate=2).data
    np.testing.assert_allclose(x[0, :, 0, 0], (np.arange(0, 31, 2) / 40 - 0.5) / 0.5, rtol=1e-6)


def test_identity_selection():
    clip = generate_synthetic_clip(ClipMeta("human", "normal", 3), SMALL)
    np.testing.assert_array_equal(sample_frames(clip, T=8, rate=1, mean=0.0, std=1.0).data, clip.frames)


def test_short_clip_reports_lengths():
    clip = generate_synthetic_clip(ClipMeta("human", "normal", 3), ClipGeometry(1, 10, 8, 8))
    with pytest.raises(LengthError) as err:
        sample_frames(clip, T=16, rate=2)
    assert (err.value.required, err.value.available) == (31, 10)


# --- dataset assembly -------------------------------------------------------------

COUNTS = {"rodent/seizure": 3, "rodent/normal": 2, "human/normal": 4}


def _subsets(clips):
    return {(c.meta.species, c.meta.condition) for c in clips}


@pytest.mark.parametrize(
    "configuration, subsets, size",
    [
        ("Base", set(), 0),
        ("+H", {("human", "normal")}, 4),
        ("+R(Y)", {("rodent", "seizure")}, 3),
        ("+R(N)", {("rodent", "normal")}, 2),
        ("+R(Y/N)", {("rodent", "seizure"), ("rodent", "normal")}, 5),
        ("+R(Y/N)+H", {("rodent", "seizure"), ("rodent", "normal"), ("human", "normal")}, 9),
    ],
)
def test_configuration_composition(configuration, subsets, size):
    clips = build_pretrain_dataset(DatasetSpec(configuration, dict(COUNTS), rodent_normal_pool=10, geometry=SMALL))
    assert _subsets(clips) == subsets
    assert len(clips) == size
    assert len({c.meta.id for c in clips}) == size


def test_mixed_set_orders_rodent_before_human():
    clips = build_pretrain_dataset(DatasetSpec("+R(Y/N)+H", dict(COUNTS), rodent_normal_pool=10, geometry=SMALL))
    species = [c.meta.species for c in clips]
    assert species == ["rodent"] * 5 + ["human"] * 4


def test_rodent_normal_subsample_is_seeded_without_replacement():
    def ids(seed):
        spec = DatasetSpec("+R(N)", {"rodent/normal": 5}, rodent_normal_pool=50, seed=seed, geometry=SMALL)
        return [c.meta.id for c in build_pretrain_dataset(spec)]

    assert ids(1) == ids(1)
    assert len(set(ids(1))) == 5
    assert ids(1) != ids(2)


def test_shared_clips_identical_across_configurations():
    a = build_pretrain_dataset(DatasetSpec("+R(Y)", dict(COUNTS), rodent_normal_pool=10, geometry=SMALL))
    b = build_pretrain_dataset(DatasetSpec("+R(Y/N)+H", dict(COUNTS), rodent_normal_pool=10, geometry=SMALL))
    assert a == b[:3]


def test_unknown_configuration():
    with pytest.raises(ConfigError):
        DatasetSpec("+X")
    with pytest.raises(ConfigError):
        Configuration.parse("Ours")


def test_pool_structure():
    pool = build_fewshot_pool(0, geometry=SMALL)
    assert [c.meta.condition for c in pool] == ["preictal"] * 20 + ["interictal"] * 20
    assert all(c.meta.species == "human" for c in pool)
    assert len({c.meta.id for c in pool}) == 40


def test_manifest_roundtrip(tmp_path):
    clips = build_pretrain_dataset(DatasetSpec("+R(Y/N)+H", dict(COUNTS), rodent_normal_pool=10, geometry=SMALL))
    manifest = write_dataset(clips, tmp_path / "ds")
    entries = json.loads(manifest.read_text())
    assert set(entries[0]) == {"id", "path", "species", "condition"}
    assert read_dataset(manifest) == clips


def test_manifest_duplicate_ids_rejected(tmp_path):
    clip = generate_synthetic_clip(ClipMeta("human", "normal", 0, id="dup"), SMALL)
    with pytest.raises(ContractError):
        write_dataset([clip, clip], tmp_path / "ds")
