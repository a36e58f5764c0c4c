import os

import numpy as np
import pytest

from cpgd.functions.codec import CodecConfig, FramePlane, MvGrid, ResidualPlane, encode_sequence
from cpgd.functions.prior_extract import (
    BACKWARD,
    FORWARD,
    augment_dataset,
    densify_mv,
    load_prior_set,
    normalize_residual,
    priors_from_stream,
    read_manifest,
    read_sidecars,
    sidecar_paths,
    write_sidecars,
)
from cpgd.utils.errors import DataError, FormatError, MissingPriorError


def shifting_clip(rng, count, step):
    """Clip whose content moves by ``step`` pixels (dy, dx) per frame."""
    base = rng.integers(0, 256, (64 + 16, 64 + 16))
    frames = []
    for t in range(count):
        oy = 8 - step[0] * t
        ox = 8 - step[1] * t
        frames.append(FramePlane(base[oy : oy + 64, ox : ox + 64]))
    return frames


def test_densify_zero_grid():
    assert np.all(densify_mv(MvGrid.zeros(40, 24, 16), 40, 24) == 0)


def test_densify_tiles():
    vectors = np.array([[[1, 2], [3, 4]], [[-1, -2], [-3, -4]]])
    dense = densify_mv(MvGrid(vectors, 16), 32, 32)
    assert dense.shape == (2, 32, 32)
    assert dense.dtype == np.float32
    assert tuple(dense[:, 0, 0]) == (1, 2)
    assert tuple(dense[:, 15, 31]) == (3, 4)
    assert tuple(dense[:, 16, 0]) == (-1, -2)
    assert tuple(dense[:, 31, 16]) == (-3, -4)


def test_densify_partial_edge_block():
    vectors = np.zeros((3, 3, 2))
    vectors[2, 2] = (5, -5)
    dense = densify_mv(MvGrid(vectors, 16), 33, 33)
    assert tuple(dense[:, 32, 32]) == (5, -5)
    assert tuple(dense[:, 31, 31]) == (0, 0)


def test_normalize_residual_values():
    res = ResidualPlane(np.array([[0, -255, 51, 300]]), 1)
    np.testing.assert_allclose(normalize_residual(res), [[[0.0, 1.0, 0.2, 1.0]]], rtol=1e-6)


def test_normalize_residual_covers_int16_range():
    values = np.arange(-32768, 32768, dtype=np.int32).reshape(256, 256)
    out = normalize_residual(ResidualPlane(values, 1))
    assert out.min() >= 0.0
    assert out.max() <= 1.0
    quantized = normalize_residual(ResidualPlane(np.array([[100]]), 3))
    assert quantized[0, 0, 0] == 1.0


@pytest.mark.parametrize("seed", range(100))
def test_sidecar_round_trip(temp_dir, seed):
    gen = np.random.default_rng(seed)
    block_size = int(gen.choice([8, 16]))
    height, width = (int(n) for n in gen.integers(1, 97, 2))
    radius = int(gen.integers(1, 128))
    blocks = (-(-height // block_size), -(-width // block_size), 2)
    mv = MvGrid(gen.integers(-radius, radius + 1, blocks), block_size)
    res = gen.random((1, height, width)).astype(np.float32)
    direction = BACKWARD if gen.random() < 0.5 else FORWARD
    index = int(gen.integers(0, 10**6))
    write_sidecars(temp_dir, index, mv, res, direction)
    loaded_mv, loaded_res = read_sidecars(temp_dir, index, direction)
    assert loaded_mv == mv
    np.testing.assert_array_equal(loaded_res, res)


def test_missing_sidecar_names_path(temp_dir):
    expected, _ = sidecar_paths(temp_dir, 3, FORWARD)
    with pytest.raises(MissingPriorError) as e:
        read_sidecars(temp_dir, 3, FORWARD)
    assert e.value.path == expected
    assert expected in str(e.value)


def test_truncated_sidecar_reports_counts(temp_dir, rng):
    mv = MvGrid(rng.integers(-4, 5, (2, 2, 2)), 16)
    res = np.zeros((1, 32, 32), np.float32)
    _, crf_path = write_sidecars(temp_dir, 0, mv, res)
    with open(crf_path, "rb") as f:
        data = f.read()
    with open(crf_path, "wb") as f:
        f.write(data[:-6])
    with pytest.raises(FormatError, match=f"payload has {32 * 32 * 4 - 6} byte\\(s\\), header declares {32 * 32 * 4}"):
        read_sidecars(temp_dir, 0)


def test_sidecar_magic_and_direction_checks(temp_dir, rng):
    mv = MvGrid(np.zeros((2, 2, 2)), 16)
    mvf_path, _ = write_sidecars(temp_dir, 0, mv, np.zeros((1, 32, 32), np.float32), FORWARD)
    backward_mvf, _ = sidecar_paths(temp_dir, 0, BACKWARD)
    os.rename(mvf_path, backward_mvf)
    with pytest.raises(FormatError, match="direction code"):
        read_sidecars(temp_dir, 0, BACKWARD)
    with open(backward_mvf, "r+b") as f:
        f.write(b"NOPE")
    with pytest.raises(FormatError, match="bad magic"):
        read_sidecars(temp_dir, 0, BACKWARD)


def test_augment_three_frame_clip_file_layout(temp_dir, rng, small_cfg):
    frames = shifting_clip(rng, 3, (0, 0))
    manifest = augment_dataset(frames, small_cfg, temp_dir)
    for t in range(3):
        for direction in (FORWARD, BACKWARD):
            for path in sidecar_paths(temp_dir, t, direction):
                assert os.path.isfile(path)
    assert manifest == read_manifest(temp_dir)
    assert manifest["frame_count"] == 3
    assert (manifest["width"], manifest["height"]) == (64, 64)
    assert manifest["block_size"] == small_cfg.block_size
    assert manifest["search_radius"] == small_cfg.search_radius
    assert manifest["quant"] == small_cfg.quant


def test_augment_static_clip_has_zero_residuals(temp_dir, static_clip, small_cfg):
    augment_dataset(static_clip, small_cfg, temp_dir)
    for direction in (FORWARD, BACKWARD):
        for v, r in load_prior_set(temp_dir, direction):
            assert np.all(v == 0)
            assert np.all(r == 0)


def test_augment_shifting_clip_vectors(temp_dir, rng):
    frames = shifting_clip(rng, 3, (1, 1))
    cfg = CodecConfig(block_size=16, search_radius=3)
    augment_dataset(frames, cfg, temp_dir)
    mv0, _ = read_sidecars(temp_dir, 0, FORWARD)
    assert np.all(mv0.vectors == 0)
    mv_last, _ = read_sidecars(temp_dir, 2, BACKWARD)
    assert np.all(mv_last.vectors == 0)
    for t in (1, 2):
        mv, _ = read_sidecars(temp_dir, t, FORWARD)
        assert np.all(mv.vectors[1:3, 1:3] == (-1, -1))
    for t in (0, 1):
        mv, _ = read_sidecars(temp_dir, t, BACKWARD)
        assert np.all(mv.vectors[1:3, 1:3] == (1, 1))


def test_augment_rejects_inconsistent_clip(temp_dir, small_cfg):
    frames = [FramePlane(np.zeros((32, 32))), FramePlane(np.zeros((32, 48)))]
    with pytest.raises(DataError, match="frame 1"):
        augment_dataset(frames, small_cfg, temp_dir)


def test_stream_priors_equal_frame_priors(temp_dir, rng):
    frames = shifting_clip(rng, 4, (1, -1))
    cfg = CodecConfig(block_size=16, search_radius=3, quant=1)
    frame_dir = os.path.join(temp_dir, "frames")
    stream_dir = os.path.join(temp_dir, "stream")
    augment_dataset(frames, cfg, frame_dir, directions=(FORWARD,))
    manifest, decoded = priors_from_stream(encode_sequence(frames, cfg), stream_dir)
    assert manifest["frame_count"] == 4
    assert decoded.frames == frames
    for t in range(4):
        for a, b in zip(sidecar_paths(frame_dir, t), sidecar_paths(stream_dir, t)):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                assert fa.read() == fb.read()


def test_load_prior_set_can_drop_residuals(temp_dir, rng):
    frames = shifting_clip(rng, 2, (2, 0))
    augment_dataset(frames, CodecConfig(16, 3, quant=4), temp_dir)
    with_res = load_prior_set(temp_dir, FORWARD)
    without = load_prior_set(temp_dir, FORWARD, use_residual=False)
    assert len(with_res) == 2
    assert with_res[1][0].shape == (2, 64, 64)
    assert with_res[1][1].shape == (1, 64, 64)
    np.testing.assert_array_equal(with_res[1][0], without[1][0])
    assert np.all(without[1][1] == 0)


def test_load_prior_set_missing_manifest(temp_dir):
    with pytest.raises(MissingPriorError, match="manifest.json"):
        load_prior_set(temp_dir, FORWARD)
