import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from gazestyle.config import ConfigError, JobConfig, dump_config, load_config, parse_config
from gazestyle.imageio import ImageFormatError, labels_to_mask, load_image, load_mask, save_image, save_mask
from gazestyle.pupil import (
    PupilReport,
    PupilRow,
    estimate_attention_mask,
    fit_ellipse_center,
    pupil_center,
    pupil_shift_report,
)

FIXTURES = Path(__file__).parent / "fixtures"


def disc(h, w, cx, cy, r):
    ys, xs = np.mgrid[0:h, 0:w]
    return (np.hypot(xs - cx, ys - cy) <= r).astype(np.float64)


def as_mask(channel0):
    return np.stack([channel0, 1 - channel0])[None]


# ---------------------------------------------------------------- images


def test_solid_red(tmp_path):
    Image.new("RGB", (7, 5), (255, 0, 0)).save(tmp_path / "red.png")
    img = load_image(tmp_path / "red.png")
    assert img.shape == (1, 3, 5, 7) and img.dtype == np.float32
    assert np.all(img[0, 0] == 255) and np.all(img[0, 1:] == 0)


def test_round_trip_is_lossless(tmp_path, rng):
    img = rng.integers(0, 256, (1, 3, 9, 13)).astype(np.float32)
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    np.testing.assert_array_equal(back, img)
    save_image(back, tmp_path / "b.png")
    digest = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a.png", "b.png")]
    assert digest[0] == digest[1]


def test_save_rounds_and_clips(tmp_path):
    img = np.array([-20.0, 12.6, 300.0]).reshape(1, 3, 1, 1)
    save_image(img, tmp_path / "c.png")
    assert load_image(tmp_path / "c.png").reshape(-1).tolist() == [0.0, 13.0, 255.0]


def test_eye_fixture_shape():
    assert load_image(FIXTURES / "eye_55x35.png").shape == (1, 3, 35, 55)


def test_sixteen_bit_rejected(tmp_path):
    Image.fromarray(np.full((4, 4), 40000, np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(ImageFormatError, match="8-bit"):
        load_image(tmp_path / "deep.png")


def test_malformed_file_rejected(tmp_path):
    (tmp_path / "junk.png").write_bytes(b"not a png at all")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "junk.png")


# ---------------------------------------------------------------- masks


def test_all_zero_labels(tmp_path):
    save_mask(np.zeros((6, 4), np.uint8), tmp_path / "m.png")
    m = load_mask(tmp_path / "m.png", 2)
    assert m.shape == (1, 2, 6, 4) and np.all(m[0, 0] == 1) and np.all(m[0, 1] == 0)


def test_fixture_mask_channel_areas():
    # pixel counts of the label image (label 0: 197, label 1: 1728), counted with PIL when the fixture was made
    m = load_mask(FIXTURES / "eye_55x35_mask.png", 2)
    assert m[0, 0].sum() == 197 and m[0, 1].sum() == 1728
    assert np.all(m.sum(axis=1) == 1)


def test_bad_label_rejected(tmp_path):
    labels = np.zeros((4, 4), np.uint8)
    labels[1, 2] = 7
    save_mask(labels, tmp_path / "bad.png")
    with pytest.raises(ValueError, match="7"):
        load_mask(tmp_path / "bad.png", 2)


def test_rgb_mask_rejected(tmp_path):
    Image.new("RGB", (4, 4)).save(tmp_path / "rgb.png")
    with pytest.raises(ImageFormatError):
        load_mask(tmp_path / "rgb.png")


def test_palette_mask_accepted(tmp_path):
    img = Image.fromarray(np.array([[0, 1], [2, 1]], np.uint8), "P")
    img.putpalette([0, 0, 0, 255, 0, 0, 0, 255, 0])
    img.save(tmp_path / "p.png")
    m = load_mask(tmp_path / "p.png", 3)
    np.testing.assert_array_equal(m[0].argmax(axis=0), [[0, 1], [2, 1]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), channels=st.integers(1, 5))
def test_one_hot_channel_sum(seed, channels):
    labels = np.random.default_rng(seed).integers(0, channels, (5, 6))
    m = labels_to_mask(labels, channels)
    assert np.all(m.sum(axis=1) == 1)
    np.testing.assert_array_equal(m[0].argmax(axis=0), labels)


# ---------------------------------------------------------------- pupil centres


def test_centered_disc():
    cx, cy = pupil_center(as_mask(disc(35, 55, 27, 17, 5)))
    assert abs(cx - 27) < 0.1 and abs(cy - 17) < 0.1


def test_single_pixel():
    m = np.zeros((35, 55))
    m[20, 10] = 1.0
    assert pupil_center(as_mask(m)) == (10.0, 20.0)


def test_empty_region_rejected():
    with pytest.raises(ValueError):
        pupil_center(as_mask(np.zeros((5, 5))))


@settings(max_examples=40, deadline=None)
@given(dx=st.integers(-10, 10), dy=st.integers(-8, 8), r=st.floats(2.0, 6.0), refine=st.booleans())
def test_translation_equivariance(dx, dy, r, refine):
    base = pupil_center(as_mask(disc(35, 55, 25.3, 16.6, r)), refine=refine)
    moved = pupil_center(as_mask(disc(35, 55, 25.3 + dx, 16.6 + dy, r)), refine=refine)
    assert abs(moved[0] - base[0] - dx) < 0.1 and abs(moved[1] - base[1] - dy) < 0.1


@settings(max_examples=30, deadline=None)
@given(cx=st.floats(12, 28), cy=st.floats(12, 28), r=st.floats(3.0, 8.0), refine=st.booleans())
def test_rotation_invariance(cx, cy, r, refine):
    n = 41
    m = disc(n, n, cx, cy, r)
    x0, y0 = pupil_center(as_mask(m), refine=refine)
    # rot90 moves pixel (row, col) to (n - 1 - col, row)
    x1, y1 = pupil_center(as_mask(np.rot90(m).copy()), refine=refine)
    assert abs(x1 - y0) < 0.1 and abs(y1 - (n - 1 - x0)) < 0.1


def test_ellipse_fit_recovers_centre():
    t = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    a, b, phi = 6.0, 3.5, 0.4
    x = 20.5 + a * np.cos(t) * np.cos(phi) - b * np.sin(t) * np.sin(phi)
    y = 11.25 + a * np.cos(t) * np.sin(phi) + b * np.sin(t) * np.cos(phi)
    cx, cy = fit_ellipse_center(np.column_stack([x, y]))
    assert cx == pytest.approx(20.5, abs=1e-9) and cy == pytest.approx(11.25, abs=1e-9)
    assert fit_ellipse_center(np.zeros((3, 2))) is None


def test_mask_re_estimated_from_clean_image():
    img = load_image(FIXTURES / "eye_55x35.png")
    labels = load_mask(FIXTURES / "eye_55x35_mask.png")
    est = estimate_attention_mask(img)
    assert est.shape == (1, 2, 35, 55)
    a, b = pupil_center(labels), pupil_center(est)
    assert np.hypot(a[0] - b[0], a[1] - b[1]) < 1.0


def test_constant_image_has_no_region():
    with pytest.raises(ValueError):
        estimate_attention_mask(np.full((1, 3, 8, 8), 100.0))


# ---------------------------------------------------------------- shift report


def point_mask(x, y, h=35, w=55):
    m = np.zeros((h, w))
    m[y, x] = 1.0
    return as_mask(m)


def test_identical_masks_report_zero():
    m = as_mask(disc(35, 55, 27, 17, 5))
    report = pupil_shift_report([(m, m), (m, m)])
    assert report.mean == 0.0 and report.std == 0.0
    assert report.summary().startswith("pupil shift 0.0 ± 0.0 px")
    assert "eye width=55px" in report.summary()


def test_shift_three_four_is_five():
    report = pupil_shift_report([(point_mask(10, 10), point_mask(13, 14))])
    assert report.rows[0].shift == 5.0


def test_cohort_stats_by_hand(tmp_path):
    pairs = [(point_mask(10, 10), point_mask(13, 14)),  # 5
             (point_mask(20, 5), point_mask(20, 5)),  # 0
             (point_mask(1, 1), point_mask(7, 9)),  # 10
             (point_mask(30, 30), point_mask(31, 30))]  # 1
    report = pupil_shift_report(pairs, ["a", "b", "c", "d"])
    np.testing.assert_array_equal(report.shifts, [5.0, 0.0, 10.0, 1.0])
    # mean 16 / 4 = 4; population variance (1 + 16 + 36 + 9) / 4 = 15.5
    assert report.mean == 4.0 and report.std == pytest.approx(np.sqrt(15.5), rel=1e-15)
    report.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("#") and "not manual" in lines[0]
    assert lines[1] == "name,x_before,y_before,x_after,y_after,shift_px"
    assert lines[2] == "a,10.0000,10.0000,13.0000,14.0000,5.0000"
    assert lines[-2] == "mean,,,,,4.0000"


def test_report_defaults():
    assert PupilReport().mean == 0.0 and PupilRow("x", (0, 0), (0, 2)).shift == 2.0


# ---------------------------------------------------------------- config


def test_minimal_config_defaults(tmp_path):
    (tmp_path / "job.json").write_text(json.dumps({"content": "c.png"}))
    cfg = load_config(tmp_path / "job.json")
    assert cfg.loss.alpha == 100.0 and cfg.loss.beta == 1e4 and cfg.loss.theta == 1e-6
    assert cfg.solver.max_iters == 500 and cfg.adam.lr == 1e-4 and cfg.adam.batch_size == 4
    assert cfg.resolve("c.png") == tmp_path / "c.png"


@pytest.mark.parametrize("doc", [
    {"contnet": "x.png"},
    {"loss": {"alpha": 1.0, "gamma": 2.0}},
    {"loss": {"taps": {"local_content": "conv4_2", "extra": 1}}},
    {"solver": {"max_iter": 3}},
    {"contents": [{"image": "a.png", "mask": "b.png", "label": 3}]},
])
def test_unknown_keys_rejected(doc):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(doc)


@pytest.mark.parametrize("doc", [
    {"loss": {"alpha": -1.0}},
    {"solver": {"max_iters": 0}},
    {"adam": {"lr": 0}},
    {"mask_channels": 2, "loss": {"attention_channels": [2]}},
    {"mask_channels": 0},
    {"loss": "heavy"},
])
def test_invalid_values_rejected(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_round_trip_is_normalised():
    doc = {
        "style": "s.png", "content": "c.png", "seed": 3,
        "loss": {"lambda_l": 2.0, "layer_beta": {"conv1_1": 5.0},
                 "taps": {"local_style": ["conv1_1", "conv2_1"], "global_content": "conv3_2"}},
        "transfer": {"widths": [8, 16, 32]},
        "contents": [{"image": "a.png", "mask": "am.png"}],
    }
    once = dump_config(parse_config(doc))
    twice = dump_config(parse_config(json.loads(once)))
    assert once == twice
    assert json.loads(once)["loss"]["taps"]["local_style"] == ["conv1_1", "conv2_1"]


def test_content_items_fall_back_to_single_content():
    cfg = JobConfig(content="a.png", content_mask="m.png")
    assert [(i.image, i.mask) for i in cfg.content_items()] == [("a.png", "m.png")]


def test_two_level_image_uses_single_threshold():
    img = np.full((1, 3, 10, 10), 200.0)
    img[..., 3:6, 4:7] = 20.0
    est = estimate_attention_mask(img)
    assert est[0, 0].sum() == 9 and pupil_center(est) == (5.0, 4.0)
