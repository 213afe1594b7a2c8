import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from olahgp.render import (
    ERROR_COLOR,
    LEGEND_PX,
    MARKER_COLOR,
    OK_COLOR,
    PATH_COLOR,
    class_error_image,
    colormap,
    heatmap,
    overlay_path,
    ppm_bytes,
    read_ppm,
    world_to_pixel,
    write_ppm,
    write_sidecar,
)


def test_constant_field_is_uniform():
    img, lo, hi = heatmap(np.full((16, 16), 2.5))
    body = img[:16]
    assert np.all(body == body[0, 0])
    assert lo == hi == 2.5


def test_dimensions_include_legend():
    img, _, _ = heatmap(np.random.default_rng(0).random((20, 20)))
    assert img.shape == (20 + LEGEND_PX, 20, 3) and img.dtype == np.uint8


def test_colormap_endpoints_and_clipping():
    c = colormap([0.0, 1.0, -5.0, 9.0], 0.0, 1.0)
    assert np.array_equal(c[0], c[2]) and np.array_equal(c[1], c[3])
    assert not np.array_equal(c[0], c[1])


@given(st.floats(0, 1), st.floats(0, 1))
def test_colormap_is_piecewise_linear(a, b):
    # the midpoint colour lies between the end colours when both share an anchor interval
    if int(a * 4) == int(b * 4) and a < 1 and b < 1:
        ca, cb, cm = (colormap(v, 0.0, 1.0).astype(int) for v in (a, b, (a + b) / 2))
        assert np.all(np.abs(cm - (ca + cb) / 2) <= 1)


def test_north_up():
    v = np.zeros((8, 8))
    v[-1] = 1.0  # northernmost grid row
    img, _, _ = heatmap(v)
    assert np.array_equal(img[0, 0], colormap(1.0, 0.0, 1.0))
    assert np.array_equal(img[7, 0], colormap(0.0, 0.0, 1.0))


def test_legend_runs_low_to_high():
    img, lo, hi = heatmap(np.arange(64.0).reshape(8, 8))
    strip = img[8:]
    assert np.all(strip == strip[0])
    assert np.array_equal(strip[0, 0], colormap(lo, lo, hi))
    assert np.array_equal(strip[0, -1], colormap(hi, lo, hi))


def test_class_error_all_correct():
    c = np.random.default_rng(1).random((12, 12)) > 0.5
    img = class_error_image(c, c)
    assert np.all(img[:12] == OK_COLOR)


def test_class_error_marks_mismatch():
    a = np.zeros((4, 4), dtype=bool)
    b = a.copy()
    b[0, 3] = True  # south-east corner
    img = class_error_image(a, b)
    assert np.array_equal(img[3, 3], ERROR_COLOR)
    assert (img[:4] == ERROR_COLOR).all(axis=-1).sum() == 1


def test_world_to_pixel_corners():
    px = world_to_pixel([(-50, -50), (50, 50), (0, 0)], 100.0, 11)
    assert px.tolist() == [[10, 0], [0, 10], [5, 5]]


def test_overlay_path():
    img, _, _ = heatmap(np.zeros((11, 11)))
    out = overlay_path(img, [(-50, 0), (50, 0)], 100.0, 11)
    assert np.array_equal(out[5, 5], PATH_COLOR)  # a line pixel between markers
    assert np.array_equal(out[5, 0], MARKER_COLOR) and np.array_equal(out[5, 10], MARKER_COLOR)
    assert np.array_equal(out[0, 5], img[0, 5])
    assert np.array_equal(out[11:], img[11:])  # legend untouched


def test_ppm_round_trip(tmp_path):
    img, _, _ = heatmap(np.random.default_rng(2).random((9, 9)))
    write_ppm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)
    assert ppm_bytes(img).startswith(b"P6\n9 25\n255\n")


def test_read_ppm_rejects_other_formats(tmp_path):
    (tmp_path / "b.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        read_ppm(tmp_path / "b.ppm")


def test_sidecar(tmp_path):
    side = write_sidecar(tmp_path / "x.ppm", "p", 0.0, 0.5)
    assert side.name == "x.ppm.txt"
    lines = side.read_text().splitlines()
    assert lines[:3] == ["style p", "vmin 0.0", "vmax 0.5"]
