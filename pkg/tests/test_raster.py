import numpy as np
import pytest
from pydantic import ValidationError

from core.dataset import DatasetSpec, polygon_spec, sample_parameters
from core.errors import DegenerateGeometryError, FormatError, OutOfFrameError
from core.geometry import Polygon, PolygonSpec, generate_polygon, rectangle, section_properties
from core.raster import (
    CrossSectionImage,
    RasterConfig,
    decode_pgm,
    encode_pgm,
    rasterize,
    read_pgm,
    stack_images,
    write_pgm,
)
from core.seeding import derive_seed


def raster_area(poly, img_size):
    cfg = RasterConfig(img_size=img_size)
    return float(rasterize(poly, cfg).pixels.sum()) * cfg.pixel_area


def test_square_rasterizes_to_exact_area():
    img = rasterize(rectangle(50.0, 50.0), RasterConfig())
    assert img.pixels.shape == (64, 64)
    assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0
    assert float(img.pixels.sum()) * RasterConfig().pixel_area == pytest.approx(2500.0, rel=1e-12)


def test_row_zero_is_top_of_window():
    top_strip = Polygon([(-100, 100), (100, 100), (100, 120), (-100, 120)])
    pixels = rasterize(top_strip, RasterConfig()).pixels
    assert pixels[:4].sum() > 0
    assert pixels[32:].sum() == 0


def generator_polygons(count, seed=0):
    """Polygons drawn the way the dataset generator draws them"""
    spec = DatasetSpec(size=count)
    polygons = []
    for i in range(count):
        sample_seed = derive_seed(seed, i)
        n_vertices, avg_radius = sample_parameters(spec, sample_seed)
        try:
            polygons.append(generate_polygon(polygon_spec(spec, n_vertices, avg_radius, sample_seed)))
        except DegenerateGeometryError:
            continue
    return polygons


def relative_area_errors(polygons, img_size):
    return np.array([
        abs(raster_area(poly, img_size) - section_properties(poly).area) / section_properties(poly).area
        for poly in polygons
    ])


def test_coverage_matches_area_for_generated_polygons():
    polygons = generator_polygons(1000)
    assert len(polygons) >= 990
    assert relative_area_errors(polygons, 64).max() <= 0.01


def test_mean_area_error_shrinks_with_resolution():
    polygons = generator_polygons(200, seed=1)
    means = [relative_area_errors(polygons, size).mean() for size in (32, 64, 128)]
    assert means[0] >= means[1] >= means[2]


def test_generated_polygon_area_is_close():
    poly = generate_polygon(PolygonSpec(n_vertices=15, avg_radius=45.0, irregularity=0.4, spikiness=0.15, seed=8))
    true_area = section_properties(poly).area
    assert raster_area(poly, 128) == pytest.approx(true_area, rel=0.02)


def test_out_of_frame_polygon():
    with pytest.raises(OutOfFrameError):
        rasterize(rectangle(260.0, 10.0), RasterConfig())


@pytest.mark.parametrize("kwargs", [dict(img_size=48), dict(world_half_width=100.0), dict(supersample=0)])
def test_invalid_raster_config(kwargs):
    with pytest.raises(ValidationError):
        RasterConfig(**kwargs)


def test_pgm_encoding_layout():
    img = CrossSectionImage(np.array([[0.0, 1.0, 0.5]]))
    data = encode_pgm(img)
    assert data.startswith(b"P5\n3 1\n255\n")
    assert data[-3:] == bytes([0, 255, 128])


def test_pgm_file_quantization(tmp_path):
    img = rasterize(rectangle(50.3, 41.7), RasterConfig(img_size=32))
    back = read_pgm(write_pgm(img, tmp_path / "beam_0.pgm"))
    assert back.pixels.shape == img.pixels.shape
    assert np.max(np.abs(back.pixels - img.pixels)) <= 0.5 / 255 + 1e-12


@pytest.mark.parametrize("data", [
    b"P2\n2 2\n255\n\x00\x00\x00\x00",
    b"P5\n2 2\n65535\n\x00\x00\x00\x00",
    b"P5\n2 2\n255\n\x00\x00\x00",
])
def test_malformed_pgm(data):
    with pytest.raises(FormatError):
        decode_pgm(data)


def test_read_pgm_names_the_file(tmp_path):
    path = tmp_path / "broken.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(FormatError, match="broken.pgm"):
        read_pgm(path)


def test_image_rejects_out_of_range_pixels():
    with pytest.raises(FormatError):
        CrossSectionImage(np.array([[1.5]]))


def test_stack_images():
    images = [rasterize(rectangle(40.0, 30.0), RasterConfig(img_size=32))] * 3
    batch = stack_images(images)
    assert batch.shape == (3, 1, 32, 32)
    assert batch.dtype == np.float32
    with pytest.raises(FormatError):
        stack_images([])
