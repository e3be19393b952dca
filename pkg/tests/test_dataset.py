import re

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from core.dataset import (
    DEFAULT_RATIOS,
    DatasetSpec,
    LabelScaler,
    Manifest,
    fit_label_scaler,
    generate_dataset,
    import_external_labels,
    preset_spec,
    split_counts,
    split_dataset,
)
from core.errors import FormatError, ParameterError
from core.mechanics import FREQUENCY_LABELS, label_vector
from core.raster import RasterConfig


def tiny_spec(**overrides):
    base = dict(size=12, label_set=FREQUENCY_LABELS, raster=RasterConfig(img_size=32), seed=5)
    return DatasetSpec(**{**base, **overrides})


def test_split_counts():
    assert split_counts(17500, DEFAULT_RATIOS) == (11200, 2800, 3500)
    assert split_counts(40, DEFAULT_RATIOS) == (26, 6, 8)
    assert sum(split_counts(5, DEFAULT_RATIOS)) == 5
    assert split_counts(1, DEFAULT_RATIOS) == (1, 0, 0)


def test_bad_ratios():
    with pytest.raises(ParameterError):
        split_counts(10, (0.5, 0.5, 0.5))


def test_small_dataset_layout(small_dataset, small_spec):
    manifest = small_dataset
    assert len(manifest) == small_spec.size
    assert (manifest.root / "manifest.csv").exists()
    assert (manifest.root / "dataset.json").exists()
    assert (manifest.root / "images" / "beam_0.pgm").exists()
    counts = manifest.table["split"].value_counts().to_dict()
    assert counts == {"train": 26, "val": 6, "test": 8}
    assert set(manifest.table["label_source"]) == {"oracle"}


def test_manifest_reload_matches(small_dataset):
    loaded = Manifest.load(small_dataset.root)
    assert loaded.ids() == small_dataset.ids()
    assert [int(s) for s in loaded.table["seed"]] == [int(s) for s in small_dataset.table["seed"]]
    assert loaded.table["split"].tolist() == small_dataset.table["split"].tolist()
    np.testing.assert_array_equal(loaded.labels(), small_dataset.labels())
    assert loaded.spec == small_dataset.spec


def test_polygons_regenerate_from_recorded_seeds(small_dataset):
    loaded = Manifest.load(small_dataset.root)
    rows = loaded.rows("test")
    labels = loaded.labels("test")
    for (_, row), expected in zip(rows.iterrows(), labels):
        poly = loaded.polygon(row)
        np.testing.assert_array_equal(label_vector(poly, loaded.spec.beam, loaded.label_names), expected)


def test_generation_is_byte_identical(tmp_path, same_tree):
    generate_dataset(tiny_spec(), tmp_path / "a")
    generate_dataset(tiny_spec(), tmp_path / "b", n_jobs=2)
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_different_seed_changes_dataset(tmp_path):
    a = generate_dataset(tiny_spec(seed=1), tmp_path / "a")
    b = generate_dataset(tiny_spec(seed=2), tmp_path / "b")
    assert not np.array_equal(a.labels(), b.labels())


def test_split_dataset_is_seeded(small_dataset):
    a = split_dataset(small_dataset, DEFAULT_RATIOS, seed=3)
    b = split_dataset(small_dataset, DEFAULT_RATIOS, seed=3)
    c = split_dataset(small_dataset, DEFAULT_RATIOS, seed=4)
    assert a.ids("test") == b.ids("test")
    assert a.ids("test") != c.ids("test")


def test_images_rerasterize_at_other_resolution(small_dataset):
    native = small_dataset.images("val")
    assert native.shape == (6, 1, 32, 32)
    doubled = small_dataset.images("val", RasterConfig(img_size=64))
    assert doubled.shape == (6, 1, 64, 64)


def test_missing_image_is_reported(tmp_path):
    manifest = generate_dataset(tiny_spec(size=4), tmp_path / "d")
    (tmp_path / "d" / manifest.table["image_path"].iloc[0]).unlink()
    with pytest.raises(FormatError):
        Manifest.load(tmp_path / "d")


def test_oracle_guard_for_twisted_beams(tmp_path):
    with pytest.raises(ParameterError, match="linear extrusion"):
        generate_dataset(tiny_spec(twist_deg=30.0), tmp_path / "twisted")


def test_pending_labels_then_import(tmp_path):
    manifest = generate_dataset(tiny_spec(size=6, twist_deg=15.0, oracle_labels=False), tmp_path / "tw")
    assert set(manifest.table["label_source"]) == {"pending"}
    with pytest.raises(FormatError, match="import external labels"):
        manifest.labels()

    ids = manifest.ids()
    external = pd.DataFrame({"id": ids, "f1_hz": [30.0 + i for i in ids], "f2_hz": [60.0 + i for i in ids],
                             "f3_hz": [200.0 + i for i in ids]})
    external.to_csv(tmp_path / "fea.csv", index=False)
    labeled = import_external_labels(Manifest.load(tmp_path / "tw"), tmp_path / "fea.csv")
    assert set(labeled.table["label_source"]) == {"external:fea.csv"}
    np.testing.assert_array_equal(labeled.labels()[:, 0], [30.0 + i for i in ids])

    labeled.save()
    assert Manifest.load(tmp_path / "tw").labels().shape == (6, 3)


def test_import_rejects_bad_rows(small_dataset, tmp_path):
    ids = small_dataset.ids()
    frame = pd.DataFrame({"id": ids, "f1_hz": 1.0, "f2_hz": 2.0, "f3_hz": 3.0})
    frame.loc[1, "f2_hz"] = np.nan
    frame.to_csv(tmp_path / "nan.csv", index=False)
    with pytest.raises(FormatError, match="row 3"):
        import_external_labels(small_dataset, tmp_path / "nan.csv")

    pd.DataFrame({"id": ids + [999], "f1_hz": 1.0}).to_csv(tmp_path / "extra.csv", index=False)
    with pytest.raises(FormatError, match="unknown sample ids"):
        import_external_labels(small_dataset, tmp_path / "extra.csv")

    pd.DataFrame({"id": ids, "mass_kg": 1.0}).to_csv(tmp_path / "cols.csv", index=False)
    with pytest.raises(FormatError):
        import_external_labels(small_dataset, tmp_path / "cols.csv")


@pytest.mark.parametrize("bad_id", ["x7", ""])
def test_import_rejects_non_integer_ids(small_dataset, tmp_path, bad_id):
    frame = pd.DataFrame({"id": [str(i) for i in small_dataset.ids()], "f1_hz": 1.0, "f2_hz": 2.0, "f3_hz": 3.0})
    frame.loc[1, "id"] = bad_id
    frame.to_csv(tmp_path / "ids.csv", index=False)
    with pytest.raises(FormatError, match="row 3"):
        import_external_labels(small_dataset, tmp_path / "ids.csv")


def test_import_lists_missing_ids(small_dataset, tmp_path):
    ids = sorted(small_dataset.ids())
    pd.DataFrame({"id": ids[3:], "f1_hz": 1.0, "f2_hz": 2.0, "f3_hz": 3.0}).to_csv(tmp_path / "short.csv", index=False)
    with pytest.raises(FormatError, match=re.escape(str(ids[:3]))):
        import_external_labels(small_dataset, tmp_path / "short.csv")


def test_label_scaler(small_dataset):
    scaler = fit_label_scaler(small_dataset)
    train = small_dataset.labels("train")
    scaled = scaler.apply(train)
    np.testing.assert_allclose(scaled.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(scaled.std(axis=0), 1.0, atol=1e-9)
    np.testing.assert_allclose(scaler.invert(scaled), train, rtol=1e-12)
    again = LabelScaler.from_dict(scaler.to_dict())
    np.testing.assert_array_equal(again.apply(train), scaled)


def test_label_scaler_sees_only_the_train_split(small_dataset):
    reference = fit_label_scaler(small_dataset)
    table = small_dataset.table.copy()
    table.loc[table["split"] != "train", list(small_dataset.label_names)] = 1e9
    corrupted = Manifest(table, small_dataset.spec, small_dataset.root, small_dataset.generation)
    for manifest in (corrupted, small_dataset.subset(small_dataset.ids("train"))):
        scaler = fit_label_scaler(manifest)
        np.testing.assert_array_equal(scaler.mean, reference.mean)
        np.testing.assert_array_equal(scaler.std, reference.std)


def test_label_scaler_rejects_constant_column():
    with pytest.raises(ParameterError, match="f2_hz"):
        LabelScaler.fit(np.array([[1.0, 5.0], [2.0, 5.0]]), ["f1_hz", "f2_hz"])


def test_presets():
    twisted = preset_spec("twisted")
    assert twisted.twist_deg == 30.0
    assert not twisted.oracle_labels
    assert preset_spec("slender").beam.tip_load == (2000.0, 0.0)
    assert preset_spec("linear", size=10).size == 10
    with pytest.raises(ParameterError):
        preset_spec("curved")


@pytest.mark.parametrize("kwargs", [
    dict(size=0),
    dict(n_vertices_range=(2, 10)),
    dict(avg_radius_range=(24.0, 70.0)),
    dict(irregularity=2.0),
    dict(label_set=("mass_kg",)),
])
def test_invalid_dataset_spec(kwargs):
    with pytest.raises(ValidationError):
        tiny_spec(**kwargs)
