import numpy as np
import pytest

from spatialspn.data import (
    Dataset,
    Detection,
    ImageRecord,
    PairRule,
    PartRule,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_synthetic_spec,
    mirror_pair_spec,
    preset_spec,
    save_dataset,
)
from spatialspn.errors import DataFormatError, SyntheticSpecError
from spatialspn.spatial import Relation, compute_relations


def small_dataset():
    return Dataset(
        vocabulary_size=3,
        classes=["a", "b"],
        records=[
            ImageRecord("x0", "a", 100, 80, [Detection(0, 1.0, 2.0), Detection(2, 50.0, 40.0)]),
            ImageRecord("x1", "b", 100, 80, [Detection(1, 99.0, 79.0)]),
        ],
    )


def test_round_trip(tmp_path):
    path = tmp_path / "data.txt"
    ds = small_dataset()
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.vocabulary_size == ds.vocabulary_size
    assert back.classes == ds.classes
    assert back.records == ds.records


def test_out_of_bounds_detection_cites_line(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text(
        "spn-data v1 t=2 classes=1\nclass a\nimg i0 a 100 80\ndet 0 100 10\n"
    )
    with pytest.raises(DataFormatError) as err:
        load_dataset(path)
    assert err.value.line_no == 4


def test_unknown_class_rejected(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text("spn-data v1 t=2 classes=1\nclass a\nimg i0 zz 100 80\n")
    with pytest.raises(DataFormatError, match="zz"):
        load_dataset(path)


def test_duplicate_part_detections_deduped_with_warning(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text(
        "spn-data v1 t=2 classes=1\nclass a\nimg i0 a 100 80\n"
        "det 0 10 10\ndet 0 20 20\ndet 1 30 30\n"
    )
    ds = load_dataset(path)
    assert ds.dedup_warnings == 1
    assert [d.part for d in ds.records[0].detections] == [0, 1]
    assert ds.records[0].detections[0].x == 10  # first wins


def test_dedup_is_idempotent(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text(
        "spn-data v1 t=2 classes=1\nclass a\nimg i0 a 100 80\n"
        "det 0 10 10\ndet 0 20 20\n"
    )
    once = load_dataset(path)
    path2 = tmp_path / "data2.txt"
    save_dataset(once, path2)
    twice = load_dataset(path2)
    assert twice.records == once.records
    assert twice.dedup_warnings == 0


# -------------------------------------------------------------- synthetic


def test_noiseless_generation_satisfies_planted_relations():
    spec = SyntheticSpec(
        classes=["c"],
        vocabulary_size=2,
        bg_rate=0.0,
        drop_rate=0.0,
        pair_rules=[PairRule("c", 0, 1, Relation.ABOVE, (0.1, 0.1, 0.9, 0.9))],
        images_per_class=50,
    )
    ds = generate_synthetic(spec, np.random.default_rng(0))
    for record in ds.records:
        loc0, loc1 = record.location_of(0), record.location_of(1)
        _, _, above, _ = compute_relations(loc0, loc1)
        assert above


def test_generation_is_deterministic(tmp_path):
    spec = mirror_pair_spec(images_per_class=20)
    a = generate_synthetic(spec, np.random.default_rng(7))
    b = generate_synthetic(spec, np.random.default_rng(7))
    pa, pb = tmp_path / "a.txt", tmp_path / "b.txt"
    save_dataset(a, pa)
    save_dataset(b, pb)
    assert pa.read_bytes() == pb.read_bytes()


def test_mirror_preset_marginals_match_but_relations_differ():
    spec = mirror_pair_spec(images_per_class=500)
    ds = generate_synthetic(spec, np.random.default_rng(3))
    rates = {}
    left_rate = {}
    for klass in spec.classes:
        records = ds.by_class(klass)
        present = np.zeros(spec.vocabulary_size)
        lefts = 0
        pairs = 0
        for record in records:
            for part in record.parts_present():
                present[part] += 1
            l0, l1 = record.location_of(0), record.location_of(1)
            if l0 and l1:
                pairs += 1
                if compute_relations(l0, l1)[0]:
                    lefts += 1
        rates[klass] = present / len(records)
        left_rate[klass] = lefts / max(pairs, 1)
    # identical activation marginals within sampling error
    assert np.max(np.abs(rates["west"] - rates["east"])) < 0.06
    # disjoint relation statistics
    assert left_rate["west"] > 0.99
    assert left_rate["east"] < 0.01


def test_bad_rates_rejected():
    spec = SyntheticSpec(classes=["c"], bg_rate=1.5)
    with pytest.raises(SyntheticSpecError):
        spec.validate()


def test_tiny_pair_region_rejected():
    spec = SyntheticSpec(
        classes=["c"],
        pair_rules=[PairRule("c", 0, 1, Relation.LEFT_OF, (0.1, 0.1, 0.14, 0.9))],
    )
    with pytest.raises(SyntheticSpecError, match="too small"):
        spec.validate()


def test_preset_lookup():
    spec = preset_spec("mirror", images_per_class=10)
    assert spec.images_per_class == 10
    with pytest.raises(SyntheticSpecError):
        preset_spec("nope")


def test_spec_file_round_trip(tmp_path):
    path = tmp_path / "spec.txt"
    path.write_text(
        "synthspec v1\n"
        "class a\nclass b\n"
        "vocab 4\nwidth 120\nheight 90\n"
        "bg_rate 0.05\ndrop_rate 0.1\njitter 3.0\nimages_per_class 12\n"
        "rule a part 2 0.1 0.1 0.5 0.5\n"
        "rule a pair 0 1 left 0.1 0.1 0.9 0.9\n"
        "rule b pair 0 1 right 0.1 0.1 0.9 0.9\n"
    )
    spec = load_synthetic_spec(path)
    assert spec.classes == ["a", "b"]
    assert spec.vocabulary_size == 4
    assert spec.width == 120 and spec.height == 90
    assert len(spec.part_rules) == 1 and len(spec.pair_rules) == 2
    assert spec.pair_rules[0].relation == Relation.LEFT_OF
    ds = generate_synthetic(spec, np.random.default_rng(0))
    assert len(ds.records) == 24


def test_malformed_line_cites_line_number(tmp_path):
    path = tmp_path / "data.txt"
    path.write_text("spn-data v1 t=2 classes=1\nclass a\nwhatever 1 2 3\n")
    with pytest.raises(DataFormatError) as err:
        load_dataset(path)
    assert err.value.line_no == 3
