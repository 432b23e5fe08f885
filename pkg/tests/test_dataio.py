import json

import numpy as np
import pytest

from pairloc import Selection
from pairloc.dataio import SchemaError, load_dataset, load_selections, \
    save_dataset, save_selections
from pairloc.synth import SynthConfig, generate


def test_jsonl_round_trip_is_exact(tmp_path):
    _, target, _ = generate(SynthConfig(num_classes=2, bags_per_class=3,
                                        proposals_per_bag=5, feature_dim=6,
                                        seed=3))
    path = tmp_path / "target.jsonl"
    save_dataset(target, path)
    loaded = load_dataset(path)
    assert loaded.classes == target.classes
    assert loaded.d == target.d
    for a, b in zip(target.bags, loaded.bags):
        assert a.id == b.id and a.labels == b.labels
        for pa, pb in zip(a.proposals, b.proposals):
            assert np.array_equal(pa.features, pb.features)  # bitwise
            assert pa.box == pb.box
            assert pa.gt_class == pb.gt_class
            assert pa.is_full_image == pb.is_full_image


def test_round_trip_twice_is_identical_bytes(tmp_path):
    _, target, _ = generate(SynthConfig(num_classes=2, bags_per_class=2, seed=9))
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_dataset(target, p1)
    save_dataset(load_dataset(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_schema_errors_carry_line_numbers(tmp_path):
    path = tmp_path / "bad.jsonl"
    ok = json.dumps({"id": "b0", "labels": ["c"],
                     "proposals": [{"features": [1.0]}]})
    path.write_text(ok + "\n" + "{not json\n")
    with pytest.raises(SchemaError) as exc:
        load_dataset(path)
    assert exc.value.line == 2

    path.write_text(json.dumps({"labels": []}) + "\n")
    with pytest.raises(SchemaError, match="'id'"):
        load_dataset(path)

    path.write_text(json.dumps({"id": "b", "proposals": []}) + "\n")
    with pytest.raises(SchemaError, match="proposals"):
        load_dataset(path)

    path.write_text(json.dumps({"id": "b", "proposals": [{"box": [0, 0, 1, 1]}]}) + "\n")
    with pytest.raises(SchemaError, match="features"):
        load_dataset(path)


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "gaps.jsonl"
    row = json.dumps({"id": "b0", "labels": ["c"],
                      "proposals": [{"features": [1.0, 2.0]}]})
    path.write_text("\n" + row + "\n\n")
    ds = load_dataset(path)
    assert len(ds.bags) == 1


def test_selections_round_trip(tmp_path):
    sels = {"a": Selection("a", {"b1": 3, "b0": 1}), "b": Selection("b", {})}
    path = tmp_path / "sel.json"
    save_selections(sels, path)
    loaded = load_selections(path)
    assert loaded["a"].chosen == {"b0": 1, "b1": 3}
    assert loaded["b"].chosen == {}
