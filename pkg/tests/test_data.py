import json

import numpy as np
import pytest

from weifed import nn
from weifed.data import (
    CsvSchema,
    Dataset,
    build_auxiliary,
    dirichlet_partition,
    load_csv,
    split,
    synthesize,
)


@pytest.fixture
def flows_csv(tmp_path):
    path = tmp_path / "flows.csv"
    path.write_text(
        "Flow ID,Timestamp,Protocol,Bytes,Duration,Label\n"
        "a,t0,tcp,2,10,Tor\n"
        "b,t1,udp,5,20,VPN\n"
        "c,t2,icmp,4,30,Tor\n"
        "d,t3,tcp,,40,VPN\n"
    )
    return path


SCHEMA = CsvSchema(label="Label", drop=("Flow ID", "Timestamp"), categorical=("Protocol",))


def test_load_csv_drops_missing_rows(tmp_path):
    path = tmp_path / "three.csv"
    path.write_text("x,y,label\n1,2,a\n3,,b\n5,6,a\n")
    ds = load_csv(path, CsvSchema(label="label"))
    assert len(ds) == 2


def test_load_csv_min_max_endpoints(tmp_path):
    path = tmp_path / "mm.csv"
    path.write_text("v,label\n2,a\n4,b\n")
    ds = load_csv(path, CsvSchema(label="label"))
    assert sorted(ds.features[:, 0].tolist()) == [0.0, 1.0]


def test_load_csv_one_hot_expands_categorical(flows_csv):
    ds = load_csv(flows_csv, SCHEMA)
    # Bytes, Duration + three protocol indicators
    assert ds.dim == 2 + 3
    assert "Protocol" not in ds.feature_names
    assert {n for n in ds.feature_names if n.startswith("Protocol_")} == {
        "Protocol_icmp", "Protocol_tcp", "Protocol_udp"
    }
    assert len(ds) == 3
    assert ds.features.min() >= 0 and ds.features.max() <= 1
    assert ds.class_names == ("Tor", "VPN")


def test_load_csv_removes_duplicates(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("v,label\n1,a\n1,a\n2,b\n")
    assert len(load_csv(path, CsvSchema(label="label"))) == 2


def test_load_csv_unknown_label_reports_row(flows_csv):
    schema = CsvSchema(label="Label", drop=("Flow ID", "Timestamp"),
                       categorical=("Protocol",), classes=("Tor",))
    with pytest.raises(ValueError, match="row 1"):
        load_csv(flows_csv, schema)


def test_load_csv_empty_result_rejected(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("v,label\n,a\n")
    with pytest.raises(ValueError, match="no rows"):
        load_csv(path, CsvSchema(label="label"))


def test_schema_from_toml(tmp_path):
    p = tmp_path / "schema.toml"
    p.write_text('label = "Label"\ndrop = ["Flow ID"]\ncategorical = ["Protocol"]\n')
    s = CsvSchema.from_file(p)
    assert s.label == "Label" and s.drop == ("Flow ID",) and s.classes is None
    p.write_text('label = "Label"\ntypo = 1\n')
    with pytest.raises(ValueError, match="typo"):
        CsvSchema.from_file(p)


def test_synthesize_counts_and_determinism():
    a = synthesize(2, 5, [500, 10], 3.0, seed=4)
    b = synthesize(2, 5, [500, 10], 3.0, seed=4)
    assert a.class_counts().tolist() == [500, 10]
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert a.features.min() >= 0 and a.features.max() <= 1


def test_synthesize_rejects_bad_separation():
    with pytest.raises(ValueError):
        synthesize(2, 3, [5, 5], 0.0)


def test_synthesize_well_separated_is_linearly_learnable():
    ds = synthesize(2, 10, [100, 100], separation=8.0, seed=1)
    train_idx, test_idx, _ = split(ds, 0.2, seed=0)
    arch = nn.MlpArchitecture(10, (), 2)  # linear probe
    tr = ds.subset(train_idx)
    p = nn.sgd_epochs(arch, nn.init_params(arch, 0), tr.features, tr.labels, 0.5, 50, 16, 0)
    te = ds.subset(test_idx)
    assert np.mean(nn.predict(arch, p, te.features) == te.labels) > 0.95


def test_split_sizes_disjoint_and_stratified():
    ds = synthesize(3, 4, [50, 30, 20], seed=0)
    train, test, warnings = split(ds, 0.2, seed=0)
    assert len(train) == 80 and len(test) == 20
    assert not set(train) & set(test)
    assert sorted([*train, *test]) == list(range(100))
    for c, n in enumerate([50, 30, 20]):
        assert abs(np.sum(ds.labels[test] == c) - 0.2 * n) <= 1
    assert warnings == []


def test_split_singleton_class_goes_to_train():
    ds = Dataset(np.zeros((11, 1)), [0] * 10 + [1], 2)
    train, test, warnings = split(ds, 0.2, seed=0)
    assert 10 in train and len(warnings) == 1


def test_dirichlet_partition_covers_and_is_disjoint():
    labels = np.random.default_rng(0).integers(0, 4, 2000)
    plan = dirichlet_partition(labels, 4, 20, 0.4, seed=3)
    flat = np.concatenate(plan.assignments)
    assert sorted(flat.tolist()) == list(range(2000))
    assert all(len(a) >= 1 for a in plan.assignments)
    again = dirichlet_partition(labels, 4, 20, 0.4, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(plan.assignments, again.assignments))


def test_dirichlet_large_eta_matches_global_proportions():
    labels = np.repeat([0, 1, 2], [20000, 12000, 8000])
    plan = dirichlet_partition(labels, 3, 10, 1e6, seed=0)
    global_share = np.bincount(labels) / labels.size
    for a in plan.assignments:
        share = np.bincount(labels[a], minlength=3) / len(a)
        assert np.all(np.abs(share - global_share) < 0.02)


def _single_class_share(eta, trials=200):
    labels = np.repeat([0, 1], 200)
    hits = 0
    for t in range(trials):
        plan = dirichlet_partition(labels, 2, 2, eta, seed=t)
        hits += sum(
            np.bincount(labels[a], minlength=2).max() / len(a) > 0.8 for a in plan.assignments
        )
    return hits / (2 * trials)


def test_dirichlet_small_eta_is_skewed():
    # share of (trial, client) pairs whose dominant class exceeds 80% of the shard
    assert _single_class_share(0.05) > 0.5
    assert _single_class_share(100.0) < 0.05


def test_dirichlet_repairs_empty_clients():
    labels = np.zeros(30, dtype=int)
    plan = dirichlet_partition(labels, 1, 10, 0.01, seed=0)
    assert all(len(a) >= 1 for a in plan.assignments)
    assert sum(plan.sizes()) == 30


def test_dirichlet_rejects_too_few_samples_and_bad_eta():
    with pytest.raises(ValueError):
        dirichlet_partition(np.zeros(3, int), 1, 5, 0.4)
    with pytest.raises(ValueError):
        dirichlet_partition(np.zeros(30, int), 1, 5, 0.0)


def test_partition_json_roundtrip():
    plan = dirichlet_partition(np.arange(40) % 2, 2, 4, 0.5, seed=1)
    obj = json.loads(plan.to_json())
    assert obj["assignments"]["0"] == sorted(plan.assignments[0].tolist())


def _ones_classifier(dim, n_classes, label, margin=10.0):
    arch = nn.MlpArchitecture(dim, (), n_classes)
    p = np.zeros(arch.n_params)
    p[-n_classes + label] = margin
    return arch, p


def test_auxiliary_rejected_when_reference_always_wrong():
    ds = Dataset(np.full((20, 2), 0.5), np.zeros(20, int), 2)
    arch, p = _ones_classifier(2, 2, label=1)
    with pytest.raises(ValueError, match="empty"):
        build_auxiliary(arch, p, ds, 0.9, 1.0, seed=0)


def test_auxiliary_volume_fraction():
    ds = Dataset(np.full((1000, 2), 0.5), np.zeros(1000, int), 2)
    arch, p = _ones_classifier(2, 2, label=0)
    assert len(build_auxiliary(arch, p, ds, 0.9, 1.0, seed=0)) == 1000
    aux = build_auxiliary(arch, p, ds, 0.9, 0.1, seed=0)
    assert len(aux) == 100
    assert np.array_equal(aux.data.labels, np.zeros(100))


def test_auxiliary_purity_and_missing_class_warning():
    ds = synthesize(3, 4, [200, 200, 200], separation=6.0, seed=2)
    arch = nn.MlpArchitecture(4, (8,), 3)
    ref = nn.sgd_epochs(arch, nn.init_params(arch, 0), ds.features, ds.labels, 0.2, 30, 16, 0)
    aux = build_auxiliary(arch, ref, ds, 0.9, 0.5, seed=1)
    probs = nn.forward(arch, ref, aux.data.features)
    assert np.all(probs.argmax(axis=1) == aux.data.labels)
    assert np.all(probs.max(axis=1) > 0.9)
    a2 = build_auxiliary(arch, ref, ds, 0.9, 0.5, seed=1)
    assert np.array_equal(aux.source_indices, a2.source_indices)

    wrong = Dataset(np.full((5, 4), 0.5), np.zeros(5, int), 3)
    arch1, p1 = _ones_classifier(4, 3, label=0)
    mixed = Dataset(
        np.concatenate([wrong.features, wrong.features]), [0] * 5 + [1] * 5, 3
    )
    aux = build_auxiliary(arch1, p1, mixed, 0.9, 1.0)
    assert len(aux) == 5 and any("class 1" in w for w in aux.warnings)
