import hashlib
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quasimodo.datagen import (LabeledTrajectory, ObservableSpec, apply_observable,
                               generate_training_data, load_dataset, partition_by_control,
                               save_dataset)
from quasimodo.dynamics import builtin_system
from quasimodo.errors import EmptyBucket, InvalidParam, SchemaMismatch, SequenceTooShort
from quasimodo.quantization import BoxControlSet, QuantizedControlSet


@pytest.fixture
def lorenz_V():
    return QuantizedControlSet([[-50.0], [50.0]], BoxControlSet([-50], [50]))


def small_traj(labels, q=2):
    n = len(labels) + 1
    z = np.arange(n * q, dtype=float).reshape(n, q)
    return LabeledTrajectory(np.arange(n) * 0.1, z, labels, np.asarray(labels, float)[:, None])


def test_lorenz_dataset_size(lorenz_V):
    tr = generate_training_data(builtin_system("lorenz_affine"), lorenz_V, 0.05, 100.0,
                                substeps=2, seed=0)
    # 2000 transitions over 100 time units, plus the initial state
    assert len(tr.control_indices) == 2000
    assert len(tr) == 2001
    assert set(np.unique(tr.control_indices)) == {0, 1}


def test_single_step_trajectory(lorenz_V):
    tr = generate_training_data(builtin_system("lorenz_affine"), lorenz_V, 0.05, 0.05)
    assert len(tr) == 2 and len(tr.control_indices) == 1


def test_seed_determinism(lorenz_V):
    sys = builtin_system("lorenz_affine")
    a = generate_training_data(sys, lorenz_V, 0.05, 5.0, seed=3)
    b = generate_training_data(sys, lorenz_V, 0.05, 5.0, seed=3)
    assert np.array_equal(a.observables, b.observables)
    assert np.array_equal(a.control_indices, b.control_indices)


def test_step_must_divide_duration(lorenz_V):
    with pytest.raises(InvalidParam):
        generate_training_data(builtin_system("lorenz_affine"), lorenz_V, 0.03, 1.0)


def test_partition_all_one_label():
    tr = small_traj([0, 0, 0, 0])
    with pytest.warns(EmptyBucket):
        pairs = partition_by_control(tr, m=2)
    assert pairs.sizes() == {0: 4, 1: 0}


def test_partition_alternating():
    pairs = partition_by_control(small_traj([0, 1, 0, 1]), m=2)
    assert pairs.sizes() == {0: 2, 1: 2}
    np.testing.assert_array_equal(pairs.Z[1][:, 0], [2.0, 3.0])
    np.testing.assert_array_equal(pairs.Zn[1][:, 0], [4.0, 5.0])


@given(st.lists(st.integers(0, 3), min_size=1, max_size=40))
def test_partition_counts_sum(labels):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyBucket)
        pairs = partition_by_control(small_traj(labels), m=4)
    assert pairs.total() == len(labels)
    for j in range(4):
        assert pairs.Z[j].shape == pairs.Zn[j].shape


def test_observables():
    states = np.arange(12, dtype=float).reshape(4, 3)
    assert np.array_equal(apply_observable(states, ObservableSpec()), states)
    np.testing.assert_array_equal(apply_observable(states, ObservableSpec.coordinates([1])),
                                  states[:, [1]])
    seq = np.array([[1.0], [2.0], [3.0], [4.0]])  # a, b, c, d
    out = apply_observable(seq, ObservableSpec.delay(lags=2, lag_step=1))
    np.testing.assert_array_equal(out, [[3, 2, 1], [4, 3, 2]])
    with pytest.raises(SequenceTooShort):
        apply_observable(seq[:2], ObservableSpec.delay(lags=2))


@given(st.lists(st.integers(0, 2), min_size=1, max_size=3, unique=True))
def test_observable_composition(indices):
    states = np.random.default_rng(0).normal(size=(6, 3))
    full = apply_observable(states, ObservableSpec())
    spec = ObservableSpec.coordinates(indices)
    assert np.array_equal(apply_observable(full, spec), apply_observable(states, spec))


def test_observable_spec_round_trip():
    spec = ObservableSpec.delay(ObservableSpec.coordinates([0, 2]), lags=3, lag_step=2)
    assert ObservableSpec.from_dict(spec.to_dict()) == spec
    assert spec.dim(3) == 8 and spec.history == 6


def test_dataset_round_trip_bit_exact(tmp_path, lorenz_V):
    tr = generate_training_data(builtin_system("lorenz_affine"), lorenz_V, 0.05, 2.0, seed=1)
    path = save_dataset(tmp_path / "d.csv", tr)
    back = load_dataset(path)
    assert np.array_equal(back.observables, tr.observables)
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.control_indices, tr.control_indices)
    assert np.array_equal(back.controls_applied, tr.controls_applied)
    assert back.meta["seed"] == 1
    header = path.read_text().splitlines()[0]
    assert header == "t,z_1,z_2,z_3,j,u_1"
    # indices are written 1-based
    assert path.read_text().splitlines()[1].split(",")[4] in ("1", "2")


def test_same_seed_same_file_hash(tmp_path, lorenz_V):
    sys = builtin_system("lorenz_affine")
    digests = []
    for k in range(2):
        p = save_dataset(tmp_path / f"d{k}.csv", generate_training_data(sys, lorenz_V, 0.05, 1.0))
        digests.append(hashlib.sha256(p.read_bytes()).hexdigest())
    assert digests[0] == digests[1]


def test_empty_dataset_round_trip(tmp_path):
    tr = LabeledTrajectory(np.zeros(0), np.zeros((0, 2)), np.zeros(0, int), np.zeros((0, 1)))
    back = load_dataset(save_dataset(tmp_path / "e.csv", tr))
    assert len(back) == 0


def test_wrong_column_count_names_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,z_1,j,u_1\n0,1,1,0.5\n0.1,2,1\n")
    with pytest.raises(SchemaMismatch) as err:
        load_dataset(p)
    assert err.value.line == 3


def test_holdout_split():
    tr = small_traj(list(range(2)) * 10)
    head, tail = tr.split(0.1)
    assert len(head) + len(tail) == len(tr) + 1
    assert head.observables[-1].tolist() == tail.observables[0].tolist()
