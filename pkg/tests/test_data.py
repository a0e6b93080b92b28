import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trajsens import ConfigError, builtin_system, generate_corpus, make_records, split
from trajsens.data import (
    dataset_to_csv,
    enumeration_total,
    fit_normalization,
    load_dataset,
    save_dataset,
)
from trajsens.sim import Trajectory


def _mini_corpus(n_traj, samples, dim=2, seed=0, system="mini", h=0.1):
    """Synthetic corpus with distinct random states (no dynamics needed)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_traj):
        states = rng.normal(size=(samples, dim))
        out.append(Trajectory(initial=states[0], step=h, states=states, system=system))
    return out


def brute_force_records(corpus, kind, cross_offset=True):
    """Independent enumeration oracle: loop every (pair, offsets, duration)."""
    h = corpus[0].step
    rows = []
    for a, ta in enumerate(corpus):
        for j in range(ta.steps + 1):
            for b, tb in enumerate(corpus):
                if not cross_offset and a == b:
                    continue
                offsets = range(tb.steps + 1) if cross_offset else [j]
                for j2 in offsets:
                    p, q = ta.states[j], tb.states[j2]
                    if np.array_equal(p, q):
                        continue
                    for i in range(1, min(ta.steps - j, tb.steps - j2) + 1):
                        if kind == "forward":
                            rows.append((p, q - p, i * h, tb.states[j2 + i] - ta.states[j + i]))
                        else:
                            x0 = ta.states[j + i]
                            rows.append((x0, tb.states[j2 + i] - x0, i * h, q - p))
    return rows


def _as_set(x0, v, t, y):
    return {
        (tuple(a.tolist()), tuple(b.tolist()), float(c), tuple(d.tolist()))
        for a, b, c, d in zip(x0, v, t, y)
    }


# -- worked example from first principles ------------------------------------


def test_two_trajectories_three_samples_same_offset_forward():
    # ordered pairs x durations: j=0 gives i in {1,2}, j=1 gives i=1 -> 6
    corpus = _mini_corpus(2, 3)
    ds = make_records(corpus, "forward", cross_offset=False)
    assert len(ds) == 6


@settings(max_examples=20, deadline=None)
@given(
    st.integers(2, 4),
    st.integers(2, 10),
    st.booleans(),
    st.sampled_from(["forward", "inverse"]),
    st.integers(0, 10_000),
)
def test_enumeration_matches_brute_force(n_traj, samples, cross_offset, kind, seed):
    corpus = _mini_corpus(n_traj, samples, seed=seed)
    ds = make_records(corpus, kind, cross_offset=cross_offset)
    oracle = brute_force_records(corpus, kind, cross_offset)
    assert len(ds) == len(oracle)
    got = _as_set(ds.x0, ds.v, ds.t, ds.y)
    want = _as_set(*map(np.array, zip(*oracle))) if oracle else set()
    assert got == want


def test_enumeration_total_formula():
    corpus = _mini_corpus(3, 7)
    for cross in (True, False):
        total = enumeration_total(3, 6, cross)
        assert total == len(brute_force_records(corpus, "forward", cross))


def test_records_identity_exact_forward_and_inverse():
    # every record re-verifies its defining identity bitwise against the corpus
    spec = builtin_system("vanderpol")
    corpus = generate_corpus(spec, spec.metadata["init_box"], 3, 40, 0.01, seed=1)
    states = np.stack([tr.states for tr in corpus])
    for kind in ("forward", "inverse"):
        ds = make_records(corpus, kind, budget=500, seed=2)
        assert 0 < len(ds) <= 500
        for row in range(len(ds)):
            a, j, b, j2, i = ds.provenance[row]
            p, q = states[a, j], states[b, j2]
            if kind == "forward":
                assert np.array_equal(ds.x0[row], p)
                assert np.array_equal(ds.v[row], q - p)
                assert np.array_equal(ds.y[row], states[b, j2 + i] - states[a, j + i])
            else:
                assert np.array_equal(ds.x0[row], states[a, j + i])
                assert np.array_equal(ds.v[row], states[b, j2 + i] - states[a, j + i])
                assert np.array_equal(ds.y[row], q - p)
            assert ds.t[row] == i * 0.01


def test_records_identity_on_hybrid_system():
    # guard-switched dynamics feed the same exact-identity record law
    spec = builtin_system("hybrid-oscillator")
    corpus = generate_corpus(spec, spec.metadata["init_box"], 3, 30, 0.01, seed=6)
    states = np.stack([tr.states for tr in corpus])
    ds = make_records(corpus, "inverse", budget=300, seed=7)
    assert len(ds) == 300
    for row in range(len(ds)):
        a, j, b, j2, i = ds.provenance[row]
        assert np.array_equal(ds.x0[row], states[a, j + i])
        assert np.array_equal(ds.y[row], states[b, j2] - states[a, j])


def test_zero_vector_pairs_excluded():
    # duplicated trajectory: cross-trajectory same-offset pairs coincide
    base = _mini_corpus(1, 5)[0]
    twin = Trajectory(initial=base.initial, step=base.step, states=base.states.copy(),
                      system=base.system)
    ds = make_records([base, twin], "forward")
    assert len(ds) > 0
    assert np.all(np.linalg.norm(ds.v, axis=1) > 0)


def test_inverse_identity_by_construction():
    corpus = _mini_corpus(2, 4)
    ds = make_records(corpus, "inverse")
    states = np.stack([tr.states for tr in corpus])
    for row in range(len(ds)):
        a, j, b, j2, i = ds.provenance[row]
        # feeding x0 = xi(x1, t) and v through the inverse relation returns x2 - x1
        assert np.array_equal(ds.y[row], states[b, j2] - states[a, j])


def test_budget_sampling_is_complete_subset():
    corpus = _mini_corpus(3, 8, seed=4)
    full = make_records(corpus, "forward")
    budget = 50
    assert len(full) > budget
    sample = make_records(corpus, "forward", budget=budget, seed=9)
    assert len(sample) == budget
    full_set = _as_set(full.x0, full.v, full.t, full.y)
    sample_set = _as_set(sample.x0, sample.v, sample.t, sample.y)
    assert sample_set <= full_set
    again = make_records(corpus, "forward", budget=budget, seed=9)
    assert np.array_equal(again.provenance, sample.provenance)
    other = make_records(corpus, "forward", budget=budget, seed=10)
    assert not np.array_equal(other.provenance, sample.provenance)


def test_make_records_rejects_bad_inputs():
    with pytest.raises(ConfigError):
        make_records([], "forward")
    corpus = _mini_corpus(2, 3)
    with pytest.raises(ConfigError):
        make_records(corpus, "sideways")
    with pytest.raises(ConfigError):
        make_records(corpus, "forward", budget=0)


# -- corpus generation --------------------------------------------------------


def test_generate_corpus_counts_and_shapes():
    spec = builtin_system("vanderpol")
    corpus = generate_corpus(spec, spec.metadata["init_box"], 30, 500, 0.01, seed=3)
    assert len(corpus) == 30
    assert all(tr.states.shape == (501, 2) for tr in corpus)


def test_generate_corpus_needs_two():
    spec = builtin_system("vanderpol")
    with pytest.raises(ConfigError):
        generate_corpus(spec, spec.metadata["init_box"], 1, 10, 0.01)


def test_generate_corpus_deterministic():
    spec = builtin_system("vanderpol")
    a = generate_corpus(spec, spec.metadata["init_box"], 4, 30, 0.01, seed=5)
    b = generate_corpus(spec, spec.metadata["init_box"], 4, 30, 0.01, seed=5)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.states, tb.states)


def test_generate_corpus_explicit_states():
    spec = builtin_system("vanderpol")
    starts = [[1.3, 2.3], [1.4, 2.31]]
    corpus = generate_corpus(spec, None, 0, 10, 0.01, initial_states=starts)
    assert np.array_equal(corpus[0].states[0], starts[0])


def test_generate_corpus_box_outside_domain():
    spec = builtin_system("vanderpol")
    with pytest.raises(ConfigError):
        generate_corpus(spec, [[-10.0, 10.0], [0.0, 1.0]], 3, 10, 0.01)


# -- split and normalization ---------------------------------------------------


def _dataset(n_records=1000, seed=0):
    corpus = _mini_corpus(4, 12, seed=seed)
    return make_records(corpus, "forward", budget=n_records, seed=seed)


def test_split_ninety_ten():
    ds = _dataset(1000)
    train, test = split(ds, 0.1, seed=1)
    assert len(train) == 900 and len(test) == 100


def test_split_disjoint_exhaustive_and_seeded():
    ds = _dataset(200)
    train, test = split(ds, 0.25, seed=2)
    whole = _as_set(ds.x0, ds.v, ds.t, ds.y)
    got = _as_set(train.x0, train.v, train.t, train.y) | _as_set(test.x0, test.v, test.t, test.y)
    assert got == whole
    train2, test2 = split(ds, 0.25, seed=2)
    assert np.array_equal(train.x0, train2.x0) and np.array_equal(test.x0, test2.x0)


def test_split_rejects_bad_fraction_and_small_sets():
    ds = _dataset(100)
    with pytest.raises(ConfigError):
        split(ds, 1.0)
    with pytest.raises(ConfigError):
        split(ds, 0.0)
    tiny = _dataset(9)
    with pytest.raises(ConfigError):
        split(tiny, 0.5)


def test_normalization_unit_interval_and_train_only():
    ds = _dataset(500)
    train, test = split(ds, 0.2, seed=3)
    xn = train.normalized_inputs()
    yn = train.normalized_targets()
    assert np.all(xn >= 0.0) and np.all(xn <= 1.0)
    assert np.all(yn >= 0.0) and np.all(yn <= 1.0)
    assert test.normalization == train.normalization
    # round trip through de-normalization
    np.testing.assert_allclose(train.denormalize_outputs(yn), train.y, atol=1e-12)


def test_fit_normalization_constant_feature():
    inputs = np.ones((5, 3))
    outputs = np.zeros((5, 2))
    norm = fit_normalization(inputs, outputs)
    assert norm["input_span"] == [1.0, 1.0, 1.0]


# -- serialization --------------------------------------------------------------


def test_dataset_save_load_round_trip(tmp_path):
    ds = _dataset(120)
    train, test = split(ds, 0.2, seed=1)
    path = tmp_path / "ds.npz"
    save_dataset(train, path)
    back = load_dataset(path)
    assert np.array_equal(back.x0, train.x0)
    assert np.array_equal(back.y, train.y)
    assert back.normalization == train.normalization
    assert back.kind == train.kind and back.system == train.system and back.h == train.h


def test_dataset_csv(tmp_path):
    ds = _dataset(30)
    path = tmp_path / "ds.csv"
    dataset_to_csv(ds, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x0_1,x0_2,v_1,v_2,t,y_1,y_2,kind"
    assert len(lines) == len(ds) + 1
