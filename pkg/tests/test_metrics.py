import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conditional_mi, entropy_of_counts, mi_by_summation
from policyscope import interpret, metrics, synth
from policyscope.data import make_dataset
from policyscope.interpret import NeuronInterpreter, PolicyInterpretation
from policyscope.metrics import Discretizer, UndefinedMetricError
from policyscope.tree import CLASSIFIER_CONFIG, SURROGATE_CONFIG, TreeConfig, fit_classification, fit_regression

LN2 = math.log(2.0)
codes = arrays(np.int64, st.integers(2, 60), elements=st.integers(0, 4))


# ---------------------------------------------------------------- MI

def test_mi_identical_balanced_binary():
    a = np.array([0, 1] * 50)
    assert metrics.mutual_information(a, a) == pytest.approx(LN2, abs=1e-12)


def test_mi_interleaved_independent():
    a = np.repeat([0, 1], 50)
    b = np.tile([0, 1], 50)
    assert metrics.mutual_information(a, b) == pytest.approx(0.0, abs=1e-12)


def test_mi_three_by_two_table():
    table = [[2, 1], [1, 2], [0, 3]]
    a = np.concatenate([[i] * sum(r) for i, r in enumerate(table)])
    b = np.concatenate([[0] * r[0] + [1] * r[1] for r in table])
    n = 9.0
    pa = [3 / n, 3 / n, 3 / n]
    pb = [3 / n, 6 / n]
    hand = sum(
        (c / n) * math.log((c / n) / (pa[i] * pb[j]))
        for i, row in enumerate(table) for j, c in enumerate(row) if c
    )
    assert metrics.mutual_information(a, b) == pytest.approx(hand, abs=1e-12)
    assert metrics.mutual_information(a, b) == pytest.approx(mi_by_summation(a, b), abs=1e-12)


def test_mi_length_mismatch():
    with pytest.raises(ValueError):
        metrics.mutual_information([0, 1], [0])


@settings(max_examples=100, deadline=None)
@given(codes, st.data())
def test_mi_symmetric_and_bounded(a, data):
    b = data.draw(arrays(np.int64, a.shape, elements=st.integers(0, 3)))
    ab, ba = metrics.mutual_information(a, b), metrics.mutual_information(b, a)
    assert ab == pytest.approx(ba, abs=1e-12)
    assert 0.0 <= ab <= min(metrics.entropy(a), metrics.entropy(b)) + 1e-9
    assert ab == pytest.approx(mi_by_summation(a, b), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.bool_, st.integers(1, 80)))
def test_factor_entropy_is_binary_entropy(col):
    p = col.mean()
    expect = 0.0 if p in (0.0, 1.0) else -(p * math.log(p) + (1 - p) * math.log(1 - p))
    fs = metrics.FactorSet([(0, 0)], col[:, None])
    assert fs.entropies()[0] == pytest.approx(expect, abs=1e-12)


def test_mi_same_on_both_backends(backend, rng):
    a, b = rng.integers(0, 7, 500), rng.integers(0, 3, 500)
    assert metrics.mutual_information(a, b) == pytest.approx(mi_by_summation(a, b), abs=1e-12)


# ---------------------------------------------------------------- discretizer

def test_equal_width_bins():
    d = Discretizer(4).fit(np.array([0.0, 1.0, 2.0, 3.0, 4.0]))
    assert list(d.transform(np.array([0.0, 0.99, 1.0, 3.99, 4.0, 9.0, -1.0]))) == [0, 0, 1, 3, 3, 3, 0]


def test_constant_column_single_bin():
    assert set(Discretizer(5).fit_transform(np.full(10, 2.0))) == {0}


def test_quantile_bins_balanced(rng):
    z = rng.normal(size=1000)
    counts = np.bincount(Discretizer(4, "quantile").fit_transform(z))
    assert counts.tolist() == [250] * 4


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3, allow_nan=False)), st.integers(1, 30))
def test_bins_in_range(z, n):
    b = Discretizer(n).fit_transform(z)
    assert b.min() >= 0 and b.max() < n


# ---------------------------------------------------------------- MIG / modularity on matrices

def _mats(zs, factors):
    Z = np.column_stack(zs)
    occ = np.column_stack(factors).astype(bool)
    return metrics.mi_matrix(Z, occ), metrics.factor_mi_matrix(occ), metrics.FactorSet([], occ).entropies()


P1 = np.array([0, 0, 1, 1] * 5)
P2 = np.array([0, 1, 0, 1] * 5)


def test_mig_disentangled_is_one():
    M, F, H = _mats([P1, P2], [P1, P2])
    score, per = metrics.mig_from_matrices(M, F, H)
    assert score == pytest.approx(1.0)
    assert [p["score"] for p in per] == pytest.approx([1.0, 1.0])


def test_mig_duplicated_neuron_is_lower():
    M, F, H = _mats([P1, P1], [P1, P2])
    assert M[1, 0] == pytest.approx(M[0, 0])  # raw runner-up equals the top
    score, per = metrics.mig_from_matrices(M, F, H)
    assert [p["score"] for p in per] == pytest.approx([1.0, 0.0])
    assert score < 1.0


def test_mig_single_neuron_uses_zero_runner_up():
    z = 2 * P1 + P2
    M, F, H = _mats([z], [P1, P2, P1 ^ P2])
    score, per = metrics.mig_from_matrices(M, F, H)
    assert [p["calibrated_runner_mi"] for p in per] == [0.0, 0.0, 0.0]
    assert score == pytest.approx(np.mean(M[0] / H))


def test_mig_skips_degenerate_factors():
    M, F, H = _mats([P1, P2], [P1, P2, np.zeros_like(P1)])
    score, per = metrics.mig_from_matrices(M, F, H)
    assert len(per) == 2 and score == pytest.approx(1.0)
    M, F, H = _mats([P1], [np.ones_like(P1)])
    with pytest.raises(UndefinedMetricError):
        metrics.mig_from_matrices(M, F, H)


def test_modularity_examples():
    M, F, _ = _mats([P1, P2], [P1, P2])
    assert metrics.modularity_from_matrices(M, F)[0] == pytest.approx(1.0)
    # a duplicated factor is forgiven by the calibration
    M, F, _ = _mats([P1], [P1, P1.copy()])
    assert metrics.modularity_from_matrices(M, F)[0] == pytest.approx(1.0)
    # equal dependence on two independent factors
    M, F, _ = _mats([2 * P1 + P2], [P1, P2])
    assert metrics.modularity_from_matrices(M, F)[0] == pytest.approx(0.0, abs=1e-12)


def test_modularity_undefined():
    M, F, _ = _mats([np.zeros(20, dtype=int)], [P1, P2])
    with pytest.raises(UndefinedMetricError):
        metrics.modularity_from_matrices(M, F)
    with pytest.raises(UndefinedMetricError):
        metrics.modularity_from_matrices(np.ones((1, 1)), np.ones((1, 1)))


# ---------------------------------------------------------------- calibration bound

def _joint_sample(rng, nz, n):
    z = rng.integers(0, nz, n)
    pk = (rng.random(n) < 0.2 + 0.6 * (z / nz)).astype(int)
    pj = (rng.random(n) < np.where(pk == 1, 0.8, 0.3)).astype(int)
    return z, pk, pj


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 20), st.integers(20, 300))
def test_calibration_is_lower_bound(seed, nz, n):
    z, pk, pj = _joint_sample(np.random.default_rng(seed), nz, n)
    bound = metrics.calibrated_mi(metrics.mutual_information(z, pk), metrics.mutual_information(pk, pj))
    exact = conditional_mi(z, pk, pj)
    assert 0.0 <= bound <= metrics.mutual_information(z, pk) + 1e-15
    assert exact >= bound - 1e-9


def test_derivation_steps_hold(rng):
    # I[z;Pk|Pj] = I[z;Pk] - I[Pk;Pj] + I[Pj;Pk | z], the last term being >= 0
    for _ in range(50):
        z, pk, pj = _joint_sample(rng, int(rng.integers(2, 20)), 200)
        lhs = conditional_mi(z, pk, pj)
        rhs = metrics.mutual_information(z, pk) - metrics.mutual_information(pk, pj) + conditional_mi(pj, pk, z)
        assert lhs == pytest.approx(rhs, abs=1e-12)
        assert conditional_mi(pj, pk, z) >= -1e-12


# ---------------------------------------------------------------- metrics on interpretations

def _single_leaf_interpreter(n, name="n"):
    X = np.zeros((n, 1))
    t = fit_regression(X, np.zeros(n))
    c = fit_classification(np.zeros((n, 1)), np.zeros(n, dtype=int))
    return NeuronInterpreter(name, t, c, {0: interpret.logic.LogicProgram((), name, 0)})


@pytest.mark.parametrize("n_bins", [5, 20])
def test_variance_uniform_bins_closed_form(n_bins):
    z = np.tile(np.arange(n_bins, dtype=float), 3)
    pi = PolicyInterpretation({"n": _single_leaf_interpreter(len(z))}, ("s",), SURROGATE_CONFIG, CLASSIFIER_CONFIG)
    ds = make_dataset([(np.zeros((len(z), 1)), z[:, None])], ["s"], ["n"])
    got = metrics.variance_metric(ds, pi, Discretizer(n_bins))
    assert got == pytest.approx((n_bins**2 - 1) / (12 * n_bins**2), abs=1e-15)


def test_variance_zero_for_path_constant_neurons(random_states):
    ds = synth.attach_neurons(random_states, [synth.quadrant_code(), synth.sign_split(1)])
    pi = interpret.build(ds)
    assert metrics.variance_metric(ds, pi) == 0.0


def test_variance_affine_invariant(random_states):
    ds = synth.attach_neurons(random_states, [synth.affine_mix(1, 0.3)])
    pi = interpret.build(ds)
    from policyscope.data import flatten

    v = flatten(ds)
    z = np.round(v.responses_flat * 8) / 8  # dyadic grid keeps the rescaling exact
    b1 = Discretizer(20).fit_transform(z)
    b2 = Discretizer(20).fit_transform(4.0 * z + 1.5)
    assert np.array_equal(b1, b2)
    assert metrics.variance_per_neuron(v.states_flat, b1, pi, 20) == metrics.variance_per_neuron(
        v.states_flat, b2, pi, 20
    )


def test_path_accuracy_constant_stub_is_half():
    s0 = np.concatenate([np.linspace(-1, -0.01, 100), np.linspace(0.01, 1, 100)])
    s = np.column_stack([s0, np.zeros_like(s0)])
    z = (s0 > 0).astype(float)[:, None]
    ds = make_dataset([(s, z)], ["s0", "s1"], ["step"])
    pi = interpret.build(ds)
    assert metrics.path_accuracy(ds, pi) == 1.0
    n = pi["step"]
    stub = fit_classification(np.zeros((200, 1)), np.zeros(200, dtype=int))
    pi.interpreters["step"] = NeuronInterpreter("step", n.tree, stub, n.programs)
    assert metrics.path_accuracy(ds, pi) == 0.5


def test_path_accuracy_undefined_for_trivial_neurons():
    ds = make_dataset([(np.arange(20.0)[:, None], np.ones((20, 1)))], ["s"], ["c"])
    with pytest.raises(UndefinedMetricError):
        metrics.path_accuracy(ds, interpret.build(ds))


def test_conflict_vectorised_matches_list_form(swingup_states):
    ds = synth.attach_neurons(
        swingup_states, [synth.affine_mix(1, 0.2), synth.affine_mix(1, -0.4), synth.quadrant_code()]
    )
    pi = interpret.build(ds)
    from policyscope.data import flatten

    Z = flatten(ds).responses_flat
    rows = metrics.interpret_rows(pi, Z)
    per_row = metrics.conflict_per_row(pi, Z, ds.d_state)
    for r, programs in enumerate(rows):
        c, s = interpret.logic.timestep_conflicts(programs)
        assert per_row[r] == (c / s if s else 0.0)
    assert metrics.conflict_metric(ds, pi) == pytest.approx(interpret.logic.conflict_rate(rows), abs=1e-15)


# ---------------------------------------------------------------- reports and sweep

def test_report_formats(random_states):
    ds = synth.attach_neurons(random_states, [synth.affine_mix(1, 0, name="theta"), synth.affine_mix(0, 1, name="thd")])
    pi = interpret.build(ds)
    rep = metrics.compute_metrics(ds, pi, n_bins=10)
    d = json.loads(rep.to_json())
    assert set(metrics.METRIC_NAMES) <= set(d)
    assert d["config"]["n_bins"] == 10
    assert rep.variance >= 0 and rep.modularity <= 1
    assert 0 <= rep.path_accuracy <= 1 and 0 <= rep.logic_conflict <= 1
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(metrics.METRIC_NAMES) and len(lines) == 2
    assert rep.to_markdown().count("\n") == 3
    assert rep.mig == pytest.approx(metrics.mig_metric(ds, pi, Discretizer(10)))
    assert rep.modularity == pytest.approx(metrics.modularity_metric(ds, pi, Discretizer(10)))


def test_undefined_metrics_reported_as_none():
    ds = make_dataset([(np.arange(20.0)[:, None], np.ones((20, 1)))], ["s"], ["c"])
    rep = metrics.compute_metrics(ds, interpret.build(ds))
    assert rep.mig is None and rep.modularity is None and rep.path_accuracy is None
    assert rep.variance == 0.0 and rep.logic_conflict == 0.0
    assert rep.to_csv().splitlines()[1] == "0.0,,,,0.0"


def test_sweep_grid_and_singleton(random_states):
    ds = synth.attach_neurons(random_states, [synth.quadrant_code(), synth.affine_mix(1, 0)])
    rows = metrics.hyperparameter_sweep(ds, [0.001, 0.003, 0.01], [0.01, 0.1, 0.2])
    assert len(rows) == 9
    assert [(r.ccp_alpha, r.min_leaf_fraction) for r in rows][:2] == [(0.001, 0.01), (0.001, 0.1)]
    assert len(metrics.sweep_csv(rows).splitlines()) == 10
    assert len(json.loads(metrics.sweep_json(rows))) == 9
    single = metrics.hyperparameter_sweep(ds, [0.003], [0.1])[0].report
    direct = metrics.compute_metrics(ds, interpret.build(ds))
    assert single.values() == direct.values()
    with pytest.raises(ValueError):
        metrics.hyperparameter_sweep(ds, [], [0.1])


def test_mig_rank_stable_across_sweep(random_states):
    dis = synth.attach_neurons(random_states, [synth.affine_mix(1, 0), synth.affine_mix(0, 1)])
    ent = synth.attach_neurons(random_states, [synth.affine_mix(1, 1), synth.affine_mix(1, -1)])
    grid = ([0.001, 0.003, 0.01], [0.01, 0.1, 0.2])
    a = [r.report.mig for r in metrics.hyperparameter_sweep(dis, *grid)]
    b = [r.report.mig for r in metrics.hyperparameter_sweep(ent, *grid)]
    assert all(x > y for x, y in zip(a, b))


def test_entropy_helper_matches_oracle(rng):
    a = rng.integers(0, 5, 100)
    assert metrics.entropy(a) == pytest.approx(entropy_of_counts(np.bincount(a)), abs=1e-12)


def test_tree_config_echo_in_report(random_states):
    ds = synth.attach_neurons(random_states, [synth.quadrant_code(), synth.affine_mix(1, 0)])
    cfg = TreeConfig("friedman_mse", 2, 0.2, 0.01)
    rep = metrics.compute_metrics(ds, interpret.build(ds, cfg_tree=cfg))
    assert rep.config["tree_config"] == {"criterion": "friedman_mse", "max_depth": 2,
                                         "min_leaf_fraction": 0.2, "ccp_alpha": 0.01}
