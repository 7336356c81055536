import itertools
import math

import numpy as np
import pytest
from scipy.integrate import dblquad, quad

from conftest import frames, one_dim_model
from engine.errors import ModelFormatError, OutOfVocabulary, TooShort, TrainingError
from engine.features import FeatureSequence
from engine.seqmodel import (
    ENTRY,
    EXIT,
    SPACE,
    GmmState,
    MixupSchedule,
    ModelSet,
    NetworkNode,
    SpottingNetwork,
    SufficientStats,
    TrainingLine,
    build_filler,
    build_keyword_network,
    build_sequence_network,
    embedded_baum_welch,
    flat_start,
    forward_backward,
    forward_log_likelihood,
    gmm_log_pdf,
    line_symbols,
    span_log_likelihood,
    split_mixtures,
    viterbi,
)
from utils.formats import decode_models, encode_models, load_models, save_models


def brute_force_path(network, X) -> tuple[np.ndarray, float]:
    """Best state path by scoring every path of len(X) network states."""
    c = network.compiled
    em = network.models.emissions(X)[:, c.emit]
    T, size = em.shape
    paths = np.array(list(itertools.product(range(size), repeat=T)))
    scores = c.init[paths[:, 0]] + c.final[paths[:, -1]] + em[np.arange(T), paths].sum(axis=1)
    if T > 1:
        scores = scores + c.trans_max[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    best = int(np.argmax(scores))
    return paths[best], float(scores[best])


def random_network(rng: np.random.Generator, max_states: int = 4) -> SpottingNetwork:
    """Random nodes over 1-2 state models plus an entry-exit chain and random extra edges."""
    models = ModelSet(
        [
            one_dim_model(label, rng.normal(0.0, 2.0, size=int(rng.integers(1, 3))).tolist(), loop=float(rng.uniform(0.1, 0.9)))
            for label in (SPACE, "a", "b")
        ],
        var_floor=np.array([1e-3]),
    )
    nodes, total = [], 0
    for _ in range(max_states):
        label = models.labels[int(rng.integers(len(models.labels)))]
        if nodes and total + models[label].n_states > max_states:
            break
        nodes.append(NetworkNode(label, "keyword" if rng.random() < 0.3 else None))
        total += models[label].n_states
    n = len(nodes)

    def weight() -> float:
        return float(np.log(rng.uniform(0.05, 1.0)))

    edges = {(ENTRY, 0): weight(), (n - 1, EXIT): weight()}
    edges.update({(i, i + 1): weight() for i in range(n - 1)})
    for src in range(ENTRY, n):
        for dst in [*range(n), EXIT]:
            if (src, dst) not in edges and (src, dst) != (ENTRY, EXIT) and rng.random() < 0.3:
                edges[(src, dst)] = weight()
    return SpottingNetwork(nodes, [(s, d, w) for (s, d), w in edges.items()], "random", models)


def test_gmm_log_pdf_standard_normal():
    state = GmmState(np.array([1.0]), np.array([[0.0]]), np.array([[1.0]]))
    assert gmm_log_pdf(state, np.array([0.0])) == pytest.approx(-0.918939, abs=1e-6)
    assert gmm_log_pdf(state, np.array([1.0])) == pytest.approx(-1.418939, abs=1e-6)


def test_batched_emissions_match_per_state(toy_models):
    X = frames(-2.0, 0.5, 3.0)
    table = toy_models.emissions(X)
    for sid, state in enumerate(toy_models.all_states()):
        np.testing.assert_allclose(table[:, sid], gmm_log_pdf(state, X.frames), rtol=1e-10)


def test_unknown_label_is_out_of_vocabulary(toy_models):
    with pytest.raises(OutOfVocabulary):
        toy_models["z"]
    with pytest.raises(OutOfVocabulary):
        build_keyword_network(["a", "z"], toy_models)


def test_line_symbols():
    assert line_symbols([["a", "b"], ["b"]]) == [SPACE, "a", "b", SPACE, "b", SPACE]


def test_filler_branch_prior(toy_models):
    filler = build_filler(toy_models)
    c = filler.compiled
    starts = [toy_models.offsets[l] for l in toy_models.labels]
    np.testing.assert_allclose(c.init[starts], -math.log(3))
    assert filler.min_length == 1


def test_keyword_network_min_length(toy_models):
    net = build_keyword_network(["a", "b"], toy_models)
    # space + a(2) + b(1) + space
    assert net.min_length == 5


@pytest.mark.parametrize("builder", ["sequence", "filler", "keyword"])
def test_viterbi_matches_exhaustive_search(toy_models, builder):
    X = frames(-3.1, 0.2, 0.9, 4.2, -2.7)
    network = {
        "sequence": lambda: build_sequence_network([SPACE, "a", "b", SPACE], toy_models),
        "filler": lambda: build_filler(toy_models),
        "keyword": lambda: build_keyword_network(["b"], toy_models),
    }[builder]()
    alignment = viterbi(network, X)
    assert alignment.log_likelihood == pytest.approx(brute_force_path(network, X)[1], abs=1e-9)
    assert alignment.log_likelihood <= forward_log_likelihood(network, X) + 1e-9


def test_forced_alignment_segments(toy_models):
    X = frames(-3.0, -3.0, 0.0, 1.0, 4.0, 4.0, -3.0)
    net = build_sequence_network([SPACE, "a", "b", SPACE], toy_models, tag=None)
    alignment = viterbi(net, X)
    assert [(s.label, s.start, s.end) for s in alignment.segments] == [
        (SPACE, 0, 2), ("a", 2, 4), ("b", 4, 6), (SPACE, 6, 7)
    ]


def test_keyword_span_found(toy_models):
    X = frames(0.0, 1.0, -3.0, 4.0, 4.1, -3.0, 0.0, 1.0)
    net = build_keyword_network(["b"], toy_models)
    alignment = viterbi(net, X)
    assert alignment.span("keyword") == (3, 5)
    score = span_log_likelihood(net, alignment, "keyword", X)
    assert np.isfinite(score)


def test_too_short_for_network(toy_models):
    net = build_keyword_network(["a", "b"], toy_models)
    with pytest.raises(TooShort):
        viterbi(net, frames(0.0, 1.0))


def test_sufficient_stats_merge_is_addition(toy_models):
    line_a = TrainingLine(frames(-3.0, 0.0, 1.0, -3.0), [SPACE, "a", SPACE])
    line_b = TrainingLine(frames(-3.0, 4.0, -3.0), [SPACE, "b", SPACE])
    a, b = forward_backward(toy_models, line_a), forward_backward(toy_models, line_b)
    merged = a + b
    np.testing.assert_allclose(merged.occ, a.occ + b.occ)
    assert merged.frames == 7 and merged.lines == 2
    assert (b + a).loglik == pytest.approx(merged.loglik)
    assert SufficientStats.zeros(toy_models).occ.shape == (4, 1)


def test_short_line_is_skipped(toy_models):
    stats = forward_backward(toy_models, TrainingLine(frames(0.0), [SPACE, "a", SPACE]))
    assert stats.skipped == 1 and stats.lines == 0


def synthetic_lines(rng: np.random.Generator, count: int = 12) -> list[TrainingLine]:
    centres = {SPACE: -4.0, "a": 0.0, "b": 4.0}
    lines = []
    for n in range(count):
        words = [["a", "b"] if n % 2 else ["b", "a", "a"]]
        symbols = line_symbols(words)
        values = []
        for symbol in symbols:
            values.extend(rng.normal(centres[symbol], 0.7, size=int(rng.integers(3, 6))))
        lines.append(TrainingLine(FeatureSequence(np.array(values)[:, None]), symbols, f"l{n}"))
    return lines


def test_flat_start_uses_global_statistics():
    lines = synthetic_lines(np.random.default_rng(0))
    models = flat_start(lines, [SPACE, "a", "b"], n_states=2)
    data = np.concatenate([line.features.frames[:, 0] for line in lines])
    for state in models.all_states():
        assert state.means[0, 0] == pytest.approx(data.mean())
        assert state.variances[0, 0] == pytest.approx(data.var())


def test_flat_start_rejects_unknown_symbols():
    lines = synthetic_lines(np.random.default_rng(0))
    with pytest.raises(TrainingError):
        flat_start(lines, [SPACE, "a"])


def test_baum_welch_likelihood_never_decreases():
    lines = synthetic_lines(np.random.default_rng(1))
    models = flat_start(lines, [SPACE, "a", "b"], n_states=2)
    result = embedded_baum_welch(models, lines, iterations=6)
    logliks = [entry.loglik for entry in result.history]
    assert len(logliks) == 6
    for before, after in zip(logliks, logliks[1:]):
        assert after >= before - 1e-6 * abs(before)


def test_single_state_single_gaussian_is_a_fixpoint():
    X = FeatureSequence(np.array([[1.0], [2.0], [4.0], [5.0]]))
    line = TrainingLine(X, ["a"])
    models = flat_start([line], ["a"], n_states=1)
    trained = embedded_baum_welch(models, [line], iterations=2).models
    state = trained["a"].states[0]
    assert state.means[0, 0] == pytest.approx(3.0)
    assert state.variances[0, 0] == pytest.approx(2.5)
    np.testing.assert_allclose(np.exp(trained["a"].log_trans[0]), [0.75, 0.25])


def test_mixup_schedule_and_split():
    assert MixupSchedule(32).stages(1) == [1, 2, 4, 8, 16, 32]
    assert MixupSchedule(4).stages(1) == [1, 2, 4]
    models = ModelSet([one_dim_model("a", [0.0])], np.array([1e-3]))
    split = split_mixtures(models)
    state = split["a"].states[0]
    assert state.n_mix == 2
    np.testing.assert_allclose(state.weights, [0.5, 0.5])
    np.testing.assert_allclose(sorted(state.means[:, 0]), [-0.2, 0.2])


def test_mixup_training_history_tracks_stages():
    lines = synthetic_lines(np.random.default_rng(2))
    models = flat_start(lines, [SPACE, "a", "b"], n_states=1)
    result = embedded_baum_welch(models, lines, iterations=1, mixup_schedule=MixupSchedule(4))
    assert [entry.mixtures for entry in result.history] == [1, 2, 4]
    assert result.models.n_mix == 4


def test_model_file_round_trip(toy_models):
    decoded = decode_models(encode_models(toy_models))
    assert decoded.labels == toy_models.labels
    X = frames(0.0, 2.0, -1.0)
    np.testing.assert_array_equal(decoded.emissions(X), toy_models.emissions(X))


def test_model_file_rejects_bad_magic(toy_models):
    data = bytearray(encode_models(toy_models))
    data[:4] = b"XXXX"
    with pytest.raises(ModelFormatError):
        decode_models(bytes(data))
    with pytest.raises(ModelFormatError):
        decode_models(encode_models(toy_models)[:-3])


@pytest.mark.parametrize("seed", range(500))
def test_viterbi_path_matches_exhaustive_search_on_random_networks(seed):
    rng = np.random.default_rng(seed)
    network = random_network(rng)
    X = FeatureSequence(rng.normal(0.0, 2.0, size=(int(rng.integers(1, 7)), 1)))
    best_path, best = brute_force_path(network, X)
    if not np.isfinite(best):
        with pytest.raises(TooShort):
            viterbi(network, X)
        return
    alignment = viterbi(network, X)
    assert alignment.log_likelihood == pytest.approx(best, abs=1e-9)
    np.testing.assert_array_equal(alignment.path, best_path)
    assert alignment.log_likelihood <= forward_log_likelihood(network, X) + 1e-9


def test_back_to_back_reentries_are_separate_segments():
    eager = ModelSet([one_dim_model(SPACE, [-3.0]), one_dim_model("b", [4.0], loop=0.01)], np.array([1e-3]))
    alignment = viterbi(build_filler(eager), frames(4.0, 4.0, 4.0))
    assert [(s.label, s.start, s.end) for s in alignment.segments] == [("b", 0, 1), ("b", 1, 2), ("b", 2, 3)]

    sticky = ModelSet([one_dim_model(SPACE, [-3.0]), one_dim_model("b", [4.0], loop=0.9)], np.array([1e-3]))
    alignment = viterbi(build_filler(sticky), frames(4.0, 4.0, 4.0))
    assert [(s.label, s.start, s.end) for s in alignment.segments] == [("b", 0, 3)]


@pytest.mark.parametrize("seed", range(20))
def test_baum_welch_likelihood_never_decreases_on_random_corpora(seed):
    rng = np.random.default_rng(100 + seed)
    lines = synthetic_lines(rng, count=int(rng.integers(4, 10)))
    models = flat_start(lines, [SPACE, "a", "b"], n_states=int(rng.integers(1, 3)))
    logliks = [entry.loglik for entry in embedded_baum_welch(models, lines, iterations=5).history]
    for before, after in zip(logliks, logliks[1:]):
        assert after >= before - 1e-6 * abs(before)


def test_model_file_save_load_save_is_byte_identical(tmp_path):
    lines = synthetic_lines(np.random.default_rng(3))
    models = flat_start(lines, [SPACE, "a", "b"], n_states=2)
    models = embedded_baum_welch(models, lines, iterations=1, mixup_schedule=MixupSchedule(2)).models
    first, second = tmp_path / "first.zshm", tmp_path / "second.zshm"
    save_models(models, first)
    save_models(load_models(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_gmm_density_integrates_to_one():
    one = GmmState(np.array([0.3, 0.7]), np.array([[-1.0], [2.0]]), np.array([[0.5], [2.0]]))
    area, _ = quad(lambda x: math.exp(gmm_log_pdf(one, np.array([x]))), -np.inf, np.inf)
    assert area == pytest.approx(1.0, abs=1e-6)

    two = GmmState(np.array([0.5, 0.5]), np.array([[0.0, 1.0], [1.0, -1.0]]), np.array([[1.0, 0.5], [0.3, 2.0]]))
    area, _ = dblquad(lambda y, x: math.exp(gmm_log_pdf(two, np.array([x, y]))), -12, 12, -12, 12)
    assert area == pytest.approx(1.0, abs=1e-5)
