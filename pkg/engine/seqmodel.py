"""
GMM-HMM character models, embedded Baum-Welch training and Viterbi decoding.

All probabilities live in the natural-log domain. Character models are
strictly left-to-right: state j either loops or moves to j+1; the forward
probability of the last state is the model's exit probability, used when
models are chained (training) or wired into a SpottingNetwork (decoding).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from engine.errors import OutOfVocabulary, TooShort, TrainingError
from engine.features import FeatureSequence

logger = logging.getLogger(__name__)

SPACE = "<sp>"
LOG_2PI = math.log(2.0 * math.pi)
MIN_OCCUPANCY = 1e-10
SPLIT_OFFSET = 0.2

ENTRY = -1
EXIT = -2


# ---------------------------------
# Model types
# ---------------------------------
@dataclass(eq=False)
class GmmState:
    weights: np.ndarray  # (G,)
    means: np.ndarray  # (G, d)
    variances: np.ndarray  # (G, d) diagonal covariances

    @property
    def n_mix(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def copy(self) -> "GmmState":
        return GmmState(self.weights.copy(), self.means.copy(), self.variances.copy())


@dataclass(eq=False)
class CharHmm:
    label: str
    states: list[GmmState]
    log_trans: np.ndarray  # (J, 2): log self-loop, log forward

    @property
    def n_states(self) -> int:
        return len(self.states)

    def copy(self) -> "CharHmm":
        return CharHmm(self.label, [s.copy() for s in self.states], self.log_trans.copy())


def gmm_log_pdf(state: GmmState, x: np.ndarray) -> float | np.ndarray:
    """log sum_k W_k N(x; mu_k, Sigma_k) for one frame (d,) or many frames (T, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != state.dim:
        raise ValueError(f"frame dimension {x.shape[-1]} does not match model dimension {state.dim}")
    frames = np.atleast_2d(x)
    diff = frames[:, None, :] - state.means[None, :, :]
    log_norm = -0.5 * (state.dim * LOG_2PI + np.log(state.variances).sum(axis=1))
    with np.errstate(divide="ignore"):
        log_w = np.log(state.weights)
    comp = log_w + log_norm - 0.5 * (diff ** 2 / state.variances[None]).sum(axis=2)
    out = logsumexp(comp, axis=1)
    return float(out[0]) if x.ndim == 1 else out


class ModelSet:
    """
    Ordered inventory of character HMMs sharing one feature dimension.

    Every (label, state) pair gets a global state id; emission tables are
    computed for all ids (or a subset) in one batched matrix product.
    """

    def __init__(self, models: Iterable[CharHmm], var_floor: np.ndarray):
        self.models: dict[str, CharHmm] = {m.label: m for m in models}
        self.labels: list[str] = list(self.models)
        self.var_floor = np.asarray(var_floor, dtype=np.float64)
        self.offsets: dict[str, int] = {}
        total = 0
        for label in self.labels:
            self.offsets[label] = total
            total += self.models[label].n_states
        self.n_states = total
        mixes = {s.n_mix for m in self.models.values() for s in m.states}
        if len(mixes) > 1:
            raise TrainingError(f"all states must share one mixture count, found {sorted(mixes)}")

    @property
    def dim(self) -> int:
        return int(self.var_floor.shape[0])

    @property
    def n_mix(self) -> int:
        first = self.models[self.labels[0]]
        return first.states[0].n_mix

    @property
    def charset(self) -> list[str]:
        return [label for label in self.labels if label != SPACE]

    def __contains__(self, label: str) -> bool:
        return label in self.models

    def __getitem__(self, label: str) -> CharHmm:
        try:
            return self.models[label]
        except KeyError:
            raise OutOfVocabulary(label) from None

    def state_id(self, label: str, j: int) -> int:
        return self.offsets[label] + j

    def all_states(self) -> list[GmmState]:
        return [s for label in self.labels for s in self.models[label].states]

    def copy(self) -> "ModelSet":
        return ModelSet([self.models[l].copy() for l in self.labels], self.var_floor.copy())

    @cached_property
    def _stack(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        states = self.all_states()
        means = np.stack([s.means for s in states])
        variances = np.stack([s.variances for s in states])
        with np.errstate(divide="ignore"):
            log_w = np.log(np.stack([s.weights for s in states]))
        prec = 1.0 / variances
        const = log_w - 0.5 * (self.dim * LOG_2PI + np.log(variances).sum(axis=2) + (means ** 2 * prec).sum(axis=2))
        return const, prec, means * prec

    def component_log_probs(self, frames: np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
        """(T, S', G) log W_k + log N(x_t) for the requested state ids."""
        const, prec, mprec = self._stack
        if ids is not None:
            const, prec, mprec = const[ids], prec[ids], mprec[ids]
        n, g, d = prec.shape
        if frames.shape[1] != d:
            raise ValueError(f"frame dimension {frames.shape[1]} does not match model dimension {d}")
        quad = (frames ** 2) @ prec.reshape(n * g, d).T
        lin = frames @ mprec.reshape(n * g, d).T
        return (const.reshape(n * g) - 0.5 * quad + lin).reshape(frames.shape[0], n, g)

    def emissions(self, X: FeatureSequence | np.ndarray, ids: np.ndarray | None = None) -> np.ndarray:
        frames = X.frames if isinstance(X, FeatureSequence) else np.asarray(X, dtype=np.float64)
        return logsumexp(self.component_log_probs(frames, ids), axis=2)


# ---------------------------------
# Flat start
# ---------------------------------
@dataclass
class TrainingLine:
    features: FeatureSequence
    symbols: list[str]
    line_id: str = ""


def line_symbols(words: Sequence[Sequence[str]]) -> list[str]:
    """Space-delimited symbol string for a line: <sp> w1 <sp> w2 ... <sp>."""
    symbols = [SPACE]
    for word in words:
        symbols.extend(word)
        symbols.append(SPACE)
    return symbols


def flat_start(
    lines: Sequence[TrainingLine],
    labels: Sequence[str],
    n_states: int | dict[str, int] = 6,
    init_mix: int = 1,
    var_floor_scale: float = 1e-4,
    min_var: float = 1e-6,
) -> ModelSet:
    """Every state of every model starts from the global mean / diagonal variance."""
    if not lines:
        raise TrainingError("flat start needs at least one training line")
    known = set(labels)
    for line in lines:
        unknown = sorted(set(line.symbols) - known)
        if unknown:
            raise TrainingError(f"line {line.line_id or '?'} uses symbols outside the charset: {unknown}")
    frames = np.vstack([line.features.frames for line in lines])
    mean = frames.mean(axis=0)
    variance = frames.var(axis=0)
    var_floor = np.maximum(var_floor_scale * variance, min_var)
    variance = np.maximum(variance, var_floor)

    models = []
    for label in labels:
        j_count = n_states[label] if isinstance(n_states, dict) else n_states
        states = [
            GmmState(
                weights=np.full(init_mix, 1.0 / init_mix),
                means=np.tile(mean, (init_mix, 1)),
                variances=np.tile(variance, (init_mix, 1)),
            )
            for _ in range(j_count)
        ]
        models.append(CharHmm(label, states, np.full((j_count, 2), math.log(0.5))))
    logger.info(f"flat start: {len(labels)} models, {frames.shape[0]} frames, dim {frames.shape[1]}")
    return ModelSet(models, var_floor)


# ---------------------------------
# Embedded Baum-Welch
# ---------------------------------
@dataclass(eq=False)
class SufficientStats:
    """Per-state expected counts; merging is plain addition (associative, commutative)."""

    occ: np.ndarray  # (S, G)
    sum_x: np.ndarray  # (S, G, d)
    sum_x2: np.ndarray  # (S, G, d)
    trans: np.ndarray  # (S, 2) self / forward
    loglik: float = 0.0
    frames: int = 0
    lines: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, models: ModelSet) -> "SufficientStats":
        s, g, d = models.n_states, models.n_mix, models.dim
        return cls(np.zeros((s, g)), np.zeros((s, g, d)), np.zeros((s, g, d)), np.zeros((s, 2)))

    def __add__(self, other: "SufficientStats") -> "SufficientStats":
        return SufficientStats(
            self.occ + other.occ,
            self.sum_x + other.sum_x,
            self.sum_x2 + other.sum_x2,
            self.trans + other.trans,
            self.loglik + other.loglik,
            self.frames + other.frames,
            self.lines + other.lines,
            self.skipped + other.skipped,
        )


def _chain(models: ModelSet, symbols: Sequence[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids, loop, fwd = [], [], []
    for symbol in symbols:
        hmm = models[symbol]
        base = models.offsets[symbol]
        ids.extend(range(base, base + hmm.n_states))
        loop.extend(hmm.log_trans[:, 0])
        fwd.extend(hmm.log_trans[:, 1])
    return np.array(ids), np.array(loop), np.array(fwd)


def forward_backward(models: ModelSet, line: TrainingLine) -> SufficientStats:
    """E-step for one line against its concatenated (linear) model."""
    stats = SufficientStats.zeros(models)
    X = line.features.frames
    T = X.shape[0]
    ids, loop, fwd = _chain(models, line.symbols)
    N = ids.shape[0]
    if T < N:
        stats.skipped = 1
        return stats

    unique, pos = np.unique(ids, return_inverse=True)
    comp = models.component_log_probs(X, unique)  # (T, U, G)
    em_u = logsumexp(comp, axis=2)
    em = em_u[:, pos]

    alpha = np.full((T, N), -np.inf)
    alpha[0, 0] = em[0, 0]
    for t in range(1, T):
        move = np.full(N, -np.inf)
        move[1:] = alpha[t - 1, :-1] + fwd[:-1]
        alpha[t] = np.logaddexp(alpha[t - 1] + loop, move) + em[t]
    loglik = alpha[T - 1, N - 1] + fwd[N - 1]
    if not np.isfinite(loglik):
        stats.skipped = 1
        return stats

    beta = np.full((T, N), -np.inf)
    beta[T - 1, N - 1] = fwd[N - 1]
    for t in range(T - 2, -1, -1):
        nxt = em[t + 1] + beta[t + 1]
        move = np.full(N, -np.inf)
        move[:-1] = fwd[:-1] + nxt[1:]
        beta[t] = np.logaddexp(loop + nxt, move)

    gamma = np.exp(alpha + beta - loglik)  # (T, N)
    nxt = em[1:] + beta[1:]
    self_cnt = np.exp(alpha[:-1] + loop + nxt - loglik).sum(axis=0)
    fwd_cnt = np.zeros(N)
    fwd_cnt[:-1] = np.exp(alpha[:-1, :-1] + fwd[:-1] + nxt[:, 1:] - loglik).sum(axis=0)
    fwd_cnt[-1] = 1.0

    gamma_u = np.zeros((T, unique.shape[0]))
    np.add.at(gamma_u.T, pos, gamma.T)
    resp = gamma_u[:, :, None] * np.exp(comp - em_u[:, :, None])  # (T, U, G)
    g = comp.shape[2]
    flat = resp.reshape(T, -1)
    stats.occ[unique] = resp.sum(axis=0)
    stats.sum_x[unique] = (flat.T @ X).reshape(unique.shape[0], g, -1)
    stats.sum_x2[unique] = (flat.T @ (X ** 2)).reshape(unique.shape[0], g, -1)
    np.add.at(stats.trans[:, 0], ids, self_cnt)
    np.add.at(stats.trans[:, 1], ids, fwd_cnt)
    stats.loglik = float(loglik)
    stats.frames = T
    stats.lines = 1
    return stats


def reestimate(models: ModelSet, stats: SufficientStats) -> ModelSet:
    """M-step: weights, means, floored diagonal variances and transitions."""
    new = models.copy()
    sid = 0
    for label in new.labels:
        hmm = new.models[label]
        for j, state in enumerate(hmm.states):
            occ = stats.occ[sid]
            total = occ.sum()
            if total > MIN_OCCUPANCY:
                state.weights = occ / total
                live = occ > MIN_OCCUPANCY
                mean = stats.sum_x[sid][live] / occ[live, None]
                var = stats.sum_x2[sid][live] / occ[live, None] - mean ** 2
                state.means[live] = mean
                state.variances[live] = np.maximum(var, new.var_floor)
            counts = stats.trans[sid]
            if counts.sum() > MIN_OCCUPANCY:
                with np.errstate(divide="ignore"):
                    hmm.log_trans[j] = np.log(counts / counts.sum())
            sid += 1
    return ModelSet([new.models[l] for l in new.labels], new.var_floor)


def split_mixtures(models: ModelSet) -> ModelSet:
    """Double every state's mixture count by repeatedly splitting the heaviest component."""
    new = models.copy()
    for state in new.all_states():
        weights, means, variances = list(state.weights), list(state.means), list(state.variances)
        for _ in range(state.n_mix):
            k = int(np.argmax(weights))
            offset = SPLIT_OFFSET * np.sqrt(variances[k])
            half = weights[k] / 2.0
            weights[k] = half
            weights.append(half)
            means.append(means[k] + offset)
            means[k] = means[k] - offset
            variances.append(variances[k].copy())
        state.weights = np.array(weights)
        state.means = np.array(means)
        state.variances = np.array(variances)
    return ModelSet([new.models[l] for l in new.labels], new.var_floor)


@dataclass(frozen=True)
class MixupSchedule:
    """Double the mixture count after every stage until ``max_mixtures`` is reached."""

    max_mixtures: int = 32

    def stages(self, start: int) -> list[int]:
        counts = [start]
        while counts[-1] * 2 <= self.max_mixtures:
            counts.append(counts[-1] * 2)
        return counts


@dataclass(frozen=True)
class IterationLog:
    iteration: int
    mixtures: int
    loglik: float
    frames: int
    skipped: int


@dataclass
class TrainingResult:
    models: ModelSet
    history: list[IterationLog] = field(default_factory=list)


def accumulate(models: ModelSet, lines: Sequence[TrainingLine]) -> SufficientStats:
    stats = SufficientStats.zeros(models)
    for line in lines:
        stats = stats + forward_backward(models, line)
    return stats


def embedded_baum_welch(
    models: ModelSet,
    lines: Sequence[TrainingLine],
    iterations: int = 3,
    mixup_schedule: MixupSchedule | None = None,
    on_iteration: Callable[[IterationLog], None] | None = None,
) -> TrainingResult:
    """
    Run ``iterations`` EM passes per mixture stage.

    Without a schedule the mixture count stays fixed. The logged likelihood
    of iteration k is that of the models entering iteration k, so within a
    stage the column is non-decreasing.
    """
    result = TrainingResult(models)
    stages = mixup_schedule.stages(models.n_mix) if mixup_schedule else [models.n_mix]
    counter = 0
    for stage, mixtures in enumerate(stages):
        if stage > 0:
            result.models = split_mixtures(result.models)
        for _ in range(iterations):
            stats = accumulate(result.models, lines)
            if stats.lines == 0:
                raise TrainingError("no training line could be aligned with its transcription")
            entry = IterationLog(counter, mixtures, stats.loglik, stats.frames, stats.skipped)
            if stats.skipped:
                logger.warning(f"iteration {counter}: skipped {stats.skipped} lines with zero likelihood")
            logger.info(f"iteration {counter} (G={mixtures}): log-likelihood {stats.loglik:.4f} over {stats.frames} frames")
            result.history.append(entry)
            if on_iteration:
                on_iteration(entry)
            result.models = reestimate(result.models, stats)
            counter += 1
    return result


# ---------------------------------
# Networks
# ---------------------------------
@dataclass(frozen=True)
class NetworkNode:
    label: str
    tag: str | None = None


@dataclass(frozen=True, eq=False)
class CompiledNetwork:
    emit: np.ndarray  # (S,) global model state id per network state
    node_of: np.ndarray
    state_of: np.ndarray
    init: np.ndarray
    trans_max: np.ndarray  # (S, S) for Viterbi
    trans_sum: np.ndarray  # (S, S) for the forward pass
    entered: np.ndarray  # (S, S) bool: the best i -> j transition enters a node through a network edge
    final: np.ndarray
    span_init: dict[str, np.ndarray]
    span_final: dict[str, np.ndarray]


@dataclass(eq=False)
class SpottingNetwork:
    """Graph of HMM nodes; edges are (src, dst, log weight) with ENTRY / EXIT pseudo nodes."""

    nodes: list[NetworkNode]
    edges: list[tuple[int, int, float]]
    role: str
    models: ModelSet

    def __post_init__(self):
        for node in self.nodes:
            if node.label not in self.models:
                raise OutOfVocabulary(node.label)
        self._check_connected()

    def _check_connected(self):
        forward = {ENTRY}
        backward = {EXIT}
        changed = True
        while changed:
            changed = False
            for src, dst, _ in self.edges:
                if src in forward and dst not in forward:
                    forward.add(dst)
                    changed = True
                if dst in backward and src not in backward:
                    backward.add(src)
                    changed = True
        dead = [i for i in range(len(self.nodes)) if i not in forward or i not in backward]
        if dead:
            raise ValueError(f"{self.role} network nodes not on an entry-exit path: {dead}")

    def node_length(self, index: int) -> int:
        return self.models[self.nodes[index].label].n_states

    @cached_property
    def min_length(self) -> int:
        """Fewest frames any entry-to-exit path can emit."""
        best = {ENTRY: 0}
        for _ in range(len(self.nodes) + 1):
            for src, dst, _ in self.edges:
                if src not in best:
                    continue
                cost = best[src] + (self.node_length(dst) if dst != EXIT else 0)
                if cost < best.get(dst, math.inf):
                    best[dst] = cost
        return int(best[EXIT])

    @cached_property
    def compiled(self) -> CompiledNetwork:
        offsets, emit, node_of, state_of = [], [], [], []
        for n, node in enumerate(self.nodes):
            offsets.append(len(emit))
            base = self.models.offsets[node.label]
            for j in range(self.node_length(n)):
                emit.append(base + j)
                node_of.append(n)
                state_of.append(j)
        size = len(emit)
        init = np.full(size, -np.inf)
        final = np.full(size, -np.inf)
        trans_max = np.full((size, size), -np.inf)
        trans_sum = np.full((size, size), -np.inf)
        entered = np.zeros((size, size), dtype=bool)

        def link(i: int, j: int, w: float, entry: bool = False):
            if w > trans_max[i, j]:
                trans_max[i, j] = w
                entered[i, j] = entry
            trans_sum[i, j] = np.logaddexp(trans_sum[i, j], w)

        for n, node in enumerate(self.nodes):
            hmm = self.models[node.label]
            for j in range(hmm.n_states):
                s = offsets[n] + j
                link(s, s, hmm.log_trans[j, 0])
                if j + 1 < hmm.n_states:
                    link(s, s + 1, hmm.log_trans[j, 1])

        def exit_weight(n: int) -> float:
            return self.models[self.nodes[n].label].log_trans[-1, 1]

        def last(n: int) -> int:
            return offsets[n] + self.node_length(n) - 1

        tags = {node.tag for node in self.nodes if node.tag}
        span_init = {tag: np.full(size, -np.inf) for tag in tags}
        span_final = {tag: np.full(size, -np.inf) for tag in tags}
        for src, dst, w in self.edges:
            if src == ENTRY and dst == EXIT:
                continue
            if src == ENTRY:
                init[offsets[dst]] = max(init[offsets[dst]], w)
            elif dst == EXIT:
                final[last(src)] = max(final[last(src)], exit_weight(src) + w)
            else:
                link(last(src), offsets[dst], exit_weight(src) + w, entry=True)
            src_tag = self.nodes[src].tag if src >= 0 else None
            dst_tag = self.nodes[dst].tag if dst >= 0 else None
            if dst_tag and src_tag != dst_tag:
                span_init[dst_tag][offsets[dst]] = max(span_init[dst_tag][offsets[dst]], w)
            if src_tag and src_tag != dst_tag:
                span_final[src_tag][last(src)] = max(span_final[src_tag][last(src)], exit_weight(src) + w)

        return CompiledNetwork(
            emit=np.array(emit),
            node_of=np.array(node_of),
            state_of=np.array(state_of),
            init=init,
            trans_max=trans_max,
            trans_sum=trans_sum,
            entered=entered,
            final=final,
            span_init=span_init,
            span_final=span_final,
        )


def build_filler(models: ModelSet, role: str = "filler") -> SpottingNetwork:
    """Loop over every model (characters and Space) with a uniform branch prior."""
    if not models.charset:
        raise ValueError("filler needs a non-empty charset")
    n = len(models.labels)
    prior = -math.log(n)
    nodes = [NetworkNode(label) for label in models.labels]
    edges = [(ENTRY, i, prior) for i in range(n)]
    edges += [(i, j, prior) for i in range(n) for j in range(n)]
    edges += [(i, EXIT, 0.0) for i in range(n)]
    return SpottingNetwork(nodes, edges, role, models)


def build_keyword_network(keyword_chars: Sequence[str], models: ModelSet, tag: str = "keyword") -> SpottingNetwork:
    """Filler* . Space . c_1 ... c_m . Space . Filler*; the c_i nodes carry ``tag``."""
    if not keyword_chars:
        raise ValueError("keyword must contain at least one symbol")
    for symbol in keyword_chars:
        if symbol not in models or symbol == SPACE:
            raise OutOfVocabulary(symbol)
    if SPACE not in models:
        raise OutOfVocabulary(SPACE)

    labels = models.labels
    n = len(labels)
    prior = -math.log(n)
    nodes = [NetworkNode(label) for label in labels]
    prefix = list(range(n))
    space_in = len(nodes)
    nodes.append(NetworkNode(SPACE))
    keys = []
    for symbol in keyword_chars:
        keys.append(len(nodes))
        nodes.append(NetworkNode(symbol, tag))
    space_out = len(nodes)
    nodes.append(NetworkNode(SPACE))
    suffix = list(range(len(nodes), len(nodes) + n))
    nodes += [NetworkNode(label) for label in labels]

    edges = [(ENTRY, space_in, 0.0)]
    edges += [(ENTRY, i, prior) for i in prefix]
    edges += [(i, j, prior) for i in prefix for j in prefix]
    edges += [(i, space_in, 0.0) for i in prefix]
    chain = [space_in, *keys, space_out]
    edges += [(a, b, 0.0) for a, b in zip(chain, chain[1:])]
    edges += [(space_out, EXIT, 0.0)]
    edges += [(space_out, i, prior) for i in suffix]
    edges += [(i, j, prior) for i in suffix for j in suffix]
    edges += [(i, EXIT, 0.0) for i in suffix]
    return SpottingNetwork(nodes, edges, "keyword", models)


def build_sequence_network(symbols: Sequence[str], models: ModelSet, tag: str | None = None) -> SpottingNetwork:
    """Strictly linear network used for forced alignment of a known symbol sequence."""
    nodes = [NetworkNode(symbol, tag) for symbol in symbols]
    edges = [(ENTRY, 0, 0.0)] + [(i, i + 1, 0.0) for i in range(len(nodes) - 1)] + [(len(nodes) - 1, EXIT, 0.0)]
    return SpottingNetwork(nodes, edges, "sequence", models)


# ---------------------------------
# Decoding
# ---------------------------------
@dataclass(frozen=True)
class Segment:
    node: int
    label: str
    tag: str | None
    start: int
    end: int  # exclusive


@dataclass(eq=False)
class Alignment:
    path: np.ndarray  # network state per frame
    frame_labels: list[tuple[int, int]]
    segments: list[Segment]
    log_likelihood: float

    def span(self, tag: str) -> tuple[int, int] | None:
        tagged = [s for s in self.segments if s.tag == tag]
        if not tagged:
            return None
        return tagged[0].start, tagged[-1].end


def _emission_table(network: SpottingNetwork, X: FeatureSequence, emissions: np.ndarray | None) -> np.ndarray:
    if emissions is None:
        emissions = network.models.emissions(X)
    return emissions[:, network.compiled.emit]


def _segments(network: SpottingNetwork, path: np.ndarray) -> list[Segment]:
    c = network.compiled
    segments: list[Segment] = []
    start = 0
    for t in range(1, len(path) + 1):
        boundary = t == len(path)
        if not boundary:
            prev, cur = path[t - 1], path[t]
            boundary = c.node_of[cur] != c.node_of[prev] or c.entered[prev, cur]
        if boundary:
            node = int(c.node_of[path[start]])
            meta = network.nodes[node]
            segments.append(Segment(node, meta.label, meta.tag, start, t))
            start = t
    return segments


def viterbi(network: SpottingNetwork, X: FeatureSequence, emissions: np.ndarray | None = None) -> Alignment:
    """
    Best state path in the log domain.

    ``emissions`` may carry a precomputed (T, models.n_states) table so one
    line can be decoded against many networks built on the same models.
    Ties go to the lowest predecessor / final state index.
    """
    T = len(X) if emissions is None else emissions.shape[0]
    if T < network.min_length:
        raise TooShort(T, network.min_length)
    c = network.compiled
    em = _emission_table(network, X, emissions)
    size = c.emit.shape[0]
    columns = np.arange(size)
    back = np.zeros((T, size), dtype=np.int64)
    delta = c.init + em[0]
    for t in range(1, T):
        cand = delta[:, None] + c.trans_max
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], columns] + em[t]
    scores = delta + c.final
    state = int(np.argmax(scores))
    loglik = float(scores[state])
    if not np.isfinite(loglik):
        raise TooShort(T, network.min_length)
    path = np.zeros(T, dtype=np.int64)
    path[-1] = state
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    frame_labels = [(int(c.node_of[s]), int(c.state_of[s])) for s in path]
    return Alignment(path, frame_labels, _segments(network, path), loglik)


def span_log_likelihood(
    network: SpottingNetwork, alignment: Alignment, tag: str, X: FeatureSequence, emissions: np.ndarray | None = None
) -> float:
    """
    Path score restricted to the tagged span: entering edge weight, span
    emissions and transitions, and the exit weight leaving the span.
    """
    bounds = alignment.span(tag)
    if bounds is None:
        raise ValueError(f"alignment has no segment tagged {tag!r}")
    a, b = bounds
    c = network.compiled
    em = _emission_table(network, X, emissions)
    path = alignment.path
    score = c.span_init[tag][path[a]] + c.span_final[tag][path[b - 1]]
    score += em[np.arange(a, b), path[a:b]].sum()
    if b - a > 1:
        score += c.trans_max[path[a:b - 1], path[a + 1:b]].sum()
    return float(score)


def forward_log_likelihood(network: SpottingNetwork, X: FeatureSequence, emissions: np.ndarray | None = None) -> float:
    """Total (summed over paths) log-likelihood of X under the network."""
    c = network.compiled
    em = _emission_table(network, X, emissions)
    alpha = c.init + em[0]
    for t in range(1, em.shape[0]):
        alpha = logsumexp(alpha[:, None] + c.trans_sum, axis=0) + em[t]
    return float(logsumexp(alpha + c.final))
