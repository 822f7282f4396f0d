"""Top-K expert activation as probability-proportional-to-size sampling.

The activated expert set of a layer is modeled as a size-K sample without
replacement with set probability proportional to the product of the member
weights, normalized by the K-th elementary symmetric polynomial of all
weights. Everything downstream (per-expert activation probabilities, the
distribution of the slowest activated rank, the expected layer computation
latency) reduces to ratios of elementary symmetric polynomials, evaluated
directly or in the log domain when the weight spread is extreme.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Iterable, Sequence

import numpy as np

# Beyond this max/min weight ratio the symmetric-polynomial recurrences run in
# the log domain.
_LOG_DOMAIN_RATIO = 1e6
# Exact set-PMF sampling enumerates C(I, K) subsets; past this I the
# sequential heuristic takes over by default.
_EXACT_SAMPLER_MAX_I = 12


def elementary_symmetric(weights: Sequence[float], k: int) -> float:
    """e_k of the weight list via the stable one-pass recurrence. e_0 = 1; k > len gives 0."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    e = np.zeros(k + 1)
    e[0] = 1.0
    for m, w in enumerate(weights, start=1):
        top = min(k, m)
        # RHS materializes before the in-place add, so the overlap is safe.
        e[1 : top + 1] += w * e[0:top]
    return float(e[k])


def log_elementary_symmetric(log_weights: Sequence[float], k: int) -> float:
    """log e_k from log-weights; -inf when k exceeds the list length."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    le = np.full(k + 1, -np.inf)
    le[0] = 0.0
    for m, lw in enumerate(log_weights, start=1):
        top = min(k, m)
        for j in range(top, 0, -1):
            le[j] = np.logaddexp(le[j], lw + le[j - 1])
    return float(le[k])


@dataclass(frozen=True)
class ActivationModel:
    """Per-layer expert popularity weights and the top-K width."""

    weights: tuple[float, ...]
    top_k: int

    def __post_init__(self) -> None:
        if len(self.weights) < 1:
            raise ValueError("need at least one expert weight")
        if any(w <= 0 or not np.isfinite(w) for w in self.weights):
            raise ValueError(f"weights must be positive and finite, got {self.weights}")
        if not 1 <= self.top_k <= len(self.weights):
            raise ValueError(
                f"top_k must lie in [1, {len(self.weights)}], got {self.top_k}"
            )

    @property
    def n_experts(self) -> int:
        return len(self.weights)

    @property
    def _use_log(self) -> bool:
        return max(self.weights) / min(self.weights) > _LOG_DOMAIN_RATIO

    @cached_property
    def _exact_table(self) -> tuple[list[tuple[int, ...]], np.ndarray]:
        subsets = list(combinations(range(self.n_experts), self.top_k))
        probs = np.array([subset_pmf(self, s) for s in subsets])
        return subsets, np.cumsum(probs)


def subset_pmf(model: ActivationModel, subset: Iterable[int]) -> float:
    """Probability that the activated set equals exactly this K-subset."""
    members = sorted(set(int(i) for i in subset))
    if len(members) != model.top_k:
        raise ValueError(
            f"subset must hold {model.top_k} distinct experts, got {members}"
        )
    if members and (members[0] < 0 or members[-1] >= model.n_experts):
        raise ValueError(f"subset {members} outside expert range [0, {model.n_experts})")
    if model._use_log:
        lw = [np.log(w) for w in model.weights]
        num = sum(lw[i] for i in members)
        return float(np.exp(num - log_elementary_symmetric(lw, model.top_k)))
    num = 1.0
    for i in members:
        num *= model.weights[i]
    return num / elementary_symmetric(model.weights, model.top_k)


def activation_prob(model: ActivationModel, expert: int) -> float:
    """Marginal probability that this expert is in the activated set."""
    if not 0 <= expert < model.n_experts:
        raise ValueError(f"expert {expert} outside range [0, {model.n_experts})")
    others = [w for j, w in enumerate(model.weights) if j != expert]
    if model._use_log:
        lw_all = [np.log(w) for w in model.weights]
        lw_others = [np.log(w) for w in others]
        ratio = np.exp(
            log_elementary_symmetric(lw_others, model.top_k)
            - log_elementary_symmetric(lw_all, model.top_k)
        )
        return float(1.0 - ratio)
    return 1.0 - elementary_symmetric(others, model.top_k) / elementary_symmetric(
        model.weights, model.top_k
    )


def activation_probs(model: ActivationModel) -> np.ndarray:
    """All marginal activation probabilities; sums to top_k."""
    return np.array([activation_prob(model, i) for i in range(model.n_experts)])


def sample_topk(
    model: ActivationModel, rng: np.random.Generator, method: str = "auto"
) -> frozenset[int]:
    """Draw one activated expert set.

    "exact" inverts the enumerated set PMF (one uniform). "sequential" draws
    experts one at a time proportionally to the remaining weights (K uniforms);
    it is the classic streaming heuristic and does NOT reproduce the set PMF
    exactly, so it is only the default past the enumeration size limit.
    """
    if method == "auto":
        method = "exact" if model.n_experts <= _EXACT_SAMPLER_MAX_I else "sequential"
    if method == "exact":
        subsets, cum = model._exact_table
        u = rng.random() * cum[-1]
        return frozenset(subsets[int(np.searchsorted(cum, u, side="right"))])
    if method == "sequential":
        remaining = list(range(model.n_experts))
        weights = [model.weights[i] for i in remaining]
        chosen: list[int] = []
        for _ in range(model.top_k):
            total = sum(weights)
            u = rng.random() * total
            acc = 0.0
            pick = len(weights) - 1
            for j, w in enumerate(weights):
                acc += w
                if u < acc:
                    pick = j
                    break
            chosen.append(remaining.pop(pick))
            weights.pop(pick)
        return frozenset(chosen)
    raise ValueError(f"method must be auto, exact or sequential, got {method!r}")


@dataclass(frozen=True)
class RankedWeights:
    """Weights re-indexed by candidate rank: values[s] belongs to the expert
    placed on the (s+1)-th lowest-latency candidate."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) < 1:
            raise ValueError("need at least one ranked weight")
        if any(w <= 0 or not np.isfinite(w) for w in self.values):
            raise ValueError(f"ranked weights must be positive and finite, got {self.values}")


def ranked_weights(weights: Sequence[float], rank_to_expert: Sequence[int]) -> RankedWeights:
    """Reorder expert weights by a rank->expert permutation."""
    if sorted(rank_to_expert) != list(range(len(weights))):
        raise ValueError(f"rank_to_expert must permute 0..{len(weights) - 1}")
    return RankedWeights(values=tuple(weights[i] for i in rank_to_expert))


def slowest_rank_cdf(ranked: RankedWeights, k: int, s: int) -> float:
    """Pr[slowest activated rank < s], ranks 1-based.

    Equals e_k(first s-1 ranked weights) / e_k(all ranked weights): the event
    is exactly "the activated set fits inside the fastest s-1 candidates".
    Zero whenever s <= k, one when s exceeds the number of experts.
    """
    n = len(ranked.values)
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if s <= k:
        return 0.0
    if s > n:
        return 1.0
    prefix = ranked.values[: s - 1]
    spread = max(ranked.values) / min(ranked.values)
    if spread > _LOG_DOMAIN_RATIO:
        lw = [np.log(w) for w in ranked.values]
        return float(
            np.exp(log_elementary_symmetric(lw[: s - 1], k) - log_elementary_symmetric(lw, k))
        )
    return elementary_symmetric(prefix, k) / elementary_symmetric(ranked.values, k)


def layer_comp_latency(ranked: RankedWeights, k: int, latencies: Sequence[float]) -> float:
    """Expected layer completion latency when candidate ranks carry these latencies.

    latencies must be sorted non-decreasing (rank order) and non-negative.
    Uses the telescoped survival-function form: sum over ranks of
    (1 - Pr[slowest rank < s]) * (latency step at rank s).
    """
    n = len(ranked.values)
    if len(latencies) != n:
        raise ValueError(f"need {n} latencies, got {len(latencies)}")
    lat = [float(x) for x in latencies]
    if any(x < 0 or not np.isfinite(x) for x in lat):
        raise ValueError("latencies must be finite and non-negative")
    if any(b < a for a, b in zip(lat, lat[1:])):
        raise ValueError("latencies must be sorted non-decreasing by rank")
    total = 0.0
    prev = 0.0
    for s in range(1, n + 1):
        total += (1.0 - slowest_rank_cdf(ranked, k, s)) * (lat[s - 1] - prev)
        prev = lat[s - 1]
    return total


def fit_weights_from_probs(
    probs: Sequence[float], k: int, tol: float = 1e-10, max_sweeps: int = 500
) -> tuple[float, ...]:
    """Invert marginal activation probabilities back to weights (up to scale).

    Coordinate-wise closed-form sweeps: holding the others fixed, the weight
    reproducing P_i is w_i = p_i * e_k(others) / ((1 - p_i) * e_{k-1}(others)).
    Converges when the targets are a realizable marginal vector (positive,
    below one, summing to k).
    """
    p = np.asarray(probs, dtype=float)
    n = p.size
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        if k == n and np.allclose(p, 1.0):
            return tuple(1.0 for _ in range(n))
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    if abs(p.sum() - k) > 1e-6:
        raise ValueError(f"probabilities must sum to k={k}, got {p.sum():.8f}")
    p = p * (k / p.sum())

    w = p / (1.0 - p)  # exact for k == 1 up to scale
    for _ in range(max_sweeps):
        for i in range(n):
            others = [w[j] for j in range(n) if j != i]
            ek = elementary_symmetric(others, k)
            ek1 = elementary_symmetric(others, k - 1)
            w[i] = p[i] * ek / ((1.0 - p[i]) * ek1)
        w /= np.exp(np.mean(np.log(w)))
        model = ActivationModel(weights=tuple(w), top_k=k)
        if float(np.max(np.abs(activation_probs(model) - p))) <= tol:
            return tuple(w)
    raise RuntimeError(f"weight fit did not reach tol={tol} in {max_sweeps} sweeps")


def read_activation_trace(path) -> dict[int, dict[int, int]]:
    """Parse a `layer,expert,count` CSV into per-layer count maps."""
    counts: dict[int, dict[int, int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                if header != ["layer", "expert", "count"]:
                    raise ValueError(
                        f"{path}:{lineno}: expected header 'layer,expert,count', got {line!r}"
                    )
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {line!r}")
            try:
                layer, expert, count = int(parts[0]), int(parts[1]), int(parts[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
            if layer < 1 or expert < 0 or count < 0:
                raise ValueError(f"{path}:{lineno}: out-of-range values in {line!r}")
            if expert in counts.setdefault(layer, {}):
                raise ValueError(f"{path}:{lineno}: duplicate (layer, expert) pair")
            counts[layer][expert] = count
    if header is None:
        raise ValueError(f"{path}: empty trace file")
    return counts


def models_from_trace(path, k, n_experts: int | None = None) -> dict[int, ActivationModel]:
    """Fit one ActivationModel per traced layer from empirical counts.

    Empirical marginals are k * count / total; zero counts are floored at
    1e-9 before inversion so unseen experts get a tiny positive weight.
    """
    counts = read_activation_trace(path)
    models: dict[int, ActivationModel] = {}
    for layer in sorted(counts):
        layer_counts = counts[layer]
        n = n_experts if n_experts is not None else max(layer_counts) + 1
        c = np.zeros(n)
        for e, v in layer_counts.items():
            if e >= n:
                raise ValueError(f"trace layer {layer} names expert {e} >= n_experts {n}")
            c[e] = v
        total = c.sum()
        if total <= 0:
            raise ValueError(f"trace layer {layer} has no activations")
        p = np.clip(k * c / total, 1e-9, 1.0 - 1e-9)
        p *= k / p.sum()
        models[layer] = ActivationModel(weights=fit_weights_from_probs(p, k), top_k=k)
    return models
