"""AUC and accuracy metrics plus the two evaluation protocols.

The AUC protocol walks every ordered (target, negative) class pair, drawing
a fresh support set per repetition; the accuracy protocol samples episodes
and thresholds probabilities at 0.5. Both run against a scorer callable
(support, queries) -> scores, so the meta-learned heads and the shallow
baseline share the exact same machinery. Per-task seeds derive from the
protocol seed, which makes parallel execution (jobs > 1) reproduce the
serial results exactly under an ordered reduction.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .episodes import EpisodeConfig, sample_episode, sample_pair_episode
from .errors import ContractError
from .heads import score_queries
from .svdd import DEFAULT_LAMBDA, DEFAULT_TOLERANCE

ACCURACY_QUERY_PER_SIDE = 10


def auc(target_scores, negative_scores):
    """Rank-based AUC: fraction of (target, negative) pairs ordered correctly.

    Ties count one half. Computed from average ranks, which is exactly the
    pair count in float64 (rank sums are half-integers).
    """
    t = np.asarray(target_scores, dtype=np.float64)
    n = np.asarray(negative_scores, dtype=np.float64)
    if t.ndim != 1 or n.ndim != 1 or t.size == 0 or n.size == 0:
        raise ContractError("auc needs two non-empty score vectors")
    scores = np.concatenate([t, n])
    order = np.argsort(scores, kind="mergesort")
    ranked = scores[order]
    # average rank per tie group
    boundary = np.concatenate([[True], ranked[1:] != ranked[:-1]])
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    avg_rank = (ends - counts + ends + 1) / 2.0
    ranks = np.empty(scores.size)
    ranks[order] = avg_rank[group]
    rank_sum = ranks[: t.size].sum()
    return (rank_sum - t.size * (t.size + 1) / 2.0) / (t.size * n.size)


@dataclass(frozen=True)
class PairResult:
    target_class: int
    negative_class: int
    mean_auc: float
    std_auc: float


@dataclass(frozen=True)
class ClassSummary:
    target_class: int
    mean_auc: float
    std_auc: float


@dataclass(frozen=True)
class AucProtocolReport:
    pairs: tuple
    per_target: tuple
    minimum: ClassSummary
    median: ClassSummary
    maximum: ClassSummary
    repetitions: int
    shot: int


@dataclass(frozen=True)
class AccuracyProtocolReport:
    mean_accuracy: float
    ci_half_width: float
    episode_count: int


def _map_ordered(fn, tasks, jobs):
    if jobs <= 1:
        return [fn(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def run_auc_protocol(scorer, dataset, shot, repetitions=10, seed=0, jobs=1):
    """AUC protocol against an arbitrary scorer; queries are 2*shot per side.

    Every ordered class pair is evaluated `repetitions` times with a fresh
    support set each time. Per-target summaries aggregate over all of the
    target's negatives and repetitions; the median entry is the lower median
    so it names a concrete class.
    """
    c = dataset.class_count
    if c < 2:
        raise ContractError("auc protocol needs at least 2 test classes")
    pairs = [(t, n) for t in range(c) for n in range(c) if n != t]
    tasks = [
        (pair_idx, rep)
        for pair_idx in range(len(pairs))
        for rep in range(repetitions)
    ]

    def one_task(task):
        pair_idx, rep = task
        t_pos, n_pos = pairs[pair_idx]
        task_seed = seed * len(tasks) + pair_idx * repetitions + rep
        ep = sample_pair_episode(dataset, t_pos, n_pos, shot, 2 * shot, task_seed)
        scores = scorer(ep.support, ep.queries)
        return auc(scores[: 2 * shot], scores[2 * shot:])

    values = np.asarray(_map_ordered(one_task, tasks, jobs)).reshape(
        len(pairs), repetitions
    )

    pair_results = tuple(
        PairResult(
            target_class=int(dataset.class_ids[t_pos]),
            negative_class=int(dataset.class_ids[n_pos]),
            mean_auc=float(values[i].mean()),
            std_auc=float(values[i].std(ddof=1)) if repetitions > 1 else 0.0,
        )
        for i, (t_pos, n_pos) in enumerate(pairs)
    )

    per_target = []
    for t_pos in range(c):
        rows = [i for i, (tp, _) in enumerate(pairs) if tp == t_pos]
        pool = values[rows].reshape(-1)
        per_target.append(
            ClassSummary(
                target_class=int(dataset.class_ids[t_pos]),
                mean_auc=float(pool.mean()),
                std_auc=float(pool.std(ddof=1)) if pool.size > 1 else 0.0,
            )
        )
    per_target = tuple(per_target)

    means = np.asarray([s.mean_auc for s in per_target])
    order = np.argsort(means, kind="mergesort")
    return AucProtocolReport(
        pairs=pair_results,
        per_target=per_target,
        minimum=per_target[order[0]],
        median=per_target[order[(c - 1) // 2]],
        maximum=per_target[order[-1]],
        repetitions=repetitions,
        shot=shot,
    )


def run_accuracy_protocol(scorer, dataset, shot, episodes=10000, seed=0, jobs=1):
    """Accuracy protocol against an arbitrary scorer; 10+10 queries per episode."""
    if episodes < 1:
        raise ContractError("episodes must be positive")
    config = EpisodeConfig(shot=shot, query_per_side=ACCURACY_QUERY_PER_SIDE, meta_batch=1)

    def one_episode(j):
        ep = sample_episode(dataset, config, seed * episodes + j)
        scores = scorer(ep.support, ep.queries)
        return float(np.mean((scores >= 0.5) == (ep.labels == 1.0)))

    accs = np.asarray(_map_ordered(one_episode, range(episodes), jobs))
    mean = float(accs.mean())
    half = (
        1.96 * float(accs.std(ddof=1)) / math.sqrt(episodes) if episodes > 1 else 0.0
    )
    return AccuracyProtocolReport(
        mean_accuracy=mean, ci_half_width=half, episode_count=episodes
    )


def _head_scorer(params, head, lam, tolerance):
    def scorer(support, queries):
        return score_queries(head, params, support, queries, lam=lam, tolerance=tolerance)

    return scorer


def auc_protocol(
    params,
    head,
    test_dataset,
    shot,
    repetitions=10,
    seed=0,
    lam=DEFAULT_LAMBDA,
    tolerance=DEFAULT_TOLERANCE,
    jobs=1,
):
    return run_auc_protocol(
        _head_scorer(params, head, lam, tolerance),
        test_dataset,
        shot,
        repetitions=repetitions,
        seed=seed,
        jobs=jobs,
    )


def accuracy_protocol(
    params,
    head,
    test_dataset,
    shot,
    episodes=10000,
    seed=0,
    lam=DEFAULT_LAMBDA,
    tolerance=DEFAULT_TOLERANCE,
    jobs=1,
):
    return run_accuracy_protocol(
        _head_scorer(params, head, lam, tolerance),
        test_dataset,
        shot,
        episodes=episodes,
        seed=seed,
        jobs=jobs,
    )


def auc_report_csv(report):
    """Pair rows, then a summary block; floats use repr for bit-stable output."""
    lines = ["target_class,negative_class,mean_auc,std_auc"]
    for p in report.pairs:
        lines.append(f"{p.target_class},{p.negative_class},{p.mean_auc!r},{p.std_auc!r}")
    lines.append("summary,target_class,mean_auc,std_auc")
    for tag, entry in (
        ("min", report.minimum),
        ("median", report.median),
        ("max", report.maximum),
    ):
        lines.append(f"{tag},{entry.target_class},{entry.mean_auc!r},{entry.std_auc!r}")
    return "\n".join(lines) + "\n"


def accuracy_report_csv(report):
    mean = report.mean_accuracy
    half = report.ci_half_width
    return (
        "mean,ci_low,ci_high,episodes\n"
        f"{mean!r},{mean - half!r},{mean + half!r},{report.episode_count}\n"
    )
