"""Temporal splits, ranking metrics, evaluation reports, and latency benches.

Also home to a seeded synthetic dataset generator: a latent-cluster item
space with drifting popularity, so timestamp splits naturally produce a
controllable fraction of targets unseen in training. All tests and the
bundled pipelines run on this generator; real interaction logs use the same
JSON-lines format.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import Catalog
from .engine import RecommendationList


@dataclass(frozen=True)
class Interaction:
    user: str
    item: str
    ts: int


@dataclass(frozen=True)
class EvalCase:
    history: tuple[str, ...]  # chronological external ids, truncated
    target: str
    target_unseen: bool


def load_interactions(path: str | Path) -> list[Interaction]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out.append(Interaction(rec["user"], rec["item"], int(rec["ts"])))
    return out


def save_interactions(path: str | Path, log: list[Interaction]) -> None:
    with open(path, "w") as fh:
        for r in log:
            fh.write(json.dumps({"user": r.user, "item": r.item, "ts": r.ts}) + "\n")


def temporal_split(
    log: list[Interaction],
    t_valid: int,
    t_test: int,
    max_history: int = 20,
) -> tuple[list[Interaction], list[EvalCase], list[EvalCase]]:
    """Timestamp-based split into training interactions and eval cases.

    Training keeps interactions strictly before ``t_valid``. Validation and
    test cases target interactions in ``[t_valid, t_test)`` and
    ``>= t_test``; histories may reach back into earlier periods.
    """
    if not t_valid < t_test:
        raise ValueError("t_valid must be < t_test")
    train = [r for r in log if r.ts < t_valid]
    train_items = {r.item for r in train}

    by_user: dict[str, list[Interaction]] = {}
    for r in log:
        by_user.setdefault(r.user, []).append(r)

    valid_cases: list[EvalCase] = []
    test_cases: list[EvalCase] = []
    for recs in by_user.values():
        recs.sort(key=lambda r: (r.ts, r.item))
        for i, r in enumerate(recs):
            if r.ts < t_valid or i == 0:
                continue
            history = tuple(p.item for p in recs[max(0, i - max_history) : i])
            case = EvalCase(history, r.item, target_unseen=r.item not in train_items)
            if r.ts < t_test:
                valid_cases.append(case)
            else:
                test_cases.append(case)
    return train, valid_cases, test_cases


def recall_at_k(items: list, target, k: int) -> float:
    return 1.0 if target in items[:k] else 0.0


def ndcg_at_k(items: list, target, k: int) -> float:
    """Binary-relevance, single-target NDCG: 1/log2(rank+1) inside top-k."""
    top = items[:k]
    if target not in top:
        return 0.0
    rank = top.index(target) + 1
    return 1.0 / math.log2(rank + 1)


@dataclass
class EvalReport:
    cutoffs: tuple[int, ...]
    metrics: dict = field(default_factory=dict)  # subset -> {"recall@K": ...}
    case_counts: dict = field(default_factory=dict)
    mean_iterations: float = 0.0
    mean_decode_steps: float = 0.0
    acceptance_rate_per_iteration: list[float] = field(default_factory=list)
    mean_wall_time_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "cutoffs": list(self.cutoffs),
                "metrics": self.metrics,
                "case_counts": self.case_counts,
                "mean_iterations": self.mean_iterations,
                "mean_decode_steps": self.mean_decode_steps,
                "acceptance_rate_per_iteration": self.acceptance_rate_per_iteration,
                "mean_wall_time_s": self.mean_wall_time_s,
            },
            indent=2,
            sort_keys=True,
        )

    def to_text_table(self) -> str:
        cols = [f"R@{k}" for k in self.cutoffs] + [f"N@{k}" for k in self.cutoffs]
        lines = ["subset       n      " + "  ".join(f"{c:>8}" for c in cols)]
        for subset in ("overall", "in_sample", "unseen"):
            vals = self.metrics.get(subset, {})
            cells = [
                vals.get(f"recall@{k}", float("nan")) for k in self.cutoffs
            ] + [vals.get(f"ndcg@{k}", float("nan")) for k in self.cutoffs]
            lines.append(
                f"{subset:<10}{self.case_counts.get(subset, 0):>6}  "
                + "  ".join(f"{v:8.4f}" for v in cells)
            )
        return "\n".join(lines)


def evaluate(
    run_fn,
    cases: list[EvalCase],
    catalog: Catalog,
    cutoffs: tuple[int, ...] = (10, 50),
) -> EvalReport:
    """Run ``run_fn(history_internal) -> RecommendationList`` over all cases.

    Targets missing from the catalog are skipped; the overall metrics are the
    case-count-weighted combination of the in-sample and unseen subsets.
    """
    rows = []  # (unseen, {metric: value}, rec)
    wall = []
    for case in cases:
        history = [catalog.index_of(e) for e in case.history if e in catalog._index_of]
        if not history or case.target not in catalog._index_of:
            continue
        t0 = time.perf_counter()
        rec: RecommendationList = run_fn(history)
        wall.append(time.perf_counter() - t0)
        target = catalog.index_of(case.target)
        vals = {}
        for k in cutoffs:
            vals[f"recall@{k}"] = recall_at_k(rec.items, target, k)
            vals[f"ndcg@{k}"] = ndcg_at_k(rec.items, target, k)
        rows.append((case.target_unseen, vals, rec))

    report = EvalReport(cutoffs=cutoffs)
    groups = {
        "overall": rows,
        "in_sample": [r for r in rows if not r[0]],
        "unseen": [r for r in rows if r[0]],
    }
    for name, grp in groups.items():
        report.case_counts[name] = len(grp)
        agg = {}
        for k in cutoffs:
            for metric in (f"recall@{k}", f"ndcg@{k}"):
                agg[metric] = (
                    sum(v[metric] for _, v, _ in grp) / len(grp) if grp else 0.0
                )
        report.metrics[name] = agg
    if rows:
        report.mean_iterations = sum(r.iterations_used for _, _, r in rows) / len(rows)
        report.mean_decode_steps = sum(r.decode_steps_used for _, _, r in rows) / len(rows)
        report.mean_wall_time_s = sum(wall) / len(wall)
        max_iter = max((len(r.iteration_stats) for _, _, r in rows), default=0)
        rates = []
        for i in range(max_iter):
            drafted = sum(
                r.iteration_stats[i][0] for _, _, r in rows if len(r.iteration_stats) > i
            )
            accepted = sum(
                r.iteration_stats[i][1] for _, _, r in rows if len(r.iteration_stats) > i
            )
            rates.append(accepted / drafted if drafted else 0.0)
        report.acceptance_rate_per_iteration = rates
    return report


def bench_subset_latency(
    methods: dict,
    subset_sizes: list[int],
    make_inputs,
    repetitions: int = 30,
    warmups: int = 5,
) -> list[dict]:
    """Median/p95 single-request wall time per method at each subset size.

    ``make_inputs(size, rep) -> kwargs`` builds the per-trial call arguments;
    each method is called as ``method(**kwargs)``. Warm-up runs are excluded.
    """
    rows = []
    for size in subset_sizes:
        for name, method in methods.items():
            times = []
            for rep in range(warmups + repetitions):
                kwargs = make_inputs(size, rep)
                t0 = time.perf_counter()
                method(**kwargs)
                elapsed = time.perf_counter() - t0
                if rep >= warmups:
                    times.append(elapsed)
            arr = np.array(times)
            rows.append(
                {
                    "method": name,
                    "subset_size": size,
                    "median_s": float(np.median(arr)),
                    "p95_s": float(np.percentile(arr, 95)),
                }
            )
    return rows


# -- synthetic dataset ------------------------------------------------------


@dataclass
class SyntheticDataset:
    item_ids: list[str]
    embeddings: np.ndarray
    release_ts: np.ndarray
    log: list[Interaction]
    t_valid: int
    t_test: int


def generate_synthetic(
    seed: int = 0,
    n_top: int = 24,
    n_mid: int = 4,
    n_leaf: int = 2,
    items_per_leaf: int = 6,
    n_users: int = 300,
    interactions_per_user: tuple[int, int] = (8, 30),
    dim: int = 16,
    scales: tuple[float, float, float] = (1.0, 0.35, 0.12),
    noise: float = 0.03,
    horizon: int = 1_000_000,
    fresh_bias: float = 0.6,
) -> SyntheticDataset:
    """Hierarchically clustered items with drifting popularity.

    Item embeddings follow a three-level cluster tree with decaying scales,
    so a residual quantizer recovers shared digit prefixes level by level and
    new items land in leaves alongside items seen in training. Users stick
    to a home top-level cluster and prefer recently released items with
    probability ``fresh_bias``, so the tail of the timeline is rich in
    interactions whose targets never appear before the validation cut-off.
    """
    rng = np.random.default_rng(seed)
    n_items = n_top * n_mid * n_leaf * items_per_leaf

    top_centers = rng.normal(size=(n_top, dim))
    top_centers /= np.linalg.norm(top_centers, axis=1, keepdims=True)
    mid_offsets = rng.normal(size=(n_top, n_mid, dim))
    leaf_offsets = rng.normal(size=(n_top, n_mid, n_leaf, dim))

    emb = np.empty((n_items, dim))
    top_of = np.empty(n_items, dtype=int)
    leaf_of = np.empty(n_items, dtype=int)
    idx = 0
    leaf_id = 0
    for a in range(n_top):
        for b in range(n_mid):
            for c in range(n_leaf):
                center = (
                    scales[0] * top_centers[a]
                    + scales[1] * mid_offsets[a, b]
                    + scales[2] * leaf_offsets[a, b, c]
                )
                for _ in range(items_per_leaf):
                    emb[idx] = center + noise * rng.normal(size=dim)
                    top_of[idx] = a
                    leaf_of[idx] = leaf_id
                    idx += 1
                leaf_id += 1
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    release = rng.integers(0, horizon, size=n_items)
    item_ids = [f"item{i:05d}" for i in range(n_items)]

    t_valid = int(horizon * 0.7)
    t_test = int(horizon * 0.85)

    log: list[Interaction] = []
    for u in range(n_users):
        home = int(rng.integers(n_top))
        n_inter = int(rng.integers(interactions_per_user[0], interactions_per_user[1] + 1))
        ts_points = np.sort(rng.integers(0, horizon, size=n_inter))
        members = np.flatnonzero(top_of == home)
        for ts in ts_points:
            avail = members[release[members] <= ts]
            if len(avail) == 0:
                continue
            recent = avail[release[avail] >= ts - horizon * 0.3]
            if len(recent) and rng.random() < fresh_bias:
                pick = int(rng.choice(recent))
            else:
                pick = int(rng.choice(avail))
            log.append(Interaction(f"user{u:04d}", item_ids[pick], int(ts)))
    return SyntheticDataset(item_ids, emb, release, log, t_valid, t_test)
