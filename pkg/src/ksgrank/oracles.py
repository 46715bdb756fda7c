"""Brute-force reference implementations used by ``selftest`` and the tests.

These trade speed for obviousness: all-pairs distances by Floyd-Warshall,
the partition procedure transcribed step by step, metrics recomputed from
their definitions.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def all_pairs_distances(n: int, edges) -> np.ndarray:
    """Directed hop distances; ``inf`` where unreachable.  Self-loops are ignored."""
    dist = np.full((n, n), math.inf)
    np.fill_diagonal(dist, 0.0)
    for u, v in edges:
        if u != v:
            dist[u, v] = 1.0
    for k in range(n):
        dist = np.minimum(dist, dist[:, [k]] + dist[[k], :])
    return dist


def literal_partition(n: int, triples, root: int, answers=(), literal_labels: bool = False) -> list[dict]:
    """The partition procedure written out directly.

    For each shortest path from ``root`` (target order = node id) whose
    target has children that are all leaves, emit the path plus those
    children.  The shortest path to v goes through the smallest-id
    predecessor one hop closer to the root.  Returns dicts with
    ``anchor``, ``nodes`` (path then children), ``edges`` and ``label``.
    """
    triples = [tuple(t) for t in triples]
    dist = all_pairs_distances(n, [(s, o) for s, _, o in triples])[root]
    reach = [v for v in range(n) if dist[v] < math.inf]
    parent = {}
    for v in reach:
        if v == root:
            continue
        preds = [s for s, _, o in triples if o == v and s != v and dist[s] == dist[v] - 1]
        parent[v] = min(preds)

    def children(u):
        return sorted(v for v in parent if parent[v] == u)

    def path(v):
        out = [v]
        while out[-1] != root:
            out.append(parent[out[-1]])
        return out[::-1]

    answer_reachable = any(dist[a] < math.inf for a in answers)
    result = []
    for target in reach:
        kids = children(target)
        if not kids or any(children(c) for c in kids):
            continue
        p = path(target)
        edges = []
        for u, v in zip(p, p[1:]):
            edges += sorted(t for t in triples if t[0] == u and t[2] == v)
        for c in kids:
            edges += sorted(t for t in triples if t[0] == target and t[2] == c)
        nodes = p + kids
        label = int(answer_reachable) if literal_labels else int(any(a in nodes for a in answers))
        result.append({"anchor": target, "nodes": nodes, "edges": edges, "label": label})
    return result


def random_digraph(rng: np.random.Generator, max_nodes: int = 30, max_edges: int = 60,
                   n_relations: int = 4) -> tuple[int, list[tuple[int, int, int]]]:
    n = int(rng.integers(1, max_nodes + 1))
    m = int(rng.integers(0, max_edges + 1))
    triples = {(int(rng.integers(n)), int(rng.integers(n_relations)), int(rng.integers(n))) for _ in range(m)}
    return n, sorted(triples)


def brute_recall(lists: dict, k: int) -> float:
    kept = [labels for labels in lists.values() if 1 in labels]
    if not kept:
        return 0.0
    hits = 0
    for labels in kept:
        first = labels.index(1) + 1
        hits += first <= k
    return hits / len(kept)


def brute_mrr(lists: dict, mode: str = "first") -> float:
    kept = [labels for labels in lists.values() if 1 in labels]
    if not kept:
        return 0.0
    total = Fraction(0)
    for labels in kept:
        positions = [i + 1 for i, y in enumerate(labels) if y == 1]
        if mode == "first":
            total += Fraction(1, positions[0])
        else:
            total += sum(Fraction(1, p) for p in positions) / len(positions)
    return float(total / len(kept))


def random_ranked_lists(rng: np.random.Generator, n_questions: int = 1000, max_len: int = 30) -> dict:
    """Labels in the order induced by random scores; some lists have no positive."""
    lists = {}
    for q in range(n_questions):
        size = int(rng.integers(1, max_len + 1))
        labels = (rng.random(size) < rng.random()).astype(int)
        scores = rng.random(size)
        lists[f"q{q}"] = [int(labels[i]) for i in np.argsort(-scores, kind="stable")]
    return lists
