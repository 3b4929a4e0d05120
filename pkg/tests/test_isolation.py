import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpi.errors import ConfigError, DimensionError
from dpi.isolation import (
    GroupingPlan,
    SimilarityMatrix,
    UnionFind,
    build_grouping,
    frozen_set,
    jaccard,
    order_stages,
    similarity_matrix,
)
from dpi.param_core import CoreRegion

import oracles


def R(idx, dim=10, tid="t"):
    return CoreRegion(np.array(sorted(idx), dtype=np.int64), dim, tid)


def test_jaccard_examples():
    assert jaccard(R({1, 2, 3}), R({1, 2, 3})) == 1.0
    assert jaccard(R({1, 2}), R({3, 4})) == 0.0
    assert jaccard(R({1, 2, 3}), R({2, 3, 4})) == 0.5
    with pytest.raises(DimensionError):
        jaccard(R({1}), R({1}, dim=11))
    with pytest.raises(ValueError):
        jaccard(R(set()), R(set()))


def test_similarity_matrix_examples():
    S = similarity_matrix([R({1, 2}, tid="A"), R({1, 2}, tid="B")])
    assert S.values.tolist() == [[1.0, 1.0], [1.0, 1.0]]
    assert S["A", "B"] == 1.0
    S = similarity_matrix([R({i}, tid=str(i)) for i in range(4)])
    assert np.array_equal(S.values, np.eye(4))
    with pytest.raises(DimensionError):
        similarity_matrix([R({1}), R({1}, dim=12)])


def random_regions(rng, n, dim):
    out = []
    for i in range(n):
        k = int(rng.integers(1, dim + 1))
        out.append(R(set(rng.choice(dim, size=k, replace=False).tolist()), dim, f"T{i}"))
    return out


def test_similarity_and_components_vs_oracles():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n, dim = int(rng.integers(1, 11)), int(rng.integers(1, 25))
        regions = random_regions(rng, n, dim)
        S = similarity_matrix(regions)
        sets = [r.as_set() for r in regions]
        for i in range(n):
            for j in range(n):
                assert S.values[i, j] == oracles.jaccard_sets(sets[i], sets[j])
        tau = float(rng.choice([0.0, 0.1, 0.25, 0.5, 1.0, rng.random()]))
        groups = build_grouping(S, tau)
        expected = oracles.components_closure(n, oracles.threshold_edges(S.values.tolist(), tau))
        assert groups == [tuple(f"T{i}" for i in comp) for comp in expected]


def test_grouping_examples():
    S = SimilarityMatrix(np.array([[1, 0.2, 0.01], [0.2, 1, 0.3], [0.01, 0.3, 1]]), ("A", "B", "C"))
    assert build_grouping(S, 0.0) == [("A", "B", "C")]
    assert build_grouping(S, 1.0) == [("A",), ("B",), ("C",)]
    assert build_grouping(S, 0.25) == [("A",), ("B", "C")]
    for tau in (-0.1, 1.5):
        with pytest.raises(ConfigError) as exc:
            build_grouping(S, tau)
        assert exc.value.field == "tau"


def _refines(fine, coarse):
    owner = {t: i for i, g in enumerate(coarse) for t in g}
    return all(len({owner[t] for t in g}) == 1 for g in fine)


@settings(max_examples=150)
@given(st.integers(2, 8), st.integers(0, 2**31), st.floats(0, 1), st.floats(0, 1))
def test_raising_tau_only_refines(n, seed, t1, t2):
    rng = np.random.default_rng(seed)
    regions = random_regions(rng, n, 12)
    S = similarity_matrix(regions)
    lo, hi = sorted((t1, t2))
    assert _refines(build_grouping(S, hi), build_grouping(S, lo))


def test_union_find_components_order():
    uf = UnionFind(5)
    uf.union(4, 1)
    uf.union(3, 0)
    assert uf.components() == [[0, 3], [1, 4], [2]]


def test_order_stages_examples():
    regions = {
        "A": R(set(range(10)), 40, "A"),
        "B": R(set(range(10, 40)), 40, "B"),
        "C": R({0, 1}, 40, "C"),
    }
    plan = order_stages([("A",), ("B",)], regions)
    assert plan.stages == [("B",), ("A",)]
    assert order_stages([("A", "C")], regions).K == 1
    tie = {"A": R({0, 1}, 10, "A"), "B": R({2, 3}, 10, "B"), "C": R({4, 5}, 10, "C")}
    assert order_stages([("C",), ("B",), ("A",)], tie).stages == [("A",), ("B",), ("C",)]
    # the tie rule can follow suite order instead of string order
    assert order_stages([("A",), ("C",)], tie, task_order=["C", "A", "B"]).stages == [("C",), ("A",)]


def test_frozen_set_examples():
    plan = GroupingPlan([("A",), ("B",)], 0.1, {"A": R({1, 2}, tid="A"), "B": R({2, 3}, tid="B")})
    assert len(frozen_set(plan, 1)) == 0
    assert frozen_set(plan, 2).indices.tolist() == [1, 2]
    assert frozen_set(plan, 3).indices.tolist() == [1, 2, 3]
    for k in (0, 4):
        with pytest.raises(IndexError):
            frozen_set(plan, k)


def test_frozen_sets_grow_monotonically():
    rng = np.random.default_rng(2)
    regions = {r.task_id: r for r in random_regions(rng, 6, 30)}
    plan = GroupingPlan([(t,) for t in regions], 0.1, regions)
    prev = set()
    for k in range(1, plan.K + 2):
        cur = set(frozen_set(plan, k).indices.tolist())
        assert prev <= cur
        prev = cur


def test_plan_invariant_checks():
    regions = {"A": R({1, 2}, tid="A"), "B": R({1, 2}, tid="B"), "C": R({7}, tid="C")}
    S = similarity_matrix(list(regions.values()))
    ok = order_stages(build_grouping(S, 0.1), regions, 0.1, similarity=S)
    ok.check_invariants()
    bad = GroupingPlan([("A",), ("B", "C")], 0.1, regions, similarity=S)
    with pytest.raises(AssertionError):
        bad.check_invariants()


def test_plan_json(tmp_path):
    regions = {"A": R({1, 2}, tid="A")}
    plan = GroupingPlan([("A",)], 0.1, regions, p=5.0)
    text = plan.write_json(tmp_path / "plan.json").read_text()
    assert '"stages": [\n    [\n      "A"' in text and '"p": 5.0' in text
