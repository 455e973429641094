import numpy as np
import pytest
from scipy import stats as sps

from ccbench.checks import welch_reference
from ccbench.experiment import CSV_HEADER, format_row, performance_from_rows, read_progress
from ccbench.stats import best_index, bold_set, selection_score, welch_t_test
from ccbench.table import build_table, collect, table_from_dir


def test_welch_textbook_example():
    t, dof, p = welch_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
    assert t == pytest.approx(-1.0) and dof == pytest.approx(8.0)
    ref = sps.ttest_ind([1, 2, 3, 4, 5], [2, 3, 4, 5, 6], equal_var=False)
    assert p == pytest.approx(ref.pvalue, rel=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_welch_matches_two_oracles(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(0, rng.uniform(0.2, 3), rng.integers(2, 10))
    b = rng.normal(1, rng.uniform(0.2, 3), rng.integers(2, 10))
    t, dof, p = welch_t_test(a, b)
    rt, rdof, rp = welch_reference(a, b)
    assert abs(t - rt) < 1e-9 and abs(dof - rdof) < 1e-9 * max(1, rdof) and abs(p - rp) < 1e-9
    assert p == pytest.approx(sps.ttest_ind(a, b, equal_var=False).pvalue, abs=1e-12)


def test_welch_symmetry_and_degenerate_cases():
    a, b = [1.0, 4.0, 2.0], [0.5, 0.1, 0.3, 0.9]
    t1, d1, p1 = welch_t_test(a, b)
    t2, d2, p2 = welch_t_test(b, a)
    assert t1 == -t2 and d1 == d2 and p1 == p2
    assert welch_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])[::2] == (0.0, 1.0)
    assert welch_t_test([2.0, 2.0], [2.0, 2.0])[2] == 1.0
    t, _, p = welch_t_test([2.0, 2.0], [3.0, 3.0])
    assert p == 0.0 and t == -np.inf
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])


def test_selection_score_uses_population_std():
    assert selection_score([2, 4, 4, 4, 5, 5, 7, 9]) == pytest.approx(5.0 - 2.0)
    assert selection_score([-3.0, 13.0]) == pytest.approx(5 - 8)
    with pytest.raises(ValueError):
        selection_score([])


def test_best_index_ties_and_failures():
    assert best_index([1.0, 3.0, 3.0]) == 1
    assert best_index([None, float("nan"), 2.0]) == 2
    with pytest.raises(ValueError):
        best_index([None, float("inf") * 0])


def test_bold_set_rules():
    assert bold_set({"a": [1.0, 2.0]}) == ("a", {"a"})
    same = [1.0, 2.0, 3.0]
    assert bold_set({"a": same, "b": list(same)}) == ("a", {"a", "b"})
    best, bold = bold_set({"a": [0.0, 0.1, 0.2], "b": [10.0, 10.1, 10.2]})
    assert best == "b" and bold == {"b"}
    best, bold = bold_set({"a": [5.0], "b": [4.0, 4.5]})
    assert best == "a" and bold == {"a"}


def _write_run(root, task, algo, seeds_returns):
    for seed, rows in seeds_returns.items():
        d = root / task / algo / f"seed{seed}"
        d.mkdir(parents=True)
        lines = [CSV_HEADER] + [format_row(seed, i, r, None, 100, 0) for i, r in enumerate(rows)]
        (d / "progress.csv").write_text("\n".join(lines) + "\n")


def test_table_values_follow_the_csv_rows(tmp_path):
    _write_run(tmp_path, "cartpole", "trpo", {0: [[1.0, 3.0], [5.0]], 1: [[2.0], [2.0, 2.0]]})
    _write_run(tmp_path, "cartpole", "random", {0: [[0.0], [0.1]], 1: [[0.2], [0.0]]})
    _write_run(tmp_path, "acrobot", "random", {0: [[-1.0]], 1: [[-2.0]]})
    found = collect(tmp_path)
    assert found[("cartpole", "trpo")] == [3.0, 2.0]
    for (task, algo), perfs in found.items():
        for s, v in enumerate(perfs):
            rows = read_progress(tmp_path / task / algo / f"seed{s}" / "progress.csv")
            assert v == performance_from_rows(rows)
    table = build_table(found)
    assert table.algorithms == ["random", "trpo"]
    text = table.render_text()
    assert "N/A" in text.splitlines()[1]  # acrobot has no TRPO entry
    assert "**2.5 ± 0.5**" in text
    csv_text = table_from_dir(tmp_path).render_csv()
    assert "cartpole,trpo,2.5,0.5,2,1" in csv_text
    assert "acrobot,trpo,N/A,N/A,0,0" in csv_text


def test_table_skips_seeds_without_episodes(tmp_path):
    _write_run(tmp_path, "cartpole", "trpo", {0: [[]], 1: [[4.0]]})
    assert collect(tmp_path)[("cartpole", "trpo")] == [4.0]
    with pytest.raises(ValueError):
        build_table({})
