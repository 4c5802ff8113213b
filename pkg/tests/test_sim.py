import csv
import io
import json

import numpy as np
import pytest

from mrppsel.data import LabeledSample
from mrppsel.sim import (
    METHODS,
    ConfigError,
    FprConfig,
    SimConfig,
    bh_select,
    compare_selection_fpr,
    draw_two_groups,
    gen_mvn_ar1,
    parse_sim_config,
    replicate_p_values,
    results_csv,
    results_json,
    run_size_power,
    size_table,
    ttest_bh_baseline,
    welch_t,
)


def test_parse_config_grid():
    cfgs = parse_sim_config("""
# paper layout
n1 = 10, 20
n2 = 15, 20
R = 25, 100
nu = 0.5
reps = 7   # small
methods = MRPP_Org, Mod_2
""")
    assert len(cfgs) == 4
    assert [(c.n1, c.n2, c.R) for c in cfgs] == [(10, 15, 25), (10, 15, 100), (20, 20, 25), (20, 20, 100)]
    assert all(c.reps == 7 and c.nu == 0.5 and c.methods == ("MRPP_Org", "Mod_2") for c in cfgs)
    assert cfgs[0].rho == 0.5 and cfgs[0].shifted_dims == 4 and cfgs[0].permutations == 1000
    one = parse_sim_config("n1 = 12\nn2 = 8, 9")
    assert [(c.n1, c.n2) for c in one] == [(12, 8), (12, 9)]


@pytest.mark.parametrize("text,key", [
    ("n1 = 1", "n1"), ("rho = 1.0", "rho"), ("R = 3\nshifted_dims = 4", "shifted_dims"),
    ("reps = 0", "reps"), ("alpha = 2", "alpha"), ("methods = Mod_3", "methods"),
    ("bogus = 1", "bogus"), ("reps = many", "reps"), ("seed = 1, 2", "seed"),
    ("n1 = 2, 3, 4\nn2 = 5, 6", "n1"), ("permutations = 1", "permutations")])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_sim_config(text)


def test_ar1_moments():
    rng = np.random.default_rng(0)
    n = 200_000
    X = gen_mvn_ar1(n, 3, 0.5, None, rng)
    C = np.corrcoef(X, rowvar=False)
    np.testing.assert_allclose(C[0], [1, 0.5, 0.25], atol=0.01)
    np.testing.assert_allclose(X.var(axis=0, ddof=1), 1.0, rtol=0.05)
    mu = np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0])
    Y = gen_mvn_ar1(n, 6, 0.5, mu, rng)
    se = Y.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(Y.mean(axis=0) - mu) <= 4 * se)
    np.testing.assert_allclose(Y.var(axis=0, ddof=1), 1.0, rtol=0.05)
    Z = gen_mvn_ar1(n, 4, 0.0, None, rng)
    np.testing.assert_allclose(np.cov(Z, rowvar=False), np.eye(4), atol=0.01)
    with pytest.raises(ValueError):
        gen_mvn_ar1(5, 2, 1.0)


def test_draw_two_groups_shape():
    cfg = SimConfig(n1=3, n2=5, R=6, nu=10.0)
    s = draw_two_groups(cfg, np.random.default_rng(1))
    assert s.values.shape == (8, 6) and s.group_sizes == (3, 5)
    assert s.values[3:, :4].mean() > 5 and abs(s.values[:3].mean()) < 5


def test_bh_hand_example():
    assert bh_select([0.001, 0.013, 0.04, 0.8], 0.05) == [0, 1]
    assert bh_select([1.0, 1.0, 1.0]) == []
    assert bh_select([0.04, 0.8, 0.013, 0.001], 0.05) == [2, 3]
    with pytest.raises(ValueError):
        bh_select([0.1], 0)


def test_welch_examples():
    X = np.array([[1.0, 2.0, 5.0], [3.0, 4.0, 5.0], [1.0, 6.0, 7.0], [3.0, 9.0, 7.0]])
    s = LabeledSample(X, [0, 0, 1, 1])
    t, p = welch_t(s)
    assert t[0] == 0.0 and p[0] == 1.0
    assert p[2] == 0.0
    res = ttest_bh_baseline(s)
    assert 0 not in res.selected
    with pytest.raises(ValueError):
        welch_t(LabeledSample(np.zeros((6, 1)), [0, 0, 1, 1, 2, 2]))


def test_welch_matches_formula():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(7, 3)), rng.normal(1, 2, size=(9, 3))
    s = LabeledSample(np.vstack([a, b]), [0] * 7 + [1] * 9)
    t, _ = welch_t(s)
    va, vb = a.var(axis=0, ddof=1) / 7, b.var(axis=0, ddof=1) / 9
    np.testing.assert_allclose(t, (a.mean(0) - b.mean(0)) / np.sqrt(va + vb), rtol=1e-12)


def test_replicates_deterministic_and_order_free():
    cfg = SimConfig(n1=6, n2=6, R=5, reps=4, permutations=60, seed=3,
                    methods=("MRPP_Org", "Mod_2", "Mod_S(L)"))
    a = replicate_p_values(cfg, 2)
    replicate_p_values(cfg, 0)
    np.testing.assert_array_equal(a, replicate_p_values(cfg, 2))
    r1 = run_size_power(cfg)
    r2 = run_size_power(cfg, n_jobs=2)
    np.testing.assert_array_equal(r1.p_values, r2.p_values)
    assert results_json([r1]) == results_json([r2])
    assert results_csv([r1]) == results_csv([r2])
    np.testing.assert_array_equal(r1.p_values[2], a)


def test_result_summaries():
    cfg = SimConfig(n1=5, n2=5, R=4, reps=20, permutations=40, seed=1, methods=("MRPP_Org", "Mod_2"))
    res = run_size_power(cfg)
    rej = (res.p_values <= cfg.alpha).mean(axis=0)
    np.testing.assert_array_equal(res.rates, rej)
    np.testing.assert_allclose(res.se, np.sqrt(rej * (1 - rej) / cfg.reps))
    assert np.all((0 <= res.rates) & (res.rates <= 1))
    rows = list(csv.DictReader(io.StringIO(results_csv([res]))))
    assert [r["method"] for r in rows] == ["MRPP_Org", "Mod_2"]
    assert float(rows[1]["rate"]) == res.rate("Mod_2")
    d = json.loads(results_json([res]))
    assert d[0]["config"]["n1"] == 5 and "wall_clock" not in json.dumps(d)
    assert "MRPP_Org" in size_table([res])


def test_methods_table():
    assert set(METHODS) == {"MRPP_Org", "Mod_S(L)", "Mod_2", "Mod_4", "Mod_8", "Mod_16", "Mod_sqrtR"}


def test_null_rates_valid():
    cfg = SimConfig(n1=8, n2=8, R=6, reps=200, permutations=100, seed=5,
                    methods=("MRPP_Org", "Mod_2"))
    res = run_size_power(cfg)
    bound = cfg.alpha + 3 * np.sqrt(cfg.alpha * (1 - cfg.alpha) / cfg.reps)
    assert np.all(res.rates <= bound)


def test_fpr_null_is_random_selection():
    cfg = FprConfig(nu=0.0, reps=150, seed=2)
    res = compare_selection_fpr(cfg)
    expect = (cfg.R - cfg.signal) / cfg.R
    # four picks per rep, hypergeometric-ish; binomial SE is a safe upper bound
    se = np.sqrt(expect * (1 - expect) / (cfg.signal * cfg.reps))
    for m in res.fpr:
        assert abs(res.fpr[m] - expect) <= 4 * se


def test_fpr_strong_signal_is_zero():
    res = compare_selection_fpr(FprConfig(nu=12.0, reps=20, seed=4))
    assert res.fpr == {"ttest_bh": 0.0, "backward_select": 0.0}
    assert res.recovery == {"ttest_bh": 1.0, "backward_select": 1.0}


def test_fpr_errors_and_determinism():
    with pytest.raises(ConfigError):
        FprConfig(R=3, signal=4)
    with pytest.raises(ValueError):
        compare_selection_fpr(FprConfig(reps=2), methods=("limma",))
    cfg = FprConfig(reps=12, seed=9)
    assert compare_selection_fpr(cfg) == compare_selection_fpr(cfg, n_jobs=2)
