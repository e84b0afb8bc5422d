"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (printed live and repeated in the
terminal summary). The ensemble-based criteria share one 50-run baseline
ensemble per session; set BISTABLE_LOB_CACHE to a directory to reuse
simulated ensembles between sessions.
"""

import json
import time

import numpy as np
import pytest

from bistable_lob import cli
from bistable_lob.classify import LogisticModel, compare_models
from bistable_lob.dynamics import (EmbeddingSpec, approx_entropy, correlation_dimension,
                                   lyapunov_rosenstein, sample_entropy)
from bistable_lob.ensemble import Label
from bistable_lob.errors import AnalysisError
from bistable_lob.hmm import HmmParams, best_permutation, fit_baum_welch, sample, trajectory_observations
from bistable_lob.market import Market, MarketConfig, expected_price_change
from bistable_lob.separatrix import SeparatrixInput, all_estimates
from bistable_lob.stats import adf_test, anderson_darling_normal, mann_whitney_u

pytestmark = pytest.mark.slow

AD_SEEDS = (2025, 2026, 2027, 2028, 2029)


def test_c01_conservation(criterion):
    cfg = MarketConfig(seed=11)
    market = Market(cfg)
    money0 = 174 * 10_000 / cfg.price_tick
    worst = 0
    ok = True
    start = time.perf_counter()
    for _ in range(cfg.horizon):
        market.step()
        ok &= market.total_money == money0 and market.total_shares == 200_000
        worst = min(worst, int(market.money.min()), int(market.shares.min()))
    elapsed = time.perf_counter() - start
    passed = ok and worst >= 0 and elapsed <= 60
    criterion(1, passed, f"money={market.total_money * cfg.price_tick:.2f} "
                         f"shares={market.total_shares} min_holding={worst} run={elapsed:.1f}s")


def _drift_sample(reps, n_asks, n_bids, price, sigma, seed):
    cfg = MarketConfig(n_traders=n_asks + n_bids, horizon=1, initial_price=price, sigma=sigma)
    rng = np.random.default_rng(seed)
    last, first = np.empty(reps), np.empty(reps)
    for r in range(reps):
        m = Market(cfg)
        noise = np.concatenate([rng.uniform(0, sigma, n_bids), -rng.uniform(0, sigma, n_asks)])
        m.step(noise=noise, order=rng.permutation(cfg.n_traders))
        last[r] = m.close - price
        first[r] = (m.last_trades[0].price - price) if len(m.last_trades) else 0.0
    return last, first


def test_c02_drift_oracle(criterion):
    price, sigma, na, nb = 10.0, 0.15, 2, 8
    last, _ = _drift_sample(10_000, na, nb, price, sigma, seed=2)
    oracle = expected_price_change(price, na, nb, sigma)
    se = last.std(ddof=1) / np.sqrt(last.size)
    z = (last.mean() - oracle) / se
    criterion(2, abs(z) <= 3, f"mean dP={last.mean():.4f} oracle={oracle:.4f} se={se:.4f} z={z:.1f}")


def test_c03_bimodality(criterion, baseline_ensemble, ensemble_factory):
    start = time.perf_counter()
    ens = baseline_ensemble
    n = len(ens)
    zero = ens.indices(Label.REACHED_ZERO)
    pos = ens.indices(Label.POSITIVE)
    frac = len(zero) / n
    term = np.array([ens.trajectories[i].close[-1] for i in pos])
    accepted = []
    for seed in AD_SEEDS:
        e = ensemble_factory(seed)
        t = [e.trajectories[i].close[-1] for i in e.indices(Label.POSITIVE)]
        accepted.append(not anderson_darling_normal(t).extra["reject_5pct"])
    elapsed = time.perf_counter() - start
    passed = (len(zero) > 0 and len(pos) > 0 and 0.10 <= frac <= 0.90
              and 3.5 <= term.mean() <= 8.7 and sum(accepted) >= 3)
    criterion(3, passed, f"zero={len(zero)} positive={len(pos)} frac_zero={frac:.2f} "
                         f"pos_terminal_mean={term.mean():.3f} AD_not_rejected={sum(accepted)}/5 "
                         f"(ensemble time incl. replications {elapsed:.0f}s)")


def test_c04_separatrix(criterion, baseline_ensemble):
    inp = SeparatrixInput.from_ensemble(baseline_ensemble)
    values = [e.value for e in all_estimates(inp)]
    spread = max(values) - min(values)
    passed = spread <= 0.5 and all(2.5 <= v <= 5.0 for v in values)
    criterion(4, passed, "estimates=" + ",".join(f"{v:.3f}" for v in values)
              + f" spread={spread:.3f} t_c={inp.t_c}")


def _logistic_series(n=5000, x0=0.1234):
    x = np.empty(n)
    x[0] = x0
    for i in range(1, n):
        x[i] = 4.0 * x[i - 1] * (1.0 - x[i - 1])
    return x


def test_c05_chaos_oracles(criterion):
    start = time.perf_counter()
    lle = lyapunov_rosenstein(_logistic_series(), EmbeddingSpec(2, 1), k_max=30, fit_window=(0, 8)).lam
    line = correlation_dimension(np.linspace(0.0, 1.0, 1000), EmbeddingSpec(2, 1)).fitted_slope
    noise = correlation_dimension(np.random.default_rng(5).uniform(size=2000), EmbeddingSpec(2, 1)).fitted_slope
    const = np.full(500, 3.0)
    c_ap, c_se = approx_entropy(const), sample_entropy(const)
    per = sample_entropy(np.tile([0.0, 1.0], 500), 2, 0.1)
    elapsed = time.perf_counter() - start
    passed = (abs(lle - np.log(2)) <= 0.1 and abs(line - 1) <= 0.1 and abs(noise - 2) <= 0.2
              and c_ap == 0 and c_se == 0 and per == 0 and elapsed <= 30)
    criterion(5, passed, f"lle={lle:.3f} D2_line={line:.3f} D2_noise={noise:.3f} "
                         f"const_apen={c_ap} const_sampen={c_se} periodic_sampen={per} time={elapsed:.1f}s")


def _mean_of(values):
    v = [x for x in values if x is not None]
    return (float(np.mean(v)) if v else float("nan")), len(v)


def test_c06_reference_band_diagnostics(criterion, baseline_ensemble):
    d2s, ses, lles = [], [], []
    for traj in baseline_ensemble.trajectories:
        x = traj.close
        try:
            d2s.append(correlation_dimension(x, EmbeddingSpec(4, 500)).fitted_slope)
        except AnalysisError:
            d2s.append(None)
        try:
            ses.append(sample_entropy(x))
        except AnalysisError:
            ses.append(None)
        try:
            lles.append(lyapunov_rosenstein(x, EmbeddingSpec(4, 250)).lam)
        except AnalysisError:
            lles.append(None)
    d2, nd = _mean_of(d2s)
    se, ns = _mean_of(ses)
    ll, nl = _mean_of(lles)
    ok_d2 = 0.7 <= d2 <= 1.05
    ok_se = 0.001 <= se <= 0.016
    ok_ll = 1e-4 <= ll <= 4e-4
    criterion(6, ok_d2 and ok_se and ok_ll,
              f"D2(m=4,tau=500)={d2:.3f} [{'ok' if ok_d2 else 'out'}; {nd} fits] "
              f"SampEn={se:.4f} [{'ok' if ok_se else 'out'}] "
              f"LLE(m=4,tau=250)={ll:.2e} [{'ok' if ok_ll else 'out'}; {nl} runs]")


def test_c07_classifiers(criterion, baseline_ensemble):
    res = compare_models(baseline_ensemble, stride=10)
    lacc = res["logistic"]["test"]["accuracy"]
    gacc = res["gbm"]["test"]["accuracy"]
    c = res["logistic"]["coefficients"]
    signs = c["bias"] < 0 and c["w_price"] > 0 and c["w_time"] > 0
    published = LogisticModel(np.array([1.1029, 5.6285]), -7.2757)
    p50 = published.price_at_half(0.14)
    passed = gacc >= lacc and signs and abs(p50 - 5.88) <= 0.01
    criterion(7, passed, f"gbm_acc={gacc:.3f} logistic_acc={lacc:.3f} "
                         f"coef(b={c['bias']:.3f}, w_P={c['w_price']:.3f}, w_t={c['w_time']:.3f}) "
                         f"published_P50(t=0.14)={p50:.4f}")


def test_c08_hmm(criterion, baseline_ensemble):
    truth = HmmParams([[0.95, 0.05], [0.10, 0.90]], [[0.0, 0.0], [5.0, -4.0]],
                      [[1.0, 1.0], [1.0, 2.0]], [0.5, 0.5])
    _, obs = sample(truth, 20_000, np.random.default_rng(8))
    fit = fit_baum_welch(obs, seed=1)
    est = fit.params.permuted(best_permutation(fit.params, truth))
    mean_err = np.abs(est.means - truth.means)
    # relative 5% on non-zero means; zero means are judged on the same absolute scale
    mean_ok = bool(np.all(mean_err <= 0.05 * np.maximum(np.abs(truth.means), 1.0)))
    trans_ok = bool(np.all(np.abs(est.transition - truth.transition) <= 0.03))
    mono = bool(np.all(np.diff(fit.log_likelihood_trace) >= -1e-8))

    seqs = [trajectory_observations(t) for t in baseline_ensemble.trajectories]
    ens_fit = fit_baum_welch(seqs, seed=0)
    mono &= bool(np.all(np.diff(ens_fit.log_likelihood_trace) >= -1e-8))
    p = ens_fit.params
    self_ok = bool(np.all(np.diag(p.transition) > 0.99))
    quiet = int(np.argmin(p.variances[:, 0]))
    quiet_ok = abs(p.means[quiet, 0]) < 0.01 and p.variances[quiet, 0] < 1e-6
    passed = mean_ok and trans_ok and mono and self_ok and quiet_ok
    criterion(8, passed, f"synthetic max|dmu|={mean_err.max():.3f} "
                         f"max|dA|={np.abs(est.transition - truth.transition).max():.4f} "
                         f"EM_monotone={mono} ensemble_self_transitions="
                         f"{np.round(np.diag(p.transition), 5).tolist()} quiet_state_mean_dP="
                         f"{p.means[quiet, 0]:.2e} var={p.variances[quiet, 0]:.1e}")


def test_c09_stat_calibration(criterion):
    rng = np.random.default_rng(9)
    rw_keep = sum(adf_test(np.cumsum(rng.standard_normal(2000))).p_value > 0.05 for _ in range(100))
    wn_rej = sum(adf_test(rng.standard_normal(2000)).p_value < 0.05 for _ in range(100))
    ad_keep = sum(not anderson_darling_normal(rng.standard_normal(200)).extra["reject_5pct"]
                  for _ in range(200))
    ad_rej = sum(anderson_darling_normal(rng.uniform(size=200)).extra["reject_5pct"] for _ in range(200))
    mw = mann_whitney_u([1, 2, 3], [10, 11, 12]).p_value
    passed = rw_keep >= 90 and wn_rej >= 99 and ad_keep >= 180 and ad_rej >= 180 and mw == 0.1
    criterion(9, passed, f"ADF size {rw_keep}/100 keep, power {wn_rej}/100 reject; "
                         f"AD size {ad_keep}/200 keep, power {ad_rej}/200 reject; MWU exact p={mw}")


def test_c10_pipeline_determinism(criterion, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_traders": 400, "horizon": 1500}))
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["pipeline", "--config", str(cfg), "--runs", "4", "--seed", "31",
                         "--out", str(out), "--tau", "50,250"])
        assert code == 0
        outs.append(out)
    csvs = sorted(p.name for p in (outs[0] / "ensemble").glob("run_*.csv"))
    same_csv = all((outs[0] / "ensemble" / n).read_bytes() == (outs[1] / "ensemble" / n).read_bytes()
                   for n in csvs)
    same_report = (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()
    criterion(10, same_csv and same_report and len(csvs) == 4,
              f"{len(csvs)} trajectory CSVs identical={same_csv}, report.json identical={same_report}")
