"""Acceptance gate: ten quantitative criteria, one test (and one printed
PASS/FAIL line) per criterion.  Tolerances and runtime budgets are pinned
here and nowhere else; run with ``pytest -v`` to get the per-criterion lines
from the test names as well.
"""

import math
import time
import tracemalloc

import numpy as np
import pytest

from rcov.corruption import (
    CorruptionSpec,
    corrupt,
    estimate_goodness,
    sample_gaussian,
    tensor_covariance_check,
)
from rcov.estimator import (
    EstimatorConfig,
    mahalanobis_error,
    robust_covariance,
)
from rcov.prune import naive_prune
from rcov.score_oracle import OracleParams, approximate_score, exact_score
from rcov.tensor_linalg import ZOps, symmetric_basis
from rcov.testing import dense_m, dense_z

XLOG = lambda e: e * math.log(1.0 / e)  # noqa: E731


def report(num, name, ok, detail):
    print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------


def test_criterion_01_matvec_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(200):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 5))
        n = int(rng.integers(1, 9))
        Y = rng.standard_normal((d, n))
        w = rng.uniform(0.1, 1.0, size=n)
        v = rng.standard_normal(d * d)
        x = rng.standard_normal(n)

        ops = ZOps(Y)
        Zd = dense_z(Y)
        Md = dense_m(Y, w)
        zmag = float(np.linalg.norm(Zd))

        # The denominator floor is the operand magnitude at machine precision,
        # so instances whose exact result is the zero vector (e.g. n=1, where
        # the centered second moment vanishes) register as agreement rather
        # than as a 0/0 artifact.
        for got, want, mag in (
            (ops.z_matvec(x), Zd @ x, zmag * np.linalg.norm(x)),
            (ops.z_transpose_matvec(v), Zd.T @ v, zmag * np.linalg.norm(v)),
            (ops.m_handle(w)(v), Md @ v, zmag**2 * np.linalg.norm(v)),
        ):
            scale = max(float(np.linalg.norm(want)), 1e-14 * mag, 1e-300)
            worst = max(worst, float(np.linalg.norm(got - want)) / scale)
    wall = time.perf_counter() - start
    ok = worst <= 1e-10 and wall < 5.0
    report(1, "matvec oracle equivalence",
           ok, f"200 instances, worst rel err {worst:.2e}, wall {wall:.2f}s")


def test_criterion_02_score_oracle_accuracy():
    start = time.perf_counter()
    good = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        Y = sample_gaussian(3, 30, np.eye(3), seed=seed)
        hist = [np.ones(30)]
        ok = True
        for t in (0, 1, 2):
            if t > 0:
                hist.append(hist[-1] * rng.uniform(0.7, 1.0, 30))
            alpha = 0.05 * t
            ap = approximate_score(Y, hist[: t + 1], alpha, OracleParams(seed=seed))
            ex = exact_score(Y, hist[: t + 1], alpha)
            ok = ok and bool(
                np.abs(ap.tau / ex.tau - 1.0).max() <= 0.1
                and abs(ap.lam / ex.lam - 1.0) <= 0.1
                and abs(ap.q - ex.q) <= 0.1 * abs(ex.q) + 0.05 * ex.lam
            )
        good += ok
    wall = time.perf_counter() - start
    ok = good >= 95 and wall < 60.0
    report(2, "score oracle accuracy",
           ok, f"{good}/100 seeds within tolerance, wall {wall:.1f}s")


def test_criterion_03_tensor_covariance_fact():
    start = time.perf_counter()
    dev_iso = tensor_covariance_check(np.eye(2), 200000, seed=0)
    dev_off = tensor_covariance_check(
        np.diag([1.1, 1.0]), 200000, seed=1, reference=np.eye(2)
    )
    wall = time.perf_counter() - start
    ok = dev_iso <= 0.15 and dev_off <= 0.6 + 0.15 and wall < 30.0
    report(3, "tensored second-moment fact",
           ok, f"identity dev {dev_iso:.3f} (<=0.15), "
               f"perturbed dev {dev_off:.3f} (<=0.75), wall {wall:.1f}s")


def test_criterion_04_prune_soundness():
    start = time.perf_counter()
    failures = 0
    for seed in range(500):
        rng = np.random.default_rng(10_000 + seed)
        Y = rng.standard_normal((4, 200))
        bad = rng.choice(200, size=10, replace=False)  # 5% far outliers
        u = rng.standard_normal(4)
        u /= np.linalg.norm(u)
        Y[:, bad] = 100.0 * u[:, None] + rng.standard_normal((4, 10))
        kept = naive_prune(Y, radius=10.0, delta=0.01, seed=seed)
        good_idx = np.setdiff1d(np.arange(200), bad)
        if not np.isin(good_idx, kept).all():
            failures += 1
    wall = time.perf_counter() - start
    ok = failures <= 5 and wall < 60.0
    report(4, "prune keeps the dominant ball",
           ok, f"{failures}/500 instances dropped a good point (<=5), "
               f"wall {wall:.1f}s")


# ---------------------------------------------------------------------------
# end-to-end settings shared by criteria 5-8


def _headline_run(sigma, eps, seed, adversary="variance_inflate", n=40000):
    d = sigma.shape[0]
    clean = sample_gaussian(d, n, sigma, seed=seed)
    if eps > 0.0:
        spec = CorruptionSpec(
            epsilon=eps, strategy=adversary, seed=seed + 1000, variance_factor=100.0
        )
        data = corrupt(clean, spec, sigma_true=sigma)
        X = data.samples
    else:
        X = clean
    est = robust_covariance(X, EstimatorConfig(epsilon=eps, seed=seed))
    robust_err = mahalanobis_error(est.sigma_hat, sigma)
    naive_err = mahalanobis_error(X @ X.T / n, sigma)
    return est, robust_err, naive_err


def test_criterion_05_headline_error():
    start = time.perf_counter()
    eps = 0.05
    errs, ratios = [], []
    for seed in range(20):
        _, robust_err, naive_err = _headline_run(np.eye(4), eps, seed)
        errs.append(robust_err)
        ratios.append(robust_err / naive_err)
    wall = time.perf_counter() - start
    med = float(np.median(errs))
    ok = med <= 40.0 * XLOG(eps) and max(ratios) <= 0.2 and wall < 600.0
    report(5, "headline error at 5% corruption",
           ok, f"median err {med:.4f} (<= {40.0 * XLOG(eps):.2f}), "
               f"worst robust/naive {max(ratios):.4f} (<=0.2), wall {wall:.0f}s")


def test_criterion_06_clean_inertness():
    start = time.perf_counter()
    errs, naives = [], []
    for seed in range(20):
        _, robust_err, naive_err = _headline_run(np.eye(4), 0.0, seed)
        errs.append(robust_err)
        naives.append(naive_err)
    wall = time.perf_counter() - start
    med, med_naive = float(np.median(errs)), float(np.median(naives))
    ok = med <= 3.0 * med_naive and wall < 300.0
    report(6, "clean-data inertness",
           ok, f"median robust {med:.4f} vs naive {med_naive:.4f} "
               f"(<=3x), wall {wall:.0f}s")


def test_criterion_07_second_phase_error_monotone():
    start = time.perf_counter()
    eps, sigma = 0.05, np.eye(4)
    all_mono, all_final = True, True
    for seed in range(10):
        est, _, _ = _headline_run(sigma, eps, seed)
        errs = [
            mahalanobis_error(r.sigma_hat, sigma)
            for r in est.records
            if r.phase == "second"
        ]
        assert errs, "no second-phase rounds recorded"
        all_mono &= all(b <= a + 1e-9 for a, b in zip(errs, errs[1:]))
        all_final &= errs[-1] <= errs[0] + 1e-9
    wall = time.perf_counter() - start
    ok = all_mono and all_final
    report(7, "second-phase error monotone",
           ok, f"10 seeds, per-round non-increasing={all_mono}, "
               f"final<=first={all_final}, wall {wall:.0f}s")


def test_criterion_08_condition_number_robustness():
    start = time.perf_counter()
    eps = 0.05
    kappa, d = 1.0e4, 4
    sigma = np.diag([kappa, 1.0, 1.0, 1.0])
    round_cap = math.ceil(math.log2(kappa * d)) + 4
    errs, ratios, first_rounds = [], [], []
    for seed in range(20):
        est, robust_err, naive_err = _headline_run(sigma, eps, seed)
        errs.append(robust_err)
        ratios.append(robust_err / naive_err)
        first_rounds.append(sum(1 for r in est.records if r.phase == "first"))
    wall = time.perf_counter() - start
    med = float(np.median(errs))
    ok = (
        med <= 40.0 * XLOG(eps)
        and max(ratios) <= 0.2
        and max(first_rounds) <= round_cap
    )
    report(8, "condition-number robustness",
           ok, f"kappa=1e4: median err {med:.4f}, worst ratio {max(ratios):.4f}, "
               f"max first-phase rounds {max(first_rounds)} (<= {round_cap}), "
               f"wall {wall:.0f}s")


def test_criterion_09_oracle_memory_and_scaling():
    d = 64
    params = OracleParams(r=32, ell=12, power_iters=8, power_restarts=1, seed=0)

    def one_call(n, seed):
        Y = sample_gaussian(d, n, np.eye(d), seed=seed)
        hist = [np.ones(n), np.full(n, 0.9), np.full(n, 0.85)]
        t0 = time.perf_counter()
        approximate_score(Y, hist, 0.05, params)
        return time.perf_counter() - t0

    Y = sample_gaussian(d, 4096, np.eye(d), seed=0)
    hist = [np.ones(4096), np.full(4096, 0.9), np.full(4096, 0.85)]
    tracemalloc.start()
    approximate_score(Y, hist, 0.05, params)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    base = sorted(one_call(4096, s) for s in range(5))[2]
    doubled = sorted(one_call(8192, s) for s in range(5))[2]
    ratio = doubled / base
    ok = peak < 64 * 1024 * 1024 and ratio <= 2.6
    report(9, "oracle memory and scaling",
           ok, f"peak {peak / 1e6:.1f} MB (<64), doubling-N wall ratio "
               f"{ratio:.2f} (<=2.6, medians of 5)")


# --- criterion 10: independent subset enumerator (recursive, not itertools)


def _enumerated_goodness(X, eps, mu_ref=None):
    d, n = X.shape
    dim = d * d
    m = max(1, min(int(round(2.0 * eps * n)), n))
    if mu_ref is None:
        mu_ref = np.eye(d).reshape(-1)
    Z = np.empty((dim, n))
    for i in range(n):
        y = X[:, i]
        Z[:, i] = np.multiply.outer(y, y).reshape(-1)
    mu_s = Z.sum(axis=1) / n
    gamma1 = float(np.linalg.norm(mu_s - mu_ref))
    basis = symmetric_basis(d)
    Zs = basis.T @ (Z - mu_s[:, None])
    eye_s = np.eye(Zs.shape[0])
    gamma2 = float(np.abs(np.linalg.eigvalsh(Zs @ Zs.T / n - 2.0 * eye_s)).max())

    beta1 = 0.0
    beta2 = 0.0

    def visit(start, chosen):
        nonlocal beta1, beta2
        if len(chosen) == m:
            t = np.asarray(chosen, dtype=np.intp)
            mean_dev = Z[:, t].sum(axis=1) / len(t) - mu_ref
            beta1 = max(beta1, float(np.linalg.norm(mean_dev)))
            G = Zs[:, t]
            beta2 = max(
                beta2,
                float(np.abs(np.linalg.eigvalsh(G @ G.T / len(t) - 2.0 * eye_s)).max()),
            )
            return
        for j in range(start, n - (m - len(chosen)) + 1):
            chosen.append(j)
            visit(j + 1, chosen)
            chosen.pop()

    visit(0, [])
    return gamma1, gamma2, beta1, beta2


def test_criterion_10_goodness_brute_force_equivalence():
    cases = [
        (2, 8, 0.15, 0, None),
        (3, 7, 0.2, 1, None),
        (2, 12, 0.25, 2, None),
        (3, 14, 0.25, 3, None),
        (2, 16, 0.2, 4, None),
        (4, 10, 0.1, 5, None),
        (2, 10, 0.2, 6, "cluster"),
        (3, 9, 0.15, 7, "large_spike"),
    ]
    checked = 0
    for d, n, eps, seed, adversary in cases:
        m = max(1, min(int(round(2.0 * eps * n)), n))
        assert math.comb(n, m) <= 10_000
        X = sample_gaussian(d, n, np.eye(d), seed=seed)
        if adversary is not None:
            spec = CorruptionSpec(epsilon=eps, strategy=adversary, seed=seed)
            X = corrupt(X, spec, sigma_true=np.eye(d)).samples
        rep = estimate_goodness(X, eps, mode="exhaustive")
        g1, g2, b1, b2 = _enumerated_goodness(X, eps)
        same = (
            rep.gamma1 == g1 and rep.gamma2 == g2
            and rep.beta1 == b1 and rep.beta2 == b2
        )
        assert same, (
            f"mismatch at d={d} n={n} eps={eps} adversary={adversary}: "
            f"{(rep.gamma1, rep.gamma2, rep.beta1, rep.beta2)} != "
            f"{(g1, g2, b1, b2)}"
        )
        checked += 1
    report(10, "goodness brute-force equivalence",
           True, f"{checked} instances match the enumerator exactly")
