"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines
as they are produced; they are also repeated in the terminal summary.
"""
import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from smgsbr.cli import main
from smgsbr.dynamics import (
    PRESETS,
    find_saddle,
    forward_step,
    orbit,
    poly_features,
    simulate,
    stable_direction,
    trace_stable_manifold,
)
from smgsbr.errors import EscapeError
from smgsbr.gsbr import (
    ChainState,
    GsbrConfig,
    alloc_probabilities,
    lambda_conditional,
    latent_log_ratio,
    log_joint,
    run_chain,
    tau_conditional,
    update_alloc_pairs,
)
from smgsbr.manifold import (
    approximate_manifold_multi,
    approximate_manifold_sliding,
    axis_angle_diff,
    cloud_metrics,
    mean_source_spread,
    orbit_start_series,
    principal_direction,
)
from smgsbr.stochastics import NoiseSpec, RngStream, chi_square_gof, sample_truncated_geometric
from toy_states import random_toy_state

HENON = np.array([1.0, 0.0, 0.3, 0.0, -1.4, 0.0])


# 1. conjugate conditionals against quadrature


def _quad_moments(logf, lo, hi, transform=lambda x: x):
    grid = np.linspace(lo, hi, 2001)[1:-1]
    logs = np.array([logf(x) for x in grid])
    shift, mode = logs.max(), float(grid[np.argmax(logs)])

    def f(x, k):
        return transform(x) ** k * math.exp(logf(x) - shift)

    opts = dict(limit=500, epsabs=0, epsrel=1e-12, points=[mode])
    z = integrate.quad(f, lo, hi, args=(0,), **opts)[0]
    m1 = integrate.quad(f, lo, hi, args=(1,), **opts)[0] / z
    m2 = integrate.quad(f, lo, hi, args=(2,), **opts)[0] / z
    return m1, m2 - m1 * m1


def test_criterion_1_conjugacy_oracles(report):
    worst = 0.0
    for seed in range(10):
        T, n = seed % 2, 1 + seed % 3
        config = GsbrConfig(T=T)
        state = random_toy_state(np.random.default_rng(100 + seed), n=n, T=T)
        base = log_joint(state, config)

        def with_lam(lam):
            s = state.copy()
            s.lam = lam
            return log_joint(s, config) - base

        a, b = lambda_conditional(state, config)
        mean, var = _quad_moments(with_lam, 0.0, 1.0)
        worst = max(worst, abs(mean / (a / (a + b)) - 1), abs(var / (a * b / ((a + b) ** 2 * (a + b + 1))) - 1))

        shapes, rates = tau_conditional(state, config)
        for j in np.unique(state.alloc_d) - 1:
            def with_tau(u, j=j):
                s = state.copy()
                s.tau[j] = math.exp(u)
                return log_joint(s, config) - base + u

            centre = math.log(shapes[j] / rates[j])
            mean, var = _quad_moments(with_tau, centre - 60, centre + 8, transform=math.exp)
            worst = max(worst, abs(mean / (shapes[j] / rates[j]) - 1),
                        abs(var / (shapes[j] / rates[j] ** 2) - 1))
    ok = worst <= 1e-6
    report(1, ok, f"max relative error {worst:.2e}, bound 1e-6")
    assert ok


# 2. joint-density coherence


def _theta_log_ratio(state, config, new_theta):
    A = poly_features(np.column_stack([state.z[1:-1], state.z[:-2]]), config.degree)
    w = state.tau[state.alloc_d - 1]
    Q = A.T @ (w[:, None] * A) + config.jitter * np.eye(A.shape[1])
    b = A.T @ (w * state.z[2:])
    old = state.theta
    return -0.5 * (new_theta @ Q @ new_theta - old @ Q @ old) + b @ (new_theta - old)


def _latent_term_sum(state, j, value):
    def total(z):
        s = 0.0
        for m in range(max(0, j - 2), min(j, state.M - 1) + 1):
            a, b = z[m + 1], z[m]
            g = state.theta @ np.array([1, a, b, a * b, a * a, b * b])
            s += state.tau[state.alloc_d[m] - 1] * (z[m + 2] - g) ** 2
        return -0.5 * s

    z = state.z.copy()
    before = total(z)
    z[j] = value
    return total(z) - before


def test_criterion_2_joint_density_coherence(report):
    errors = {k: 0.0 for k in ("lambda", "tau", "slice", "alloc", "theta", "latent")}
    for seed in range(100):
        gen = np.random.default_rng(seed)
        T = int(gen.integers(0, 2))
        config = GsbrConfig(T=T)
        s = random_toy_state(gen, n=int(gen.integers(1, 4)), T=T)
        base = log_joint(s, config)

        def delta(mutate):
            t = s.copy()
            mutate(t)
            return log_joint(t, config) - base

        a, b = lambda_conditional(s, config)
        new_lam = gen.uniform(0.01, 0.99)
        ref = stats.beta.logpdf(new_lam, a, b) - stats.beta.logpdf(s.lam, a, b)
        errors["lambda"] = max(errors["lambda"], abs(delta(lambda t: setattr(t, "lam", new_lam)) - ref))

        shapes, rates = tau_conditional(s, config)
        new_tau = s.tau * gen.uniform(0.3, 3.0, s.tau.size)
        ref = np.sum(stats.gamma.logpdf(new_tau, shapes, scale=1 / rates)
                     - stats.gamma.logpdf(s.tau, shapes, scale=1 / rates))
        errors["tau"] = max(errors["tau"], abs(delta(lambda t: setattr(t, "tau", new_tau)) - ref))

        i = int(gen.integers(s.M))
        new_N = int(gen.integers(s.alloc_d[i], s.tau.size + 1))
        ref = (new_N - s.slice_N[i]) * math.log1p(-s.lam)
        errors["slice"] = max(errors["slice"], abs(delta(lambda t: t.slice_N.__setitem__(i, new_N)) - ref))

        r = s.z[i + 2] - s.theta @ poly_features([s.z[i + 1], s.z[i]], config.degree)
        p = alloc_probabilities(s.tau, s.slice_N[i], r)
        new_d = int(gen.integers(1, s.slice_N[i] + 1))
        ref = math.log(p[new_d - 1]) - math.log(p[s.alloc_d[i] - 1])
        errors["alloc"] = max(errors["alloc"], abs(delta(lambda t: t.alloc_d.__setitem__(i, new_d)) - ref))

        new_theta = s.theta + gen.normal(0, 0.1, s.theta.size)
        ref = _theta_log_ratio(s, config, new_theta)
        errors["theta"] = max(errors["theta"], abs(delta(lambda t: setattr(t, "theta", new_theta)) - ref))

        j = int(gen.integers(s.n_latent))
        value = gen.uniform(-2.9, 2.9)
        d = delta(lambda t: t.z.__setitem__(j, value))
        errors["latent"] = max(errors["latent"], abs(d - _latent_term_sum(s, j, value)),
                               abs(d - latent_log_ratio(s, config, j, value)))
    worst = max(errors.values())
    ok = worst <= 1e-9
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    report(2, ok, f"max |log-ratio error| over 100 states: {detail}; bound 1e-9")
    assert ok


# 3. discrete kernels


def test_criterion_3_discrete_kernels(report):
    lam, m = 0.3, 4
    draws = sample_truncated_geometric(lam, m, RngStream(3), size=100_000)
    ks = np.arange(m, m + 20)
    pmf = lam * (1 - lam) ** (ks - m)
    obs = np.append([(draws == k).sum() for k in ks[:-1]], (draws >= ks[-1]).sum())
    probs = np.append(pmf[:-1], 1 - pmf[:-1].sum())
    p_geom = chi_square_gof(obs, probs)[1]

    # 1e5 identical terms from d = 2: each is one draw of the joint (N, d) kernel.
    config = GsbrConfig(T=0, b1=5.0, b2=5.0)
    lam, r, M = 0.45, 0.7, 100_000
    tau = np.array([3.0, 0.5, 1.5, 8.0, 0.2, 1.0, 2.0, 0.7, 4.0, 0.3] + [1.0] * 40)
    state = ChainState(lam, tau, np.full(M, 2), np.full(M, 2), np.zeros(6),
                       np.concatenate([[0.0, 0.0], np.full(M, r)]), 2, [0.1, 0.1])
    update_alloc_pairs(state, config, RngStream(21))
    cells, probs = [], []
    for N in range(2, 9):
        pN = lam * (1 - lam) ** (N - 2)
        pd = alloc_probabilities(tau, N, r)
        for k in range(1, N + 1):
            cells.append(np.sum((state.slice_N == N) & (state.alloc_d == k)))
            probs.append(pN * pd[k - 1])
    cells.append(M - sum(cells))
    probs.append(1 - sum(probs))
    p_alloc = chi_square_gof(cells, probs)[1]
    ok = p_geom >= 0.01 and p_alloc >= 0.01
    report(3, ok, f"chi-square p truncated geometric {p_geom:.3f}, allocation pairs {p_alloc:.3f}; need >= 0.01")
    assert ok


# 4. parameter recovery


@pytest.mark.slow
def test_criterion_4_parameter_recovery(report):
    series = simulate(PRESETS["henon"], NoiseSpec.parse("0.75:1e-6,0.25:1e-3"), (-1.0, 0.5), 500, 0)
    config = GsbrConfig().with_profile("desk")
    result = run_chain(config, series, RngStream(0))
    err = np.abs(result.theta_mean() - HENON)
    ok = bool(np.all(err <= 0.05))
    report(4, ok, f"max |posterior mean - truth| {err.max():.4f} over {len(result)} draws; bound 0.05")
    assert ok


# 5. stable-direction alignment and diffusion with T


def _low_curvature_setup():
    m = PRESETS["henon-138"]
    start = (-0.61, 1.37)
    pts = orbit(m, start, 250)
    # Figure coordinates list the newer value first; points here are (older, newer).
    target = np.array([-0.02, 1.71])
    i = int(np.argmin(np.hypot(*(pts[1:] - target).T))) + 1
    # Source j starts at orbit point j, and its T = 2 cloud estimates orbit point j - 2.
    source_orbit_index = i + 2
    skip = source_orbit_index - 11
    return m, start, pts[i], skip


@pytest.mark.slow
def test_criterion_5_stable_direction_and_diffusion(report):
    m, start, point, skip = _low_curvature_setup()
    noise = NoiseSpec.parse("0.9:1e-7,0.1:1e-3")
    truth_vec = stable_direction(m, point)
    truth_angle = math.degrees(math.atan2(truth_vec[1], truth_vec[0])) % 180.0
    spreads, angle_diff, seed = [], None, 0
    while len(spreads) < 10:
        try:
            series = orbit_start_series(m, noise, start, 20, 500, seed, skip=skip)
        except EscapeError:
            seed += 1
            continue
        clouds = {}
        for T in (0, 2):
            config = GsbrConfig(T=T, trunc=(-2.0, 2.0)).with_profile("desk")
            clouds[T] = approximate_manifold_multi(series, config, seed)
        if angle_diff is None:
            _, angle = principal_direction(clouds[2].subset(11))
            angle_diff = axis_angle_diff(angle, truth_angle)
        spreads.append((seed, mean_source_spread(clouds[0]), mean_source_spread(clouds[2])))
        seed += 1
    wins = sum(s2 > s0 for _, s0, s2 in spreads)
    p_value = stats.binomtest(wins, len(spreads), 0.5, alternative="greater").pvalue
    ok_angle = angle_diff <= 15.0
    ok_sign = p_value < 0.05
    report(5, ok_angle and ok_sign,
           f"angle off stable direction {angle_diff:.1f} deg (bound 15) at orbit point "
           f"({point[0]:.3f}, {point[1]:.3f}); T=2 spread larger in {wins}/10 seeds, sign-test p {p_value:.4f}")
    assert ok_angle and ok_sign


# 6. sliding-window manifold approximation


@pytest.mark.slow
def test_criterion_6_manifold_approximation(report):
    henon = PRESETS["henon"]
    saddle = max(find_saddle(henon), key=lambda s: s.x)
    truth = trace_stable_manifold(henon, saddle, n_back=20, max_points=5_000_000, window=(-3, 3, -3, 3))
    series = simulate(henon, NoiseSpec(), (-1.0, 0.5), 2000, 0)
    cloud = approximate_manifold_sliding(series, 100, GsbrConfig(T=3).with_profile("desk"), seed=0)
    metrics = cloud_metrics(cloud, truth, tol=0.05, recall_tol=0.1)
    ok = metrics["coverage"] >= 0.90 and metrics["recall"] >= 0.5
    report(6, ok, f"coverage within 0.05 {metrics['coverage']:.3f} (need 0.90), recall at 0.1 "
                  f"{metrics['recall']:.3f} (need 0.5), {metrics['n_points']} points vs {metrics['n_vertices']} vertices")
    assert ok


# 7. ground-truth self-consistency


def test_criterion_7a_traced_points_and_saddle_roots(report):
    henon = PRESETS["henon"]
    saddle = max(find_saddle(henon), key=lambda s: s.x)
    truth = trace_stable_manifold(henon, saddle, n_back=10, max_points=2_000_000, window=(-3, 3, -3, 3))
    pts = truth.points[truth.depth <= 10]
    best = np.hypot(*(pts - saddle.location).T)
    cur = pts
    for _ in range(50):
        cur = forward_step(henon, cur)
        best = np.minimum(best, np.hypot(*(cur - saddle.location).T))
    exact_henon = (-0.7 + math.sqrt(0.49 + 5.6)) / 2.8
    dual = find_saddle(PRESETS["dual-henon"], search_interval=(-5.0, 5.0))
    dual_x = sorted(s.x for s in dual if abs(s.x) > 1)
    ok_orbit = best.max() <= 1e-2
    ok_root = abs(saddle.x - exact_henon) <= 1e-8
    ok_dual = len(dual_x) == 2 and all(abs(abs(x) - 3.60555128) <= 1e-8 for x in dual_x)
    ok = ok_orbit and ok_root and ok_dual
    report("7a", ok, f"{len(pts)} traced points reach the saddle within {best.max():.1e}; Henon saddle "
                     f"{saddle.x:.10f} vs exact root off by {abs(saddle.x - exact_henon):.1e}; "
                     f"Dual-Henon saddles {dual_x[0]:.8f}, {dual_x[1]:.8f}")
    assert ok


@pytest.mark.xfail(strict=True, reason="the stated Henon constant 0.63135446 is the exact root "
                                       "0.6313544771 truncated, 1.7e-8 away, beyond the 1e-8 tolerance")
def test_criterion_7b_henon_saddle_literal(report):
    saddle = max(find_saddle(PRESETS["henon"]), key=lambda s: s.x)
    gap = abs(saddle.x - 0.63135446)
    ok = gap <= 1e-8
    report("7b", ok, f"Henon saddle {saddle.x:.10f} vs literal 0.63135446 off by {gap:.2e}; bound 1e-8")
    assert ok


# 8. reproducibility from manifests


def test_criterion_8_manifest_replay(tmp_path, report):
    runs = {
        "simulate": ["--n", 200, "--noise", "0.9:1e-7,0.1:1e-3", "--seed", 5],
        "ground-truth": ["--n_back", 6, "--max_points", 200_000],
        "reconstruct": ["--input", tmp_path / "simulate" / "series.csv", "--iters", 800,
                        "--burn_in", 200, "--thin", 20, "--seed", 3],
        "manifold": ["--mode", "sliding", "--k", 3, "--input", tmp_path / "simulate" / "series.csv",
                     "--iters", 600, "--burn_in", 200, "--thin", 20, "--jobs", 1, "--seed", 9],
        "evaluate": ["--cloud", tmp_path / "manifold" / "cloud.csv",
                     "--truth", tmp_path / "ground-truth" / "truth.csv", "--tol", 0.05],
    }
    mismatched, compared = [], 0
    for command, args in runs.items():
        out = tmp_path / command
        assert main([command, *map(str, args), "--out", str(out)]) == 0
        again = tmp_path / f"{command}-replay"
        assert main(["replay", str(out / "manifest.json"), "--out", str(again)]) == 0
        for path in sorted(out.iterdir()):
            if path.name == "manifest.json":
                # Wall time differs between runs; every other field must match.
                a, b = (json.loads(p.read_text()) for p in (path, again / path.name))
                a.pop("wall_time_s"), b.pop("wall_time_s")
                same = a == b
            else:
                same = path.read_bytes() == (again / path.name).read_bytes()
            compared += 1
            if not same:
                mismatched.append(f"{command}/{path.name}")
    ok = not mismatched
    report(8, ok, f"{compared} files across 5 commands replayed; mismatches: {mismatched or 'none'}")
    assert ok
