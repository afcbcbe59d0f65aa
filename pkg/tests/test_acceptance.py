"""End-to-end acceptance checks; each prints one pass/fail line in the terminal summary."""

import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
from scipy.stats import ortho_group

from conftest import finite_diff_grad, finite_diff_hessian, scalar_chain
from hitab.bab import BabConfig, Status, run
from hitab.certify import BallSpec, BoxSpec, bound_ball, bound_box, crossover_thresholds
from hitab.io import network_to_dict
from hitab.lipzoo import LipschitzBundle, bundle
from hitab.net import LocalModel, TANH, fold_input_map, local_model, random_network
from hitab.reach import ReachConfig, RotatedRect, bundled_controller, containment, quadrotor_system, run_reach, simulate


def random_tanh_net(rng, max_width=8, depths=(2, 3), scale=1.0):
    n_layers = int(rng.choice(depths))
    widths = [int(rng.integers(1, max_width + 1)) for _ in range(n_layers + 1)]
    return random_network(widths, rng, act=TANH, scale=scale, out_vector=rng.normal(size=widths[-1]))


def grid_max_2d(net, n=501):
    g = np.linspace(-1.0, 1.0, n)
    xx, yy = np.meshgrid(g, g)
    return float(net(np.column_stack([xx.ravel(), yy.ravel()])).max())


def test_c1_derivative_exactness(record_criterion):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst_g = worst_h = 0.0
    for _ in range(50):
        net = random_tanh_net(rng)
        x = rng.normal(size=net.input_dim)
        m = local_model(net, x)
        g_fd = finite_diff_grad(net, x, h=1e-5)
        h_fd = finite_diff_hessian(net, x, h=1e-4)
        worst_g = max(worst_g, np.linalg.norm(m.gradient - g_fd) / max(np.linalg.norm(g_fd), 1e-12))
        worst_h = max(worst_h, np.linalg.norm(m.hessian - h_fd) / max(np.linalg.norm(h_fd), 1e-12))
    elapsed = time.perf_counter() - start
    ok = worst_g <= 1e-5 and worst_h <= 1e-4 and elapsed < 10
    record_criterion(
        "1 derivative exactness", ok, f"max rel err grad {worst_g:.2e}, hessian {worst_h:.2e}, {elapsed:.2f} s"
    )
    assert ok


def test_c2_scalar_chain_exactness(record_criterion):
    rng = np.random.default_rng(202)
    x = np.linspace(-20.0, 20.0, 10**6)
    worst = 0.0
    for _ in range(10):
        w1 = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        w2 = rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        b1, b2, c = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.choice([-1, 1]) * rng.uniform(0.5, 2.0)
        lip = bundle(scalar_chain(w1, b1, w2, b2, c))
        u = c * w2
        t = np.tanh(w1 * x + b1)
        s = 1.0 - t**2
        d1 = u * w1 * s
        d2 = u * w1**2 * (-2.0 * t * s)
        d3 = u * w1**3 * (-2.0 * s * (1.0 - 3.0 * t**2))
        for bound, deriv in ((lip.lip_f, d1), (lip.lip_grad, d2), (lip.lip_hess, d3)):
            oracle = np.abs(deriv).max()
            worst = max(worst, abs(bound - oracle) / oracle)
    ok = worst <= 1e-6
    record_criterion("2 scalar-chain Lipschitz exactness", ok, f"max rel deviation from grid suprema {worst:.2e}")
    assert ok


def test_c3_hessian_lipschitz_soundness(record_criterion):
    rng = np.random.default_rng(303)
    start = time.perf_counter()
    violations = 0
    tightest = 0.0
    for _ in range(20):
        n_in = int(rng.integers(2, 6))
        widths = [n_in] + [int(rng.integers(2, 9)) for _ in range(int(rng.integers(1, 3)))] + [1]
        net = random_network(widths, rng, scale=float(rng.uniform(0.5, 2.0)))
        lip = bundle(net)
        x = rng.uniform(-3, 3, size=(10**4, n_in))
        scales = 10.0 ** rng.uniform(-3, 0.5, size=(10**4, 1))
        y = x + scales * rng.normal(size=(10**4, n_in))
        _, _, hx = net.derivatives(x)
        _, _, hy = net.derivatives(y)
        diff_norm = np.abs(np.linalg.eigvalsh(hx - hy)).max(axis=1)
        ratio = diff_norm / np.linalg.norm(x - y, axis=1)
        violations += int(np.sum(ratio > lip.lip_hess))
        tightest = max(tightest, ratio.max() / lip.lip_hess)
    elapsed = time.perf_counter() - start
    ok = violations == 0 and elapsed < 60
    record_criterion(
        "3 Hessian-Lipschitz soundness",
        ok,
        f"{violations} violations over 2e5 pairs, worst sampled ratio / bound {tightest:.3f}, {elapsed:.2f} s",
    )
    assert ok


def test_c4_certificate_soundness(record_criterion):
    rng = np.random.default_rng(404)
    violations = 0
    for k in range(50):
        net = random_tanh_net(rng, depths=(2, 3))
        n = net.input_dim
        lip = bundle(net)
        xc = rng.normal(size=n)
        m = local_model(net, xc)
        if k % 2 == 0:
            eps = float(10.0 ** rng.uniform(-2, 0))
            cert = bound_ball(m, lip, BallSpec(xc, eps))
            dirs = rng.normal(size=(10**4, n))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            pts = xc + dirs * (eps * rng.uniform(size=(10**4, 1)) ** (1.0 / n))
        else:
            radii = 10.0 ** rng.uniform(-2, 0, size=n)
            cert = bound_box(m, lip, BoxSpec(xc, radii))
            pts = xc + radii * rng.uniform(-1, 1, size=(10**4, n))
        if float(net(pts).max()) > cert.combined:
            violations += 1
    ok = violations == 0
    record_criterion("4 certificate soundness", ok, f"{violations} violations over 50 instances x 1e4 samples")
    assert ok


def test_c5_hierarchy_ordering(record_criterion):
    rng = np.random.default_rng(505)
    bad12 = bad01 = checked12 = checked01 = 0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        g = rng.normal(size=n)
        a = rng.normal(size=(n, n))
        h = 0.5 * (a + a.T)
        model = LocalModel(np.zeros(n), float(rng.normal()), g, h)
        lam = max(np.linalg.eigvalsh(h)[-1], 0.0)
        lip = LipschitzBundle(
            (),
            float(np.linalg.norm(g) * rng.uniform(1.0, 3.0)),
            float(lam * rng.uniform(1.0, 3.0) + rng.uniform(0.01, 1.0)),
            float(rng.uniform(0.01, 5.0)),
        )
        eps01, eps12 = crossover_thresholds(model, lip)
        if eps12 > 0:
            eps = eps12 * rng.uniform(1e-3, 1.0)
            cert = bound_ball(model, lip, BallSpec(np.zeros(n), eps))
            checked12 += 1
            bad12 += int(cert.bound2 > cert.bound1)
        if eps01 > 0:
            eps = eps01 * rng.uniform(1e-3, 1.0)
            cert = bound_ball(model, lip, BallSpec(np.zeros(n), eps))
            checked01 += 1
            bad01 += int(cert.bound1 > cert.bound0)
    ok = bad12 == 0 and bad01 == 0 and checked12 > 900 and checked01 > 900
    record_criterion(
        "5 hierarchy ordering",
        ok,
        f"bound2>bound1 in {bad12}/{checked12} tuples, bound1>bound0 in {bad01}/{checked01} tuples",
    )
    assert ok


def test_c6_bab_convergence(record_criterion):
    start = time.perf_counter()
    res1 = run(scalar_chain(), BoxSpec([0.0], [1.0]), BabConfig(tolerance=1e-3))
    t1 = time.perf_counter() - start
    ok1 = res1.status is Status.CONVERGED and math.tanh(2) <= res1.upper <= math.tanh(2) + 1e-3 and t1 < 1

    net = random_network([2, 4, 1], np.random.default_rng(0))
    start = time.perf_counter()
    res2 = run(net, BoxSpec([0.0, 0.0], [1.0, 1.0]), BabConfig(tolerance=1e-2))
    t2 = time.perf_counter() - start
    oracle = grid_max_2d(net)
    ok2 = res2.status is Status.CONVERGED and abs(res2.upper - oracle) <= 1e-2 and res2.upper >= oracle and t2 < 30
    record_criterion(
        "6 BaB convergence",
        ok1 and ok2,
        f"tanh(2x): upper {res1.upper:.7f} in {res1.nodes_expanded} nodes, {t1 * 1e3:.1f} ms; "
        f"2-4-1 net: upper - grid max {res2.upper - oracle:.2e} in {res2.nodes_expanded} nodes, {t2:.2f} s",
    )
    assert ok1 and ok2


def test_c7_second_order_benefit(record_criterion):
    wins = 0
    pairs = []
    for seed in range(10):
        net = random_network([2, 4, 1], np.random.default_rng(seed))
        box = BoxSpec([0.0, 0.0], [1.0, 1.0])
        full = run(net, box, BabConfig(tolerance=1e-2, bound_mode="combined"))
        first = run(net, box, BabConfig(tolerance=1e-2, bound_mode="first"))
        pairs.append((full.nodes_expanded, first.nodes_expanded))
        wins += int(full.nodes_expanded < first.nodes_expanded)
    ok = wins >= 9
    record_criterion("7 second-order benefit", ok, f"fewer nodes on {wins}/10 seeds (combined, first-order) = {pairs}")
    assert ok


@pytest.mark.slow
def test_c8_quadrotor_reachability(record_criterion):
    sys_ = quadrotor_system(0.1, 9.81)
    net = bundled_controller()
    init = RotatedRect.axis_aligned([1.0, 1.0, 1.0, 0.0, 0.0, 0.0], np.full(6, 0.05))
    cfg = ReachConfig(steps=10, bab=BabConfig(tolerance=1e-2, batch_size=16), threads=1, seed=0)
    start = time.perf_counter()
    steps = run_reach(sys_, net, init, cfg)
    elapsed = time.perf_counter() - start
    traj = simulate(sys_, net, init, 1000, 10, np.random.default_rng(1))
    inside = containment([s.region for s in steps], traj, tol=1e-9)
    nodes = [s.nodes for s in steps]
    ok = bool(inside.all()) and elapsed < 900
    record_criterion(
        "8 quadrotor reachability",
        ok,
        f"{int(inside.all(axis=1).sum())}/1000 trajectories contained at all 10 steps; "
        f"all converged {all(s.converged for s in steps)}; branches per step {nodes}; {elapsed:.1f} s",
    )
    assert ok


def test_c9_orthogonal_fold_invariance(record_criterion):
    rng = np.random.default_rng(909)
    worst = 0.0
    for k in range(10):
        n = int(rng.integers(2, 7))
        widths = [n] + [int(rng.integers(2, 9)) for _ in range(int(rng.integers(1, 3)))] + [int(rng.integers(1, 3))]
        net = random_network(widths, rng, out_vector=rng.normal(size=widths[-1]))
        q = ortho_group.rvs(n, random_state=int(rng.integers(2**31)))
        ref = bundle(net)
        rot = bundle(fold_input_map(net, np.zeros(n), q))
        pairs = [(ref.lip_f, rot.lip_f), (ref.lip_grad, rot.lip_grad), (ref.lip_hess, rot.lip_hess)]
        pairs += [(ref.lip_hess_tail, rot.lip_hess_tail), (ref.lip_hess_chain, rot.lip_hess_chain)]
        for a, b in zip(ref.per_layer, rot.per_layer):
            pairs += [(a.lip_value, b.lip_value), (a.lip_jac, b.lip_jac)]
            pairs += list(zip(a.lip_jac_rows, b.lip_jac_rows)) + list(zip(a.lip_hess_rows, b.lip_hess_rows))
        for a, b in pairs:
            rel = 0.0 if a == b else abs(a - b) / max(abs(a), abs(b))
            worst = max(worst, rel)
    ok = worst < 1e-9
    record_criterion("9 orthogonal-fold invariance", ok, f"max relative change across all bundle fields {worst:.2e}")
    assert ok


def test_c10_determinism(record_criterion, tmp_path):
    net_path = tmp_path / "net.json"
    net_path.write_text(json.dumps(network_to_dict(random_network([2, 4, 1], np.random.default_rng(0)))))
    prob_path = tmp_path / "prob.json"
    prob_path.write_text(json.dumps({"center": [0.0, 0.0], "norm": "linf", "radii": [1.0, 1.0], "tolerance": 1e-3}))
    cmd = [sys.executable, "-m", "hitab.cli", "bab", str(net_path), str(prob_path), "--seed", "3"]
    first = subprocess.run(cmd, capture_output=True, check=True).stdout
    second = subprocess.run(cmd, capture_output=True, check=True).stdout
    ok = first == second and len(first) > 0
    record_criterion("10 determinism", ok, f"two bab runs, {len(first)} bytes each, identical={first == second}")
    assert ok
