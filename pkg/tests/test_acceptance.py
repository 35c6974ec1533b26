"""
Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are collected
in the terminal summary under "acceptance criteria".
"""

import itertools
import time
import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from scipy.spatial import cKDTree

from conftest import ACCEPTANCE_LINES
from gse.alignment import (
    alignment_objective,
    assemble_phi,
    solve_alignment,
    solve_alignment_orthogonal,
)
from gse.cli import RunConfig, run_sweep
from gse.errors import GseError
from gse.evaluation import evaluate, local_max_error
from gse.geometry import Subspace, binet_cauchy_distance, projection_2norm_distance
from gse.manifolds import get_manifold
from gse.model import GseModel
from gse.neighborhoods import HyperParams, build_kernel_graph, graph_from_weights
from gse.storage import model_from_bytes, model_to_bytes


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def quiet_fit(points, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return GseModel.fit(points, HyperParams(**kw))


@pytest.fixture(scope="module")
def roll900():
    m = get_manifold("swissroll")
    return m, quiet_fit(m.sample(900, 0).points, q=2, variant="ogse"), m.sample(200, 1)


def inversions(values):
    return int(np.sum(np.diff(values) > 0))


# -- flat plane ----------------------------------------------------------------------


def test_flat_manifold_exactness(plane):
    t0 = time.perf_counter()
    train, test = plane.sample(200, 0), plane.sample(100, 1)
    worst_d, worst_t = 0.0, 0.0
    for variant in ("gse", "ogse"):
        model = quiet_fit(train.points, q=2, variant=variant)
        rep = evaluate(model, test)
        assert rep.n_failed == 0
        worst_d = max(worst_d, rep.deltas.max())
        worst_t = max(worst_t, rep.tangent_errors.max())
    dt = time.perf_counter() - t0
    record("flat-manifold exactness", worst_d < 1e-6 and worst_t < 1e-6 and dt < 10,
           f"max delta {worst_d:.2e}, max tangent error {worst_t:.2e}, {dt:.1f} s (both variants)")


# -- Grassmann metrics ---------------------------------------------------------------


def test_grassmann_metric_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0

    def rand_sub(p, q):
        return Subspace(np.linalg.qr(rng.standard_normal((p, q)))[0])

    def rand_orth(q):
        Q, R = np.linalg.qr(rng.standard_normal((q, q)))
        return Q * np.sign(np.diag(R))

    for _ in range(100):
        p = int(rng.integers(2, 9))
        q = int(rng.integers(1, min(p - 1, 3) + 1))
        A, B, C = rand_sub(p, q), rand_sub(p, q), rand_sub(p, q)
        for d in (projection_2norm_distance, binet_cauchy_distance):
            ab = d(A, B)
            rotated = d(Subspace(A.basis @ rand_orth(q)), Subspace(B.basis @ rand_orth(q)))
            triangle = max(0.0, d(A, C) - ab - d(B, C))
            worst = max(worst, abs(ab - d(B, A)), triangle, abs(ab - rotated), d(A, A))
        alpha = rng.uniform(0, np.pi / 2)
        u, w = np.array([[1.0], [0.0]]), np.array([[np.cos(alpha)], [np.sin(alpha)]])
        worst = max(worst, abs(projection_2norm_distance(u, w) - np.sin(alpha)),
                    abs(binet_cauchy_distance(u, w) - np.sin(alpha)))
    dt = time.perf_counter() - t0
    record("Grassmann metric suite", worst < 1e-9 and dt < 1.0,
           f"worst violation {worst:.1e} over 100 trials, {dt:.2f} s")


# -- alignment -----------------------------------------------------------------------


def test_alignment_oracles(plane, swissroll):
    W = np.array([[0.0, 0.9, 0.3], [0.9, 0.0, 0.6], [0.3, 0.6, 0.0]])
    g = graph_from_weights(W)
    Q = np.stack([[[np.cos(a)], [np.sin(a)]] for a in (0.0, 0.2, 0.4)])
    Phi1, phi0 = assemble_phi(Q, g)
    lam, vec = sla.eig(Phi1.toarray(), np.diag(phi0))
    top = vec[:, np.argmax(lam.real)].real
    top /= np.sqrt(top @ (phi0 * top))
    got = solve_alignment(Q, g).v_star.ravel()
    eig_err = np.max(np.abs(got - np.sign(got @ top) * top))

    Qs = np.stack([[[np.cos(a)], [np.sin(a)]] for a in (0.0, 2.0, 0.4)])
    best = max(alignment_objective(Qs, g, np.array(s, float).reshape(3, 1, 1))
               for s in itertools.product([-1, 1], repeat=3))
    sign_gap = best - alignment_objective(Qs, g, solve_alignment_orthogonal(Qs, g).v_star)

    worst_c, worst_o = 0.0, 0.0
    fits = [(plane.sample(200, 0).points, v) for v in ("gse", "ogse")]
    fits += [(swissroll.sample(450, 0).points, v) for v in ("gse", "ogse")]
    for X, variant in fits:
        m = quiet_fit(X, q=2, variant=variant)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, graph = build_kernel_graph(m.X, m.params)
        _, p0 = assemble_phi(m.frames, graph)
        V = m.v_star.reshape(-1, 2)
        worst_c = max(worst_c, np.max(np.abs(V.T @ (p0[:, None] * V) - np.eye(2))))
        if variant == "ogse":
            vtv = np.einsum("nba,nbc->nac", m.v_ort, m.v_ort)
            worst_o = max(worst_o, np.max(np.abs(vtv - np.eye(2))))
    ok = eig_err < 1e-10 and abs(sign_gap) < 1e-12 and worst_c < 1e-8 and worst_o < 1e-8
    record("alignment oracles", ok,
           f"eigen-oracle {eig_err:.1e}, sign-oracle gap {sign_gap:.1e}, "
           f"constraint {worst_c:.1e}, orthogonality {worst_o:.1e}")


# -- Jacobians -----------------------------------------------------------------------


def roll_ball_clear(b, eps, man):
    """True when the ambient eps-ball around f(b) misses every edge of the roll."""
    s = b[1]
    x = man.f(b)
    edges = [s - man.low[1], man.high[1] - s]
    for te in (man.low[0], man.high[0]):
        edges.append(np.hypot(x[0] - te * np.cos(te), x[2] - te * np.sin(te)))
    return min(edges) > eps


def test_jacobian_identities(swissroll):
    t0 = time.perf_counter()
    model = quiet_fit(swissroll.sample(450, 0).points, q=2, variant="ogse")
    test = swissroll.sample(400, 1)
    e1 = model.params.eps1
    step = 1e-5 * e1
    idx = [k for k in range(test.n) if roll_ball_clear(test.params[k], e1, swissroll)][:30]
    rh, rg, rp = [], [], []
    for k in idx:
        x, T = test.points[k], test.tangents[k]
        try:
            MT = model.jacobian_h(x) @ T
            fd = np.stack([(model.embed(x + step * T[:, a]) - model.embed(x - step * T[:, a]))
                           / (2 * step) for a in range(2)], 1)
            y = model.embed(x)
            G = model.jacobian_G(y)
            fdg = np.stack([(model.reconstruct(y + step * e) - model.reconstruct(y - step * e))
                            / (2 * step) for e in np.eye(2)], 1)
            gh = [model.reconstruct(model.embed(x + step * T[:, a])) -
                  model.reconstruct(model.embed(x - step * T[:, a])) for a in range(2)]
        except GseError:
            continue
        rh.append(np.linalg.norm(fd - MT, 2) / np.linalg.norm(MT, 2))
        rg.append(np.linalg.norm(fdg - G, 2) / np.linalg.norm(G, 2))
        rp.append(np.linalg.norm(np.stack(gh, 1) / (2 * step) - T, 2))
    dt = time.perf_counter() - t0
    rh, rg, rp = map(np.array, (rh, rg, rp))
    ok = (len(rh) >= 20 and rh.max() < 1e-3 and rg.max() < 1e-3 and rp.max() < 5e-3
          and dt < 60)
    record("Jacobian identities", ok,
           f"{len(rh)} points; max rel J_h {rh.max():.1e}, max rel G {rg.max():.1e}, "
           f"max pi {rp.max():.1e}; {dt:.1f} s")


# -- local error lower bound ---------------------------------------------------------


def test_local_error_lower_bound(roll900):
    man, model, test = roll900
    t0 = time.perf_counter()
    eps = 0.5 * model.params.eps1
    inner = np.flatnonzero(man.is_interior(test.params))[:10]
    recs = [local_max_error(test.points[i], eps, model, man, test.tangents[i], m=500, seed=k)
            for k, i in enumerate(inner)]
    held = sum(r.holds(0.1) for r in recs)
    dt = time.perf_counter() - t0
    record("local error lower bound", len(recs) == 10 and held >= 8 and dt < 120,
           f"{held}/10 balls satisfy the bound, {dt:.1f} s")


# -- sample-size trend ---------------------------------------------------------------


def test_sample_size_trend():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, sizes in (("swissroll", [100, 200, 450, 900]), ("spiral", [50, 100, 200, 400])):
        cfg = RunConfig.from_mapping({"manifold": name, "n_test": 200, "seed": 0, "test_seed": 1,
                                      "variant": "ogse", "sweep": sizes})
        rows, _, _ = run_sweep(cfg)
        med = [r[5] if r[1] == "ok" else None for r in rows]
        failed = [r[0] for r in rows if r[1] != "ok"]
        good = not failed and inversions(med) <= 1
        ok &= good
        shown = ", ".join(f"{n}:{'fail' if m is None else f'{m:.3g}'}" for n, m in zip(sizes, med))
        parts.append(f"{name} [{shown}]" + (f" failed at n={failed}" if failed else ""))
    dt = time.perf_counter() - t0
    record("sample-size trend", ok and dt < 300, "; ".join(parts) + f"; {dt:.0f} s")


# -- local isometry ------------------------------------------------------------------


def test_ogse_local_isometry(roll900):
    man, model, test = roll900
    inner = np.flatnonzero(man.is_interior(test.params))
    _, nb = cKDTree(test.points).query(test.points[inner], k=2)
    ratios = []
    for i, j in zip(inner[:50], nb[:50, 1]):
        a, b = test.points[i], test.points[j]
        ratios.append(np.linalg.norm(model.embed(a) - model.embed(b)) / np.linalg.norm(a - b))
    ratios = np.array(ratios)
    frac = np.mean((ratios >= 0.85) & (ratios <= 1.15))
    record("OGSE local isometry", len(ratios) == 50 and frac >= 0.9,
           f"{frac:.0%} of 50 pairs in [0.85, 1.15] (range {ratios.min():.3f}..{ratios.max():.3f})")


# -- determinism ---------------------------------------------------------------------


def test_determinism_and_round_trip(swissroll, roll450):
    again = quiet_fit(swissroll.sample(450, 0).points, q=2, variant="ogse")
    same_fit = model_to_bytes(again) == model_to_bytes(roll450)
    back = model_from_bytes(model_to_bytes(roll450))
    probe = swissroll.sample(20, 7).points
    Y = roll450.embed_many(probe)
    same_q = (np.array_equal(back.embed_many(probe), Y)
              and np.array_equal(back.reconstruct_many(Y), roll450.reconstruct_many(Y))
              and np.array_equal(back.jacobian_G(Y[0]), roll450.jacobian_G(Y[0])))
    record("determinism and round trip", same_fit and same_q,
           f"refit byte-identical: {same_fit}; reloaded queries bit-identical: {same_q}")
