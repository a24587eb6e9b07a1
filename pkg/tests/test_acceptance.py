"""Acceptance criteria 1-11, each printed as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines go to the terminal
even when output capture is on.
"""

import filecmp
import itertools
import math

import numpy as np
import pytest

from mcensemble import harness
from mcensemble.blackbox import OpaquePolicy, conditional_dominance_report, run_blackbox
from mcensemble.core import ConditioningEvent, Dataset, PatchedModel, PolicyLevelSet, rowdot
from mcensemble.debias import apply_patch, check_consistency, event_bias
from mcensemble.oracle import CovarianceConstrained, LinearCapped, solve_batch
from mcensemble.synthlab import GBTParams, GeneratorConfig, LabelMean, generate, make_coordinate_specialists
from mcensemble.whitebox import run_whitebox

from conftest import TableBase, default_run
from oracle_refs import kkt_stationarity, lp_vertices, simplex_grid

EXPERIMENTS = ("A", "B", "C", "D")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def wb_quantities(report):
    """Self-assessments, realized payoffs and argmax recomputed from the terminal white-box models."""
    art = report._artifacts
    region, Y = art["region"], art["debias"].labels
    H = [m.values for m in art["ensemble"].models]
    acts = [solve_batch(region, h) for h in H]
    S = np.column_stack([np.einsum("ij,ij->i", a, h) for a, h in zip(acts, H)])
    istar = np.argmax(S, axis=1)
    rows = np.arange(len(Y))
    chosen = np.stack(acts)[istar, rows]
    return {"acts": acts, "istar": istar, "S": S, "realized": float(np.einsum("ij,ij->i", chosen, Y).mean()),
            "self": float(S[rows, istar].mean()), "k": len(H), "d": Y.shape[1], "M": art["debias"].M,
            "alpha": report.config["alpha"]}


# 1 ---------------------------------------------------------------------------

def test_c01_patch_drop_exact(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        n, d, M = int(rng.integers(3, 80)), int(rng.integers(1, 7)), float(rng.uniform(0.5, 5))
        pred = rng.uniform(0.3 * M, 0.7 * M, (n, d))
        Y = np.clip(pred + rng.uniform(-0.1 * M, 0.1 * M, (n, d)), 0, M)
        data = Dataset(np.arange(n, dtype=float)[:, None], Y, np.zeros(n, dtype=int), M, 1)
        model = PatchedModel(TableBase(pred), M).bind(data)
        size = int(rng.integers(1, n + 1))
        # membership tagged as bucket 1 of a probe policy
        ev = ConditioningEvent(np.sort(rng.choice(n, size, replace=False)), PolicyLevelSet("probe", 0, 1, 1), n)
        rep = event_bias(data, model, ev)
        before = np.sum((model.values - Y) ** 2) / n
        apply_patch(data, model, rep)
        after = np.sum((model.values - Y) ** 2) / n
        assert np.all((model.values > 0) & (model.values < M))
        expect = ev.mass * float(np.sum(rep.bias ** 2))
        if expect > 0:
            worst = max(worst, abs((before - after) - expect) / expect)
    verdict(1, worst <= 1e-9, f"max relative error {worst:.2e} over 1000 triples (tol 1e-9)")


# 2 ---------------------------------------------------------------------------

def test_c02_convergence_bounds(verdict):
    lines, ok = [], True
    for e in EXPERIMENTS:
        r = default_run(e)
        ch = r.checks
        ok &= ch["wb_update_invocations"] <= ch["wb_invocation_limit"]
        ok &= all(t.n_patches <= ch["patch_limit"] for t in r._artifacts["wb_info"].traces)
        ok &= r.blackbox.n_patches <= ch["patch_limit"]
    lines.append("default runs within bounds" if ok else "default run over bound")

    alpha, M = 0.02, 1.0
    train, debias = generate(GeneratorConfig(seed=7, n_train=1500, n_debias=400, d=4))
    region = CovarianceConstrained.from_labels(train.labels)
    bases = make_coordinate_specialists(train, GBTParams(n_estimators=20))
    k, d = len(bases), debias.d
    models = [PatchedModel(b, M, f"h{i}").bind(debias) for i, b in enumerate(bases)]
    acts = [solve_batch(region, m.values) for m in models]
    _, wb = run_whitebox([m.copy() for m in models], debias, region, alpha)
    pols = [OpaquePolicy(f"pi{i}", a) for i, a in enumerate(acts)]
    _, bb = run_blackbox(PatchedModel(LabelMean.fit(train), M), pols, debias, region, alpha)
    limit = d * M * M / alpha ** 2
    stress = (wb.invocations <= k * limit and all(t.n_patches <= limit for t in wb.traces)
              and bb.n_patches <= limit)
    lines.append(f"stress alpha=0.02: wb {wb.invocations} invocations (limit {k * limit:.0f}), "
                 f"bb {bb.n_patches} patches (limit {limit:.0f})")
    verdict(2, ok and stress, "; ".join(lines))


# 3 ---------------------------------------------------------------------------

def test_c03_terminal_consistency(verdict):
    worst = {}
    ok = True
    for e in EXPERIMENTS:
        r = default_run(e)
        art, alpha = r._artifacts, r.config["alpha"]
        data = art["debias"]
        scores = [check_consistency(data, m, f, alpha).max_score
                  for m, f in zip(art["ensemble"].models, art["wb_info"].final_families)]
        scores.append(check_consistency(data, art["model"], art["bb_info"].final_family, alpha).max_score)
        worst[e] = max(scores)
        ok &= worst[e] <= alpha
    verdict(3, ok, "max score " + ", ".join(f"{e}={v:.3g}" for e, v in worst.items()) + " (alpha 1e-05)")


# 4 ---------------------------------------------------------------------------

def test_c04_self_consistency(verdict):
    parts, ok = [], True
    for e in EXPERIMENTS:
        r = default_run(e)
        q = wb_quantities(r)
        art = r._artifacts
        region, data = art["region"], art["debias"]
        h = art["model"].values
        a = solve_batch(region, h)
        bb_gap = abs(rowdot(a, h).mean() - rowdot(a, data.labels).mean())
        wb_gap = abs(q["self"] - q["realized"])
        bb_bound = 2 * q["d"] * math.sqrt(q["alpha"] * q["M"])
        wb_bound = 2 * q["d"] * math.sqrt(q["alpha"] * q["k"] * q["M"])
        ok &= bb_gap <= bb_bound and wb_gap <= wb_bound
        parts.append(f"{e}: bb {bb_gap:.2e}<={bb_bound:.2e} wb {wb_gap:.2e}<={wb_bound:.2e}")
    verdict(4, ok, "; ".join(parts))


# 5 ---------------------------------------------------------------------------

def test_c05_pointwise_max(verdict):
    parts, ok = [], True
    for e in EXPERIMENTS:
        q = wb_quantities(default_run(e))
        target = q["S"].max(axis=1).mean() - 2 * q["d"] * math.sqrt(q["alpha"] * q["k"] * q["M"])
        ok &= q["realized"] >= target
        parts.append(f"{e}: {q['realized']:.6f}>={target:.6f}")
    verdict(5, ok, "; ".join(parts))


# 6 ---------------------------------------------------------------------------

def test_c06_swap_bound(verdict):
    parts, ok = [], True
    for e in EXPERIMENTS:
        q = wb_quantities(default_run(e))
        k, Y = q["k"], default_run(e)._artifacts["debias"].labels
        if k <= 4:
            maps = list(itertools.product(range(k), repeat=k))
        else:
            rng = np.random.default_rng(0)
            maps = [tuple(range(k))] + [(c,) * k for c in range(k)] + \
                   [tuple(rng.integers(0, k, k)) for _ in range(100)]
        stacked = np.stack(q["acts"])
        rows = np.arange(len(Y))
        best = max(float(np.einsum("ij,ij->i", stacked[np.asarray(phi)[q["istar"]], rows], Y).mean())
                   for phi in maps)
        slack = 4 * q["d"] * math.sqrt(q["alpha"] * k * q["M"])
        ok &= q["realized"] >= best - slack
        parts.append(f"{e}: {len(maps)} maps, {q['realized']:.6f}>={best - slack:.6f}")
    verdict(6, ok, "; ".join(parts))


# 7 ---------------------------------------------------------------------------

def test_c07_conditional_dominance(verdict):
    counts = {}
    for e in EXPERIMENTS:
        r = default_run(e)
        art = r._artifacts
        rows = conditional_dominance_report(art["model"], art["policies"], art["debias"], art["region"],
                                            art["bb_info"].bucketing, r.config["alpha"], mass_floor=0.05)
        counts[e] = (sum(row.flag for row in rows), len(rows))
    ok = all(f == 0 for f, _ in counts.values())
    verdict(7, ok, "flagged/rows " + ", ".join(f"{e}={f}/{n}" for e, (f, n) in counts.items()))


# 8 ---------------------------------------------------------------------------

def test_c08_oracle_correctness(verdict):
    rng = np.random.default_rng(8)
    lp_err = 0.0
    for _ in range(200):
        caps = []
        for _ in range(int(rng.integers(0, 4))):
            idx = tuple(sorted(rng.choice(4, int(rng.integers(1, 5)), replace=False).tolist()))
            caps.append((idx, float(rng.uniform(0.1, len(idx)))))
        region = LinearCapped(4, caps)
        c = rng.normal(size=4)
        got = float(solve_batch(region, c[None])[0] @ c)
        lp_err = max(lp_err, abs(got - (lp_vertices(caps, 4) @ c).max()))

    grid = simplex_grid(4, 0.01)
    cov_gap, kkt = -np.inf, 0.0
    for _ in range(10):
        G = rng.normal(size=(4, 4))
        region = CovarianceConstrained(G @ G.T + 0.05 * np.eye(4))
        C, rho = region.cov, region.risk_bound
        feas = grid[np.einsum("ni,ij,nj->n", grid, C, grid) <= rho]
        rand = []
        while sum(len(r) for r in rand) < 100_000:
            x = rng.dirichlet(np.full(4, 0.5), 100_000)
            rand.append(x[np.einsum("ni,ij,nj->n", x, C, x) <= rho])
        pts = np.vstack([feas, np.vstack(rand)[:100_000]])
        coeffs = rng.normal(size=(20, 4))
        acts = solve_batch(region, coeffs)
        assert region.residuals(acts).max() <= 1e-9
        cov_gap = max(cov_gap, float(((pts @ coeffs.T).max(axis=0) - np.einsum("ij,ij->i", acts, coeffs)).max()))
        kkt = max(kkt, max(kkt_stationarity(C, rho, c, a) for c, a in zip(coeffs, acts)))
    ok = lp_err <= 1e-8 and cov_gap <= 1e-3 and kkt <= 1e-6
    verdict(8, ok, f"LP max error {lp_err:.1e} (tol 1e-8); covariance: best sampled point exceeds solver by "
                   f"{cov_gap:.1e} (tol 1e-3), KKT residual {kkt:.1e} (tol 1e-6)")


# 9 ---------------------------------------------------------------------------

def test_c09_headline_payoffs(verdict):
    parts, beats, near = [], True, 0
    for e in EXPERIMENTS:
        r = default_run(e)
        beats &= r.whitebox.final_realized >= r.best_initial and r.blackbox.final_realized >= r.best_initial
        frac = r.whitebox.final_realized / r.clairvoyant
        near += frac >= 0.95
        parts.append(f"{e}: best initial {r.best_initial:.4f} wb {r.whitebox.final_realized:.4f} "
                     f"bb {r.blackbox.final_realized:.4f} wb/clairvoyant {frac:.4f}")
    if near < 3:
        # fall back to a majority over five seeds
        wins = 0
        for seed in range(5):
            fr = [harness.run_experiment(harness.ExperimentConfig(e, seed=seed)) for e in EXPERIMENTS]
            wins += sum(x.whitebox.final_realized >= 0.95 * x.clairvoyant for x in fr) >= 3
        near_ok = wins >= 3
        parts.append(f"95% held at {wins}/5 seeds")
    else:
        near_ok = True
    verdict(9, beats and near_ok, f"{near}/4 at >=95% of clairvoyant; " + "; ".join(parts))


# 10 --------------------------------------------------------------------------

def test_c10_efficiency(verdict):
    parts, ok = [], True
    for e in EXPERIMENTS:
        wb, bb = default_run(e).whitebox, default_run(e).blackbox
        ok &= bb.solves < wb.solves and bb.wall_seconds < wb.wall_seconds
        parts.append(f"{e}: solves bb {bb.solves} vs wb {wb.solves}, wall bb {bb.wall_seconds:.3f}s "
                     f"vs wb {wb.wall_seconds:.3f}s")
    verdict(10, ok, "; ".join(parts))


# 11 --------------------------------------------------------------------------

def test_c11_determinism(verdict, tmp_path):
    parts, ok = [], True
    for e in EXPERIMENTS:
        first, second = tmp_path / f"{e}1", tmp_path / f"{e}2"
        harness.write_run_artifacts(default_run(e), first)
        harness.write_run_artifacts(harness.run_experiment(harness.ExperimentConfig(e)), second)
        names = sorted(p.name for p in first.iterdir())
        _, mismatch, errors = filecmp.cmpfiles(first, second, names, shallow=False)
        ok &= not mismatch and not errors and "payoff_convergence.svg" in names
        parts.append(f"{e}: {len(names)} files, {len(mismatch) + len(errors)} differ")
    verdict(11, ok, "; ".join(parts))
