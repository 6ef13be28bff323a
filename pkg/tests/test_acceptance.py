"""Acceptance criteria 1-10, one test each; verdict lines are printed in the terminal summary."""
import itertools
import json
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import VERDICTS
from oracles import center_flood_fill, oracle_verify, sat_box_separation
from partforge.assets import ChairAsset, Part, detect_connections, generate_chair, load_dataset
from partforge.assets.types import MAX_CONNECTIONS
from partforge.cli.config import read_metrics
from partforge.cli.main import main
from partforge.env import ActionOC, AssemblyEnv, Failure, is_fully_assembled, reset, step_oc, verify_selection
from partforge.geom import Pose6D, box_mesh, collide, hull_vertices, min_distance
from partforge.learn import (
    MLP,
    DDQNAgent,
    DistilledQPolicy,
    PointCloudAutoEncoder,
    collect_expert_data,
    ddqn_loss_and_grads,
    ddqn_targets,
    distill_loss,
    finite_difference,
    load_ae,
    load_agent,
)
from partforge.planner import RRTParams, check_motion, plan_full_assembly, rigid_body_space, rrt_connect

CAP = 100_000
TRAIN_CAP = 5_000
N_EXPERTS = 10


@contextmanager
def criterion(n: int, title: str):
    info: dict = {}
    t0 = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        detail = ", ".join(f"{k}={v}" for k, v in info.items())
        VERDICTS[n] = f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {title} ({detail}; {time.perf_counter() - t0:.0f} s)"
        print(VERDICTS[n])


def run(*argv):
    code = main([str(a) for a in argv])
    assert code == 0, f"partforge {argv[0]} exited with {code}"


# -- shared desk-scale experiment ---------------------------------------------------

def _expert_ids(manifest, chairs):
    """Ten training chairs covering both difficulty levels, smallest first within each."""
    hard = sorted(manifest.hard_train, key=lambda i: (chairs[i].n_parts, i))[:3]
    easy = sorted(manifest.easy_train, key=lambda i: (chairs[i].n_parts, i))[:N_EXPERTS - len(hard)]
    return sorted(easy + hard)


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    ds = root / "ds"
    run("gen-dataset", "--n-chairs", 40, "--seed", 0, "--out", ds)
    run("train-ae", "--dataset", ds, "--epochs", 30, "--out", root / "ae")
    manifest, chairs = load_dataset(ds)
    ids = _expert_ids(manifest, chairs)
    ae = root / "ae/ae.bin"
    t0 = time.perf_counter()
    run("train-single", "--dataset", ds, "--ae", ae, "--chairs", ",".join(map(str, ids)), "--max-states", TRAIN_CAP,
        "--eval-every", 1000, "--eval-episodes", 10, "--out", root / "experts")
    train_s = time.perf_counter() - t0
    run("distill", "--dataset", ds, "--ae", ae, "--experts", root / "experts", "--out", root / "policy")
    for tag in ("a", "b"):
        run("eval", "--dataset", ds, "--ae", ae, "--policy", root / "policy/policy.bin", "--split", "test",
            "--episodes", 1, "--max-states", CAP, "--out", root / f"eval_{tag}")
        run("baseline", "--dataset", ds, "--split", "test", "--max-states", CAP, "--out", root / f"base_{tag}")
        run("report", root / "eval_a", root / "base_a", "--out", root / f"report_{tag}")
    run("gen-dataset", "--n-chairs", 40, "--seed", 0, "--out", root / "ds_again")
    return {"root": root, "ids": ids, "chairs": chairs, "manifest": manifest, "train_seconds": train_s}


# -- 1 ------------------------------------------------------------------------------

def _random_box_pair(rng):
    ha, hb = rng.uniform(0.05, 0.5, 3), rng.uniform(0.05, 0.5, 3)
    pa = Pose6D(*rng.uniform(-0.6, 0.6, 3), *rng.uniform(-np.pi, np.pi, 3))
    pb = Pose6D(*rng.uniform(-0.6, 0.6, 3), *rng.uniform(-np.pi, np.pi, 3))
    return ha, hb, pa, pb


def test_1_geometry_oracle_suite():
    with criterion(1, "collision vs separating-axis oracle on 10 000 box pairs") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        agree = checked = skipped = 0
        symmetric = consistent = True
        while checked < 10_000:
            ha, hb, pa, pb = _random_box_pair(rng)
            s = sat_box_separation(pa.translation, pa.rotation, ha, pb.translation, pb.rotation, hb)
            if abs(s) <= 1e-6:
                skipped += 1
                continue
            A, B = box_mesh(2 * ha), box_mesh(2 * hb)
            hit = collide(A, pa, B, pb)
            agree += hit == (s < 0)
            checked += 1
            dab, dba = min_distance(A, pa, B, pb)[0], min_distance(B, pb, A, pa)[0]
            symmetric &= dab == dba
            consistent &= hit == (dab <= 1e-6)
        elapsed = time.perf_counter() - t0
        info.update(agreement=f"{agree}/{checked}", margin_skipped=skipped, symmetric=symmetric,
                    runtime=f"{elapsed:.1f}s")
        assert agree == checked and symmetric and consistent
        assert elapsed < 60


# -- 2 ------------------------------------------------------------------------------

def test_2_annotation_recovery():
    with criterion(2, "connection detection recovers generator adjacency on 50 chairs") as info:
        exact = frames = 0
        chairs = [generate_chair(3000 + s, "easy" if s % 2 else "hard", max_parts=12) for s in range(50)]
        for chair in chairs:
            bare = ChairAsset(chair.id, tuple(Part(p.id, p.mesh) for p in chair.parts), chair.gt_poses)
            found = detect_connections(bare)
            exact += found.adjacent_part_pairs() == set(chair.intended_pairs)
            for p in found.parts:
                for c in p.connections:
                    n, t = np.array(c.normal), np.array(c.tangent)
                    assert len(c.position) + len(c.normal) + len(c.tangent) == 9
                    frames += (abs(np.linalg.norm(n) - 1) < 1e-9 and abs(np.linalg.norm(t) - 1) < 1e-9
                               and abs(n @ t) < 1e-9)
        total = sum(len(p.connections) for c in chairs for p in c.parts)
        info.update(exact_chairs=f"{exact}/50", valid_descriptors=f"{frames}/{total}")
        assert exact == 50 and frames == total


# -- 3 ------------------------------------------------------------------------------

def _enumerate(state, counts):
    chair = state.chair
    roots = [state.groups.find(x) for x in range(chair.n_parts)]
    for u, v in itertools.product(range(chair.n_parts), repeat=2):
        for k, l in itertools.product(range(MAX_CONNECTIONS), repeat=2):
            got = verify_selection(state, u, v, k, l)
            want = oracle_verify(chair, state.roles, roots, state.used, u, v, k, l)
            counts["cases"] += 1
            counts["match"] += got == want
            counts["substitutions"] += bool(want[0] and want[1] != state.roles[u])


def test_3_step_function_oracle_equivalence():
    with criterion(3, "verify_selection vs brute-force oracle, exhaustive on 10 chairs") as info:
        counts = {"cases": 0, "match": 0, "substitutions": 0}
        chairs, seed = [], 0
        while len(chairs) < 10:
            c = generate_chair(seed, "easy")
            seed += 1
            if c.n_parts <= 5:
                chairs.append(c)
        params = RRTParams(max_states=20_000)
        for chair in chairs:
            state = reset(chair, 0)
            _enumerate(state, counts)
            for a in chair.assembly_order:
                state = step_oc(state, ActionOC(*a), params).next_state
                _enumerate(state, counts)
        info.update(cases=counts["cases"], matched=counts["match"], substitution_cases=counts["substitutions"])
        assert counts["match"] == counts["cases"]
        assert counts["substitutions"] > 0


# -- 4 ------------------------------------------------------------------------------

def test_4_reward_ledger(desk):
    with criterion(4, "scripted ground-truth rollouts earn M-2+5 and failures pay 0") as info:
        params = RRTParams(max_states=20_000)
        exact = failures = 0
        chairs = desk["chairs"]
        for cid in sorted(chairs):
            chair = chairs[cid]
            state, total = reset(chair, cid), 0.0
            for a in chair.assembly_order:
                res = step_oc(state, ActionOC(*a), params)
                total += res.reward
                state = res.next_state
            exact += total == chair.n_parts - 2 + 5 and is_fully_assembled(state)
            # one failing step per chair: repeat the first selection after it has been consumed
            s0 = reset(chair, cid)
            first = ActionOC(*chair.assembly_order[0])
            s1 = step_oc(s0, first, params).next_state
            bad = step_oc(s1, first, params)
            assert bad.failure != Failure.NONE and bad.reward == 0 and bad.done
            failures += 1
            # random valid-mask actions: every failure pays 0 and ends the episode
            env, rng = AssemblyEnv(chair, planner=RRTParams(max_states=2_000)), np.random.default_rng(cid)
            s = env.reset(cid)
            for _ in range(chair.n_parts - 1):
                cols = np.flatnonzero(env.mask(s))
                if len(cols) == 0:
                    break
                r = env.step(s, int(rng.choice(cols)))
                if r.failure != Failure.NONE:
                    assert r.reward == 0 and r.done
                    failures += 1
                    break
                s = r.next_state
        info.update(exact_chairs=f"{exact}/{len(chairs)}", failure_steps=failures)
        assert exact == len(chairs)


# -- 5 ------------------------------------------------------------------------------

def _sealed_scene(rng):
    c = rng.uniform(-0.5, 0.5, 2)
    half, wall, z0 = rng.uniform(0.2, 0.35), rng.uniform(0.03, 0.06), rng.uniform(0.05, 0.2)
    top = z0 + 2 * half
    lo, hi = np.r_[c - half, z0], np.r_[c + half, top]
    walls = [(lo, np.r_[hi[:2], z0 + wall]), (np.r_[lo[:2], top - wall], hi),
             (lo, np.r_[lo[0] + wall, hi[1:]]), (np.r_[hi[0] - wall, lo[1:]], hi),
             (lo, np.r_[hi[0], lo[1] + wall, hi[2]]), (np.r_[lo[0], hi[1] - wall, lo[2]], hi)]
    goal = np.r_[c, z0 + half, rng.uniform(-np.pi, np.pi, 3)]
    start = np.r_[c + 1.2, 0.3, 0, 0, 0]
    return walls, start, goal


def test_5_planner_caps_and_counters(desk):
    with criterion(5, "planner cap, half-resolution revalidation, sealed goals") as info:
        report = (desk["root"] / "base_a/planner_report.csv").read_text().splitlines()[1:]
        worst = max(int(line.split(",")[3]) for line in report)
        revalidated = 0
        for layout, seed in (("pedestal", 3), ("bench", 1), ("panel", 0)):
            chair = generate_chair(seed, "easy", layout=layout)
            params = RRTParams(seed=seed)
            out = plan_full_assembly(chair, reset(chair, seed).poses, params)
            assert out.success and out.states_attempted <= CAP
            space = rigid_body_space([[hull_vertices(p.mesh)] for p in chair.parts])
            half = (params.resolution_translation / 2, params.resolution_rotation / 2)
            assert all(check_motion(space, a, b, half) for a, b in zip(out.path[:-1], out.path[1:]))
            revalidated += 1
        cube = np.array(list(itertools.product((-0.05, 0.05), repeat=3)))
        rng, sealed = np.random.default_rng(5), 0
        for i in range(5):
            walls, start, goal = _sealed_scene(rng)
            assert not center_flood_fill(walls, start[:3], goal[:3], (-2.5, -2.5, -0.05), (2.5, 2.5, 1.5))
            space = rigid_body_space([[cube]], [np.array(list(itertools.product(*zip(a, b)))) for a, b in walls])
            out = rrt_connect(space, start, goal, RRTParams(seed=i, max_states=3000))
            sealed += not out.success and out.states_attempted == 3000
        info.update(max_baseline_states=worst, revalidated_paths=revalidated, sealed_nopath=f"{sealed}/5")
        assert worst <= CAP and sealed == 5


# -- 6 ------------------------------------------------------------------------------

def _rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def test_6_gradient_checks():
    with criterion(6, "AE and Q-network gradients vs central differences") as info:
        t0 = time.perf_counter()
        ae = PointCloudAutoEncoder(n_points=12, feature_dim=8, encoder_hidden=(6, 7), decoder_hidden=(9,))
        ae._init_nets(np.float64)
        X = np.random.default_rng(3).normal(size=(4, 12, 3))
        _, grads = ae.loss_and_grads(X)
        num = finite_difference(lambda: ae.loss_and_grads(X)[0], ae.params_, eps=1e-4)
        ae_err = max(_rel_err(grads[p].reshape(-1)[j], g) for p, j, g in num)

        rng = np.random.default_rng(7)
        online, target = MLP((5, 6, 7), seed=3, dtype=np.float64), MLP((5, 6, 7), seed=4, dtype=np.float64)
        batch = {"s": rng.normal(size=(6, 5)), "a": rng.integers(0, 7, 6), "r": rng.integers(0, 2, 6).astype(float),
                 "s2": rng.normal(size=(6, 5)), "done": np.array([0, 1, 0, 0, 1, 0], bool),
                 "valid2": [np.sort(rng.choice(7, 3, replace=False)) for _ in range(6)]}
        _, qgrads = ddqn_loss_and_grads(online, target, batch, 0.95)
        y = ddqn_targets(online, target, batch, 0.95)
        dense = []
        for g, p in zip(qgrads, online.params):
            if isinstance(g, tuple):
                full = np.zeros(p.shape)
                full[..., g[0]] = g[1]
                g = full
            dense.append(g)

        def qloss():
            q = online.forward(batch["s"])[np.arange(6), batch["a"]]
            return float(np.mean((q - y) ** 2))

        num = finite_difference(qloss, online.params)
        q_err = max(_rel_err(dense[p].reshape(-1)[j], g) for p, j, g in num)
        elapsed = time.perf_counter() - t0
        info.update(ae_max_rel_err=f"{ae_err:.1e}", qnet_max_rel_err=f"{q_err:.1e}", runtime=f"{elapsed:.1f}s")
        assert ae_err < 1e-3 and q_err < 1e-3 and elapsed < 120


# -- 7 ------------------------------------------------------------------------------

def test_7_learning_smoke(desk):
    with criterion(7, "DDQN on a 4-part chair, >= 80% greedy success in >= 3 of 5 seeds") as info:
        ae = load_ae(desk["root"] / "ae/ae.bin")
        chair = generate_chair(0, "easy", layout="panel")
        assert chair.n_parts == 4
        t0 = time.perf_counter()
        rates, steps = [], []
        for seed in range(5):
            agent = DDQNAgent(ae, budget=40_000, random_state=seed).fit(chair)
            rates.append(agent.success_rate_)
            steps.append(agent.n_steps_)
        elapsed = time.perf_counter() - t0
        good = sum(r >= 0.8 for r in rates)
        info.update(success=rates, steps=steps, seeds_ok=f"{good}/5", runtime=f"{elapsed / 60:.1f}min on 1 core")
        assert good >= 3
        assert elapsed < 30 * 60


# -- 8 ------------------------------------------------------------------------------

def test_8_distillation_properties(desk):
    with criterion(8, "distillation loss properties, memorisation, 10-expert agreement") as info:
        rng = np.random.default_rng(8)
        for _ in range(200):
            qp, qe = rng.normal(size=20), rng.normal(size=20)
            assert distill_loss(qp, qe)[1] >= 0
            assert distill_loss(qe, qe) == (0.0, 0.0, 0.0)
        ae = load_ae(desk["root"] / "ae/ae.bin")
        expert = load_agent(desk["root"] / f"experts/expert_{desk['ids'][0]}.bin", ae)
        data = collect_expert_data(expert, desk["chairs"][expert.chair_id_], ae, augment=0)
        X, Q, q_row, index, valid = data.arrays()
        single = DistilledQPolicy(epochs=60, learning_rate=1e-3).fit(X, Q, expert_index=index, q_row=q_row)
        memo = single.agreement(X, index, valid)
        report = json.loads((desk["root"] / "policy/distill_report.json").read_text())
        info.update(single_expert=f"{memo:.3f}", experts=len(report["experts"]),
                    held_in=f"{report['held_in_agreement']:.3f}", held_out=f"{report['held_out_agreement']:.3f}")
        assert memo >= 0.99
        assert len(report["experts"]) == N_EXPERTS and report["held_in_agreement"] >= 0.90


# -- 9 ------------------------------------------------------------------------------

def test_9_directional_table(desk):
    with criterion(9, "distilled policy vs whole-assembly baseline on 8 unseen chairs") as info:
        ours = read_metrics(desk["root"] / "eval_a/metrics.csv")[0]
        base = read_metrics(desk["root"] / "base_a/metrics.csv")[0]
        assert (ours.method, ours.split, base.method, base.split) == ("ours_oc", "test", "baseline_oc", "test")
        assert len(desk["manifest"].test) == 8
        info.update(policy_success=f"{ours.success_rate:.1f}%", baseline_success=f"{base.success_rate:.1f}%",
                    policy_states=f"{ours.plan_steps:.1f}", baseline_states=f"{base.plan_steps:.1f}",
                    planner_cap=CAP)
        assert base.plan_steps > ours.plan_steps
        assert ours.success_rate > base.success_rate


# -- 10 -----------------------------------------------------------------------------

def test_10_determinism(desk):
    with criterion(10, "reruns emit byte-identical metrics") as info:
        root = desk["root"]
        same = {}
        for name in ("eval", "base", "report"):
            same[name] = (root / f"{name}_a/metrics.csv").read_bytes() == (root / f"{name}_b/metrics.csv").read_bytes()
        same["dataset"] = all(f.read_bytes() == (root / "ds_again" / f.name).read_bytes()
                              for f in (root / "ds").iterdir() if f.name != "run.json")
        info.update(**{k: v for k, v in same.items()})
        assert all(same.values())
