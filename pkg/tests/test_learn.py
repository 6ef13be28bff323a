import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import chisquare

from oracles import dense_chamfer
from partforge.assets import generate_chair
from partforge.env import AssemblyEnv, reset
from partforge.errors import CapExceeded, NoValidAction, SchemaVersionMismatch
from partforge.geom import Pose6D, box_mesh, sample_point_cloud
from partforge.learn import (
    MLP,
    Adam,
    DDQNAgent,
    DistilledQPolicy,
    PointCloudAutoEncoder,
    ReplayBuffer,
    batch_chamfer,
    build_state_encoding,
    chamfer,
    collect_expert_data,
    ddqn_loss_and_grads,
    ddqn_targets,
    ddqn_update,
    distill_loss,
    encode_part,
    encoding_length,
    finite_difference,
    load_ae,
    load_checkpoint,
    load_qnet,
    normalize_cloud,
    part_clouds,
    q_forward,
    save_ae,
    save_checkpoint,
    save_qnet,
    select_action,
)
from partforge.learn.distill import distill_grad
from partforge.learn.encoding import SLOT_DIM

REL = 1e-3
clouds = arrays(np.float64, st.tuples(st.integers(1, 12), st.just(3)),
                elements=st.floats(-1, 1, allow_nan=False, width=64))


def _rel_err(analytic, numeric):
    return abs(analytic - numeric) / max(1e-6, abs(analytic) + abs(numeric))


def _dense(grad, shape):
    if isinstance(grad, tuple):
        out = np.zeros(shape)
        out[..., grad[0]] = grad[1]
        return out
    return grad


# -- chamfer -----------------------------------------------------------------------

def test_chamfer_examples():
    a = np.random.default_rng(0).normal(size=(20, 3))
    assert chamfer(a, a) == 0.0
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0, 0]])) == pytest.approx(2.0)


def test_chamfer_matches_brute_force():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b = rng.normal(size=(64, 3)), rng.normal(size=(64, 3))
        assert abs(chamfer(a, b) - dense_chamfer(a, b)) < 1e-7


@settings(max_examples=60, deadline=None)
@given(clouds, clouds)
def test_chamfer_properties(a, b):
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), abs=1e-12)
    assert chamfer(a, b) >= 0 and chamfer(a, a) == 0


def test_batch_chamfer_matches_single_and_gradient():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(3, 9, 3)), rng.normal(size=(3, 7, 3))
    loss, grad = batch_chamfer(x, y)
    assert np.allclose(loss, [dense_chamfer(x[i], y[i]) for i in range(3)], atol=1e-12)
    num = finite_difference(lambda: batch_chamfer(x, y)[0].sum(), [y])
    assert max(_rel_err(grad.reshape(-1)[j], g) for _, j, g in num) < REL


# -- autoencoder -------------------------------------------------------------------

def test_ae_gradients_match_finite_differences():
    ae = PointCloudAutoEncoder(n_points=10, feature_dim=8, encoder_hidden=(6, 7), decoder_hidden=(9,))
    ae._init_nets(np.float64)
    X = np.random.default_rng(3).normal(size=(4, 10, 3))
    _, grads = ae.loss_and_grads(X)
    num = finite_difference(lambda: ae.loss_and_grads(X)[0], ae.params_, eps=1e-4)
    errs = [_rel_err(grads[p].reshape(-1)[j], g) for p, j, g in num]
    assert max(errs) < REL


@pytest.fixture(scope="module")
def cube_run():
    cloud = normalize_cloud(sample_point_cloud(box_mesh((0.1, 0.1, 0.1)), 256, 0).points)
    return PointCloudAutoEncoder(epochs=200).fit(np.repeat(cloud[None], 100, axis=0))


@pytest.mark.xfail(strict=True, reason="Chamfer matching settles in a collapse minimum near 1.6e-3")
def test_ae_memorizes_identical_cubes(cube_run):
    assert cube_run.final_loss_ < 1e-3


def test_ae_cube_run_converges(cube_run):
    assert cube_run.final_loss_ < 1e-3 * cube_run.initial_loss_
    assert cube_run.loss_curve_[-1] <= cube_run.loss_curve_[20] * 1.1  # plateaued, not diverging


def test_ae_training_reduces_loss_tenfold():
    chairs = [generate_chair(s, "easy") for s in range(6)]
    X = part_clouds(chairs, orientations=4)
    assert len(X) >= 100
    ae = PointCloudAutoEncoder(epochs=30).fit(X)
    assert ae.final_loss_ < 0.1 * ae.initial_loss_
    assert len(ae.loss_curve_) == 30


@pytest.fixture(scope="module")
def ae():
    chairs = [generate_chair(s, "easy") for s in range(4)]
    return PointCloudAutoEncoder(epochs=20).fit(part_clouds(chairs, orientations=3))


def test_encoder_shape_and_permutation_invariance(ae):
    rng = np.random.default_rng(4)
    for m in (5, 256, 700):
        X = rng.uniform(-0.5, 0.5, (2, m, 3))
        f = ae.transform(X)
        assert f.shape == (2, 128)
        assert np.array_equal(ae.transform(X[:, rng.permutation(m)]), f)


def test_encode_part_deterministic_and_siblings(ae):
    chair = generate_chair(0, "easy")
    pose = Pose6D(0.3, 0.1, 0.0, 0.2, -0.4, 1.0)
    a = encode_part(ae, chair.parts[1], pose)
    assert np.array_equal(a, encode_part(ae, chair.parts[1], pose))
    assert np.array_equal(a, encode_part(ae, chair.parts[2], pose))  # same leg mesh


def test_ae_input_validation(ae):
    with pytest.raises(ValueError):
        ae.transform(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        PointCloudAutoEncoder(n_points=8).fit(np.zeros((4, 9, 3)))


# -- encoding ----------------------------------------------------------------------

def test_encoding_layout_and_padding(ae):
    chair = generate_chair(0, "easy")
    state = reset(chair, 0)
    feats = np.ones((5, 128))
    enc = build_state_encoding(state, feats, max_parts=8)
    assert enc.shape == (encoding_length(8),) == (1552,)
    assert encoding_length(20) == 5320
    slots = enc[:8 * SLOT_DIM].reshape(8, SLOT_DIM)
    assert not slots[5:].any()
    assert np.array_equal(slots[2, 140:], state.poses[2].as_array().astype(np.float32))
    tensor = enc[8 * SLOT_DIM:].reshape(8, 8, 6)
    assert not tensor[5:].any() and not tensor[:, 5:].any()


def test_encoding_locality():
    chair = generate_chair(0, "easy")
    state = reset(chair, 0)
    feats = np.zeros((5, 128))
    other = state.copy()
    other.poses[3] = Pose6D(1, 2, 3, 0.1, 0.2, 0.3)
    diff = np.flatnonzero(build_state_encoding(state, feats) != build_state_encoding(other, feats))
    lo = 3 * SLOT_DIM + 140
    assert set(diff) <= set(range(lo, lo + 6)) and len(diff) > 0


def test_encoding_caps():
    chair = generate_chair(0, "hard")
    state = reset(chair, 0)
    with pytest.raises(CapExceeded):
        build_state_encoding(state, np.zeros((chair.n_parts, 128)), max_parts=chair.n_parts - 1)
    with pytest.raises(CapExceeded):
        build_state_encoding(state, np.zeros((chair.n_parts, 128)), max_parts=20, max_connections=1)


# -- Q network ---------------------------------------------------------------------

def test_zero_weights_give_zero_q():
    net = MLP((10, 8, 6))
    for p in net.params:
        p[...] = 0
    assert not q_forward(net, np.ones(10)).any()


def test_batch_equals_singles():
    net = MLP((10, 8, 6), seed=1)
    X = np.random.default_rng(5).normal(size=(2, 10)).astype(np.float32)
    batch = q_forward(net, X)
    assert np.allclose(batch[0], q_forward(net, X[0]), atol=1e-6)
    assert np.allclose(batch[1], q_forward(net, X[1]), atol=1e-6)


def test_mlp_gradients_match_finite_differences():
    net = MLP((5, 7, 6, 4), seed=2, dtype=np.float64)
    rng = np.random.default_rng(6)
    x, c = rng.normal(size=(3, 5)), rng.normal(size=(3, 4))
    _, acts = net.forward(x, return_cache=True)
    grads, gx = net.backward(acts, c)
    num = finite_difference(lambda: float((net.forward(x) * c).sum()), net.params + [x])
    dense = grads + [gx]
    assert max(_rel_err(dense[p].reshape(-1)[j], g) for p, j, g in num) < REL


def _toy_batch(rng, n=6, dim=5, A=7, done=None):
    return {
        "s": rng.normal(size=(n, dim)), "a": rng.integers(0, A, n), "r": rng.integers(0, 2, n).astype(float),
        "s2": rng.normal(size=(n, dim)),
        "done": np.zeros(n, bool) if done is None else done,
        "valid2": [np.sort(rng.choice(A, 3, replace=False)) for _ in range(n)],
    }


def test_ddqn_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    online = MLP((5, 6, 7), seed=3, dtype=np.float64)
    target = MLP((5, 6, 7), seed=4, dtype=np.float64)
    batch = _toy_batch(rng)
    _, grads = ddqn_loss_and_grads(online, target, batch, 0.95)
    dense = [_dense(g, p.shape) for g, p in zip(grads, online.params)]
    y = ddqn_targets(online, target, batch, 0.95)

    def loss():  # targets held fixed, as in the semi-gradient update
        q = online.forward(batch["s"])[np.arange(6), batch["a"]]
        return float(np.mean((q - y) ** 2))

    num = finite_difference(loss, online.params)
    assert max(_rel_err(dense[p].reshape(-1)[j], g) for p, j, g in num) < REL


def test_ddqn_targets():
    rng = np.random.default_rng(8)
    online, target = MLP((5, 6, 7), seed=5), MLP((5, 6, 7), seed=6)
    batch = _toy_batch(rng, done=np.array([True, False, False, True, False, False]))
    batch["r"] = np.array([5.0, 1, 1, 0, 1, 0])
    y = ddqn_targets(online, target, batch, 0.95)
    assert y[0] == 5 and y[3] == 0
    for i in (1, 2, 4, 5):
        cols = batch["valid2"][i]
        a_star = cols[np.argmax(online.forward(batch["s2"][i])[cols])]
        assert y[i] == pytest.approx(batch["r"][i] + 0.95 * target.forward(batch["s2"][i])[a_star], rel=1e-5)
    # decoupling: a new target network changes only the value read at the same a*
    other = MLP((5, 6, 7), seed=99)
    y2 = ddqn_targets(online, other, batch, 0.95)
    for i in (1, 2, 4, 5):
        cols = batch["valid2"][i]
        a_star = cols[np.argmax(online.forward(batch["s2"][i])[cols])]
        assert y2[i] == pytest.approx(batch["r"][i] + 0.95 * other.forward(batch["s2"][i])[a_star], rel=1e-5)


def test_ddqn_update_reduces_loss():
    rng = np.random.default_rng(9)
    online = MLP((5, 16, 7), seed=7)
    target = online.copy()
    batch = _toy_batch(rng, done=np.ones(6, bool))
    opt = Adam(online.params, lr=1e-2)
    first = ddqn_update(online, target, batch, 0.95, opt)
    for _ in range(200):
        last = ddqn_update(online, target, batch, 0.95, opt)
    assert last < 0.01 * first


def test_sparse_adam_matches_dense_on_touched_columns():
    rng = np.random.default_rng(10)
    W = rng.normal(size=(3, 5))
    g = np.zeros_like(W)
    g[:, [1, 3]] = rng.normal(size=(3, 2))
    a, b = [W.copy()], [W.copy()]
    Adam(a).step(a, [g])
    Adam(b).step(b, [(np.array([1, 3]), g[:, [1, 3]])])
    assert np.allclose(a[0], b[0])


# -- action selection --------------------------------------------------------------

def test_select_action_examples():
    q = np.array([0.0, 3.0, 1.0, 9.0])
    mask = np.array([True, True, True, False])
    assert select_action(q, mask, 0.0, 0) == 1  # global max masked out
    assert select_action(np.zeros(4), mask, 0.0, 0) == 0  # tie: lowest index
    with pytest.raises(NoValidAction):
        select_action(q, np.zeros(4, bool), 0.0, 0)


def test_select_action_uniform_exploration():
    mask = np.zeros(20, bool)
    mask[[2, 5, 7, 11, 19]] = True
    rng = np.random.default_rng(11)
    draws = [select_action(np.arange(20.0), mask, 1.0, rng) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=20)
    assert set(np.flatnonzero(counts)) <= {2, 5, 7, 11, 19}
    assert chisquare(counts[mask]).pvalue > 0.01


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 12, elements=st.floats(-5, 5)), arrays(np.bool_, 12))
def test_greedy_selection_respects_mask(q, mask):
    if not mask.any():
        return
    a = select_action(q, mask, 0.0, 0)
    assert mask[a] and q[a] == q[mask].max()


def test_replay_buffer_fifo_and_uniform():
    buf = ReplayBuffer(4, 2)
    for i in range(6):
        buf.add(np.full(2, i), i, 0.0, np.zeros(2), False, [i])
    assert len(buf) == 4 and sorted(buf.a.tolist()) == [2, 3, 4, 5]
    counts = np.bincount(buf.sample(8000, 0)["a"], minlength=6)[2:]
    assert chisquare(counts).pvalue > 0.01


# -- single-task training ----------------------------------------------------------

@pytest.fixture(scope="module")
def pedestal():
    return generate_chair(3, "easy", layout="pedestal")


@pytest.fixture(scope="module")
def pedestal_expert(ae, pedestal):
    return DDQNAgent(ae, budget=4000, eval_every=500, eval_episodes=10, random_state=0).fit(pedestal)


def test_two_part_chair_learned_before_budget(pedestal_expert):
    assert pedestal_expert.success_rate_ == 1.0
    assert pedestal_expert.n_steps_ < pedestal_expert.budget


def test_training_is_reproducible(ae, pedestal):
    kw = dict(budget=300, eval_every=150, eval_episodes=2, learning_starts=64, early_stop=False, random_state=3)
    a = DDQNAgent(ae, **kw).fit(pedestal)
    b = DDQNAgent(ae, **kw).fit(pedestal)
    assert a.history_ == b.history_
    assert all(np.array_equal(x, y) for x, y in zip(a.network_.params, b.network_.params))


def test_agent_api(ae, pedestal_expert, pedestal, tmp_path):
    params = pedestal_expert.get_params()
    assert params["gamma"] == 0.95 and params["batch_size"] == 64
    env = AssemblyEnv(pedestal)
    state = env.reset(0)
    X = build_state_encoding(state, np.zeros((2, 128)))[None]
    mask = env.mask(state)[None]
    a = pedestal_expert.predict(X, mask)
    assert mask[0, a[0]]
    with pytest.raises(ValueError):
        pedestal_expert.predict(np.zeros((1, 7)))
    pedestal_expert.write_log(tmp_path / "log.csv")
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "step,loss,epsilon,eval_success"


# -- distillation ------------------------------------------------------------------

def test_distill_loss_examples():
    q = np.array([1.0, 4.0, 2.0])
    assert distill_loss(q, q) == (0.0, 0.0, 0.0)
    l1, l2, total = distill_loss(q, np.array([0.0, 3.0, 0.0]))
    assert l2 == 0 and total == l1 == pytest.approx(np.sqrt(1 + 1 + 4))
    l1, l2, total = distill_loss(q, np.array([5.0, 0.0, 0.0]))
    assert l2 == 3.0 and total == pytest.approx(l1 + 150.0)


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, 9, elements=st.floats(-10, 10)), arrays(np.float64, 9, elements=st.floats(-10, 10)))
def test_distill_l2_properties(qp, qe):
    _, l2, _ = distill_loss(qp, qe)
    assert l2 >= 0
    assert (l2 == 0) == (qp[np.argmax(qe)] == qp.max())


def test_distill_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    qp, qe = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    idx = qe.argmax(axis=1)
    _, _, g = distill_grad(qp, qe, idx, 50.0)

    def loss():
        return float(np.mean([distill_loss(qp[i], qe[i], 50.0, idx[i])[2] for i in range(4)]))

    num = finite_difference(loss, [qp], eps=1e-6)
    assert max(_rel_err(g.reshape(-1)[j], v) for _, j, v in num) < REL


def test_single_expert_memorization(ae, pedestal_expert, pedestal):
    data = collect_expert_data(pedestal_expert, pedestal, ae, augment=0)
    assert data.n_states >= 5
    X, Q, q_row, index, valid = data.arrays()
    assert Q.shape[1] == pedestal_expert.network_.sizes[-1]
    policy = DistilledQPolicy(epochs=60, learning_rate=1e-3).fit(X, Q, expert_index=index, q_row=q_row)
    assert policy.agreement(X, index, valid) >= 0.99
    assert policy.predict(X).shape == (len(X), Q.shape[1])


def test_lambda_zero_ablation(ae, pedestal_expert, pedestal):
    data = collect_expert_data(pedestal_expert, pedestal, ae, augment=1, seeds=[0, 1])
    X, Q, q_row, index, _ = data.arrays()
    assert len(X) == 2 * data.n_states
    policy = DistilledQPolicy(lam=0.0, epochs=2, hidden=(32,)).fit(X, Q, expert_index=index, q_row=q_row)
    assert all(rec["L"] == rec["L1"] for rec in policy.loss_curve_)


# -- checkpoints -------------------------------------------------------------------

def test_checkpoint_layout_and_roundtrip(tmp_path):
    arrays_in = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5], np.float32)}
    save_checkpoint(tmp_path / "c.bin", arrays_in, {"seed": 3})
    raw = (tmp_path / "c.bin").read_bytes()
    assert raw[:8] == b"PFCKPT01"
    (n,) = struct.unpack("<I", raw[8:12])
    assert len(raw) == 12 + n + 4 * 7
    assert np.frombuffer(raw[12 + n:], "<f4").tolist() == [0, 1, 2, 3, 4, 5, 1.5]
    arrays_out, meta = load_checkpoint(tmp_path / "c.bin")
    assert meta == {"seed": 3} and all(np.array_equal(arrays_in[k], arrays_out[k]) for k in arrays_in)
    (tmp_path / "bad.bin").write_bytes(b"NOTCKPT!" + raw[8:])
    with pytest.raises(SchemaVersionMismatch):
        load_checkpoint(tmp_path / "bad.bin")


def test_model_checkpoints(ae, tmp_path):
    save_ae(tmp_path / "ae.bin", ae)
    ae2 = load_ae(tmp_path / "ae.bin")
    X = np.random.default_rng(13).uniform(-0.5, 0.5, (3, 256, 3))
    assert np.array_equal(ae.transform(X), ae2.transform(X))
    net = MLP((6, 5, 4), seed=8)
    save_qnet(tmp_path / "q.bin", net, (2, 2, 1), {"chair": 7})
    net2, caps, meta = load_qnet(tmp_path / "q.bin")
    assert caps == (2, 2, 1) and meta["chair"] == 7
    assert np.array_equal(q_forward(net, np.ones(6)), q_forward(net2, np.ones(6)))
    with pytest.raises(SchemaVersionMismatch):
        load_qnet(tmp_path / "ae.bin")
