"""Masked Double-DQN over the padded object-centric action space."""
from __future__ import annotations

import csv
import time

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from partforge.env import AssemblyEnv, is_fully_assembled
from partforge.env.env import DESK_CAPS
from partforge.errors import Diverged, NoValidAction
from partforge.learn.encoding import build_state_encoding, encoding_length, part_features
from partforge.learn.nn import MLP, Adam
from partforge.planner import RRTParams


def q_forward(net: MLP, encoding: np.ndarray) -> np.ndarray:
    """Q values for one encoding (1-D) or a batch (2-D)."""
    return net.forward(encoding)


def q_columns(net: MLP, hidden: np.ndarray, cols) -> np.ndarray:
    """Output entries ``cols`` computed from last-hidden activations only."""
    return hidden @ net.weights[-1][:, cols] + net.biases[-1][cols]


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _choose(cols: np.ndarray, qvals: np.ndarray, epsilon: float, rng) -> int:
    if len(cols) == 0:
        raise NoValidAction("no valid action in mask")
    if rng.random() < epsilon:
        return int(cols[rng.integers(len(cols))])
    return int(cols[int(np.argmax(qvals))])  # first max: lowest index


def select_action(q: np.ndarray, mask: np.ndarray, epsilon: float, seed=None) -> int:
    """Epsilon-greedy choice restricted to ``mask``; ties go to the lowest index."""
    cols = np.flatnonzero(np.asarray(mask, bool))
    return _choose(cols, np.asarray(q)[cols], epsilon, _as_rng(seed))


class ReplayBuffer:
    """FIFO ring buffer of transitions with uniform sampling.

    Alongside each transition it keeps the valid action indices of the next
    state, which the Double-DQN target needs for its masked argmax.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, dim), np.float32)
        self.s2 = np.zeros((capacity, dim), np.float32)
        self.a = np.zeros(capacity, np.int64)
        self.r = np.zeros(capacity, np.float32)
        self.done = np.zeros(capacity, bool)
        self.valid2: list = [None] * capacity
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, s, a, r, s2, done, valid_next=()) -> None:
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, done
        self.valid2[i] = np.asarray(valid_next, np.int64)
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng) -> dict:
        idx = _as_rng(rng).integers(0, self.size, batch_size)
        return {"s": self.s[idx], "a": self.a[idx], "r": self.r[idx], "s2": self.s2[idx],
                "done": self.done[idx], "valid2": [self.valid2[i] for i in idx]}


def ddqn_targets(online: MLP, target: MLP, batch: dict, gamma: float) -> np.ndarray:
    """``r`` for terminal transitions, else ``r + gamma * Q_target(s', argmax_valid Q_online(s', .))``."""
    y = np.asarray(batch["r"], np.float64).copy()
    live = np.flatnonzero(~np.asarray(batch["done"], bool))
    live = [i for i in live if len(batch["valid2"][i])]
    if not live:
        return y
    s2 = np.asarray(batch["s2"])[live]
    h_on = online.hidden(np.asarray(s2, online.weights[0].dtype))[-1]
    h_t = target.hidden(np.asarray(s2, target.weights[0].dtype))[-1]
    for j, i in enumerate(live):
        cols = batch["valid2"][i]
        a_star = cols[int(np.argmax(q_columns(online, h_on[j], cols)))]
        y[i] += gamma * float(q_columns(target, h_t[j], [a_star])[0])
    return y


def ddqn_loss_and_grads(online: MLP, target: MLP, batch: dict, gamma: float):
    """Mean squared TD error on the chosen actions and its gradients.

    Output-layer gradients are column-sparse ``(columns, values)`` pairs;
    the other entries follow the layout of ``online.params``.
    """
    y = ddqn_targets(online, target, batch, gamma)
    a = np.asarray(batch["a"])
    acts = online.hidden(np.asarray(batch["s"], online.weights[0].dtype))
    h = acts[-1]
    Wa = online.weights[-1][:, a]
    q_sa = np.einsum("bh,hb->b", h, Wa) + online.biases[-1][a]
    td = q_sa - y
    loss = float(np.mean(td * td))
    B = len(a)
    g = (2.0 * td / B).astype(h.dtype)
    cols, inv = np.unique(a, return_inverse=True)
    onehot = np.zeros((B, len(cols)), h.dtype)
    onehot[np.arange(B), inv] = g
    grads = [None] * len(online.params)
    grads[-2] = (cols, h.T @ onehot)
    grads[-1] = (cols, onehot.sum(axis=0))
    online.backward_hidden(acts, g[:, None] * Wa.T, grads)
    return loss, grads


def ddqn_update(online: MLP, target: MLP, batch: dict, gamma: float, optimizer: Adam) -> float:
    """One Adam step on the mean squared TD error of the chosen actions. Returns the loss."""
    loss, grads = ddqn_loss_and_grads(online, target, batch, gamma)
    if not np.isfinite(loss):
        raise Diverged("DDQN loss became non-finite")
    optimizer.step(online.params, grads)
    return loss


def linear_epsilon(step: int, budget: int, start: float = 1.0, end: float = 0.05, fraction: float = 0.5) -> float:
    horizon = max(1, int(budget * fraction))
    return end + (start - end) * max(0.0, 1.0 - step / horizon)


def run_episode(env: AssemblyEnv, choose, seed: int, log=None):
    """Roll out ``choose(state, valid_cols) -> index`` until assembled, failed or stuck.

    Returns ``(success, total_reward, planner_states, steps)``.
    """
    state = env.reset(seed)
    total, states, steps = 0.0, 0, 0
    if log is not None:
        log.reset(seed, state, env.chair.id)
    while not is_fully_assembled(state):
        cols = np.flatnonzero(env.mask(state))
        if len(cols) == 0:
            break
        index = int(choose(state, cols))
        res = env.step(state, index, seed=seed)
        total += res.reward
        states += res.states_attempted
        steps += 1
        if log is not None:
            log.step(seed, steps, env.decode(index).as_list(), res)
        state = res.next_state
        if res.done:
            break
    return is_fully_assembled(state), total, states, steps


def greedy_rollout(net: MLP, env: AssemblyEnv, ae, seed: int, features=None, log=None):
    """Greedy episode of ``net``; see :func:`run_episode` for the return value."""
    feats = [features]
    P = env.caps[0]

    def choose(state, cols):
        if feats[0] is None:
            feats[0] = part_features(ae, state)
        h = net.hidden(build_state_encoding(state, feats[0], P)[None])[-1][0]
        return cols[int(np.argmax(q_columns(net, h, cols)))]

    return run_episode(env, choose, seed, log)


class DDQNAgent(BaseEstimator):
    """Single-chair masked Double-DQN expert.

    ``fit(chair)`` trains on one chair and keeps the network with the best
    greedy evaluation success rate seen during training.

    Parameters
    ----------
    ae : PointCloudAutoEncoder
        Frozen feature extractor.
    caps : (P, K, W)
        Padding caps that fix the encoding and action-space sizes.
    mode : {"oc", "full"}
        Object-centric actions, or the full setting with grasp pairs.
    budget : int
        Maximum number of environment steps.
    hidden : tuple of int
        Hidden widths of the Q network.
    eval_every, eval_episodes : evaluation schedule (greedy episodes).
    early_stop : bool
        Stop as soon as an evaluation reaches a success rate of 1.
    max_states : int
        Planner cap for each mating query during training.
    """

    def __init__(self, ae=None, caps=DESK_CAPS, mode="oc", budget=40_000, hidden=(1024, 512), gamma=0.95,
                 learning_rate=1e-4, batch_size=64, buffer_size=50_000, target_sync=1000, train_every=4,
                 learning_starts=500, eps_start=1.0, eps_end=0.05, eps_fraction=0.5, eval_every=2000,
                 eval_episodes=20, early_stop=True, max_states=5000, random_state=0):
        self.ae = ae
        self.caps = caps
        self.mode = mode
        self.budget = budget
        self.hidden = hidden
        self.gamma = gamma
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.buffer_size = buffer_size
        self.target_sync = target_sync
        self.train_every = train_every
        self.learning_starts = learning_starts
        self.eps_start = eps_start
        self.eps_end = eps_end
        self.eps_fraction = eps_fraction
        self.eval_every = eval_every
        self.eval_episodes = eval_episodes
        self.early_stop = early_stop
        self.max_states = max_states
        self.random_state = random_state

    def _env(self, chair):
        return AssemblyEnv(chair, mode=self.mode, caps=tuple(self.caps),
                           planner=RRTParams(max_states=self.max_states, seed=self.random_state))

    def eval_seeds(self) -> list[int]:
        return [1_000_000 + 1000 * self.random_state + i for i in range(self.eval_episodes)]

    def evaluate(self, chair, net: MLP | None = None) -> float:
        """Greedy success rate over the fixed evaluation seeds."""
        net = net or self.network_
        env = self._env(chair)
        wins = sum(greedy_rollout(net, env, self.ae, s)[0] for s in self.eval_seeds())
        return wins / len(self.eval_seeds())

    def fit(self, chair, y=None):
        if self.ae is None:
            raise ValueError("DDQNAgent needs a fitted autoencoder")
        if self.budget < 1 or self.batch_size < 1 or not 0 <= self.gamma <= 1:
            raise ValueError("invalid DDQN hyper-parameters")
        env = self._env(chair)
        P = self.caps[0]
        dim = encoding_length(P, self.ae.feature_dim)
        rng = np.random.default_rng(self.random_state)
        online = MLP((dim, *self.hidden, env.n_actions), seed=self.random_state)
        target = online.copy()
        opt = Adam(online.params, lr=self.learning_rate)
        buffer = ReplayBuffer(min(self.buffer_size, self.budget), dim)
        self.history_ = []
        best_rate, best_net, last_loss, n_updates = -1.0, online.copy(), float("nan"), 0
        step, episode, stop = 0, 0, False
        t0 = time.perf_counter()
        while step < self.budget and not stop:
            seed = int(rng.integers(2**31))
            episode += 1
            state = env.reset(seed)
            feats = part_features(self.ae, state)
            enc = build_state_encoding(state, feats, P)
            cols = np.flatnonzero(env.mask(state))
            while len(cols) and step < self.budget and not stop:
                eps = linear_epsilon(step, self.budget, self.eps_start, self.eps_end, self.eps_fraction)
                if rng.random() < eps:
                    index = int(cols[rng.integers(len(cols))])
                else:
                    h = online.hidden(enc[None])[-1][0]
                    index = int(cols[int(np.argmax(q_columns(online, h, cols)))])
                res = env.step(state, index, seed=seed)
                state = res.next_state
                enc2 = build_state_encoding(state, feats, P)
                cols = np.empty(0, np.int64) if res.done else np.flatnonzero(env.mask(state))
                buffer.add(enc, index, res.reward, enc2, res.done or len(cols) == 0, cols)
                enc = enc2
                step += 1
                if step % self.train_every == 0 and len(buffer) >= max(self.learning_starts, self.batch_size):
                    last_loss = ddqn_update(online, target, buffer.sample(self.batch_size, rng), self.gamma, opt)
                    n_updates += 1
                    if n_updates % self.target_sync == 0:
                        target = online.copy()
                if step % self.eval_every == 0 or step == self.budget:
                    rate = self.evaluate(chair, online)
                    self.history_.append({"step": step, "loss": last_loss, "epsilon": eps, "eval_success": rate})
                    if rate > best_rate:
                        best_rate, best_net = rate, online.copy()
                    stop = self.early_stop and rate >= 1.0
                if res.done:
                    break
        self.network_ = best_net
        self.success_rate_ = best_rate
        self.n_steps_ = step
        self.n_episodes_ = episode
        self.n_updates_ = n_updates
        self.fit_seconds_ = time.perf_counter() - t0
        self.chair_id_ = chair.id
        return self

    def q_values(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = np.asarray(X, np.float32)
        if X.ndim != 2 or X.shape[1] != self.network_.sizes[0]:
            raise ValueError(f"expected encodings of shape (n, {self.network_.sizes[0]}), got {X.shape}")
        return q_forward(self.network_, X)

    def predict(self, X, masks=None) -> np.ndarray:
        """Greedy action indices, restricted to ``masks`` when given."""
        q = self.q_values(X)
        if masks is None:
            return q.argmax(axis=1)
        masks = np.asarray(masks, bool)
        if masks.shape != q.shape:
            raise ValueError("masks must match the Q-value shape")
        return np.array([select_action(qi, mi, 0.0) for qi, mi in zip(q, masks)])

    def write_log(self, path) -> None:
        check_is_fitted(self, "history_")
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "loss", "epsilon", "eval_success"])
            w.writeheader()
            w.writerows(self.history_)
