"""Multi-task distillation of single-chair experts into one Q network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from partforge.env import AssemblyEnv, is_fully_assembled
from partforge.errors import Diverged
from partforge.learn.autoencoder import part_cloud
from partforge.learn.dqn import q_columns
from partforge.learn.encoding import build_state_encoding, part_features
from partforge.learn.nn import MLP, Adam

LAMBDA = 50.0


def distill_loss(q_pred, q_expert, lam: float = LAMBDA, expert_index: int | None = None):
    """``(L1, L2, L)`` for one state.

    ``L1`` is the Euclidean distance between the two Q vectors, ``L2`` the
    gap between the predicted maximum and the prediction at the expert's
    greedy action. ``expert_index`` overrides the unmasked expert argmax.
    """
    q_pred = np.asarray(q_pred, float)
    q_expert = np.asarray(q_expert, float)
    if q_pred.shape != q_expert.shape:
        raise ValueError("Q vectors must have equal length")
    e = int(np.argmax(q_expert)) if expert_index is None else int(expert_index)
    l1 = float(np.linalg.norm(q_pred - q_expert))
    l2 = float(q_pred.max() - q_pred[e])
    return l1, l2, l1 + lam * l2


def distill_grad(q_pred: np.ndarray, q_expert: np.ndarray, expert_index: np.ndarray, lam: float):
    """Batch-mean loss terms and the gradient of the mean total loss wrt ``q_pred``."""
    diff = q_pred - q_expert
    norm = np.linalg.norm(diff, axis=1)
    rows = np.arange(len(q_pred))
    top = q_pred.argmax(axis=1)
    l2 = q_pred[rows, top] - q_pred[rows, expert_index]
    g = diff / np.where(norm > 0, norm, 1.0)[:, None]
    g[rows, top] += lam
    g[rows, expert_index] -= lam
    B = len(q_pred)
    return float(norm.mean()), float(l2.mean()), g / B


@dataclass
class ExpertDataset:
    """State encodings with the expert Q vector and greedy (masked) expert action.

    Augmented copies share their clean state's Q row through ``q_row``.
    """

    X: list = field(default_factory=list)
    q_row: list = field(default_factory=list)
    expert_index: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    augmented: list = field(default_factory=list)
    chair_id: list = field(default_factory=list)
    Q: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.X)

    @property
    def n_states(self) -> int:
        return len(self.Q)

    def add_state(self, q: np.ndarray, chair_id: int) -> int:
        self.Q.append(np.asarray(q, np.float32))
        self.chair_id.append(int(chair_id))
        return len(self.Q) - 1

    def add(self, x, state: int, expert_index: int, valid, augmented: bool) -> None:
        self.X.append(np.asarray(x, np.float32))
        self.q_row.append(state)
        self.expert_index.append(int(expert_index))
        self.valid.append(np.asarray(valid, np.int64))
        self.augmented.append(bool(augmented))

    def arrays(self):
        return (np.asarray(self.X, np.float32), np.asarray(self.Q, np.float32), np.asarray(self.q_row),
                np.asarray(self.expert_index), list(self.valid))


def noisy_features(ae, state, sigma: float, rng) -> np.ndarray:
    clouds = np.stack([part_cloud(p, pose) for p, pose in zip(state.chair.parts, state.poses)])
    return ae.transform(clouds + rng.normal(0.0, sigma, clouds.shape))


def collect_expert_data(expert, chair, ae, data: ExpertDataset | None = None, *, augment: int = 4,
                        sigma: float = 0.01, seeds=None, seed: int = 0) -> ExpertDataset:
    """Record states along the expert's successful greedy rollouts.

    Parameters
    ----------
    expert : DDQNAgent
        Fitted single-chair expert.
    augment : int
        Extra copies of each state re-encoded from noisy clouds.
    sigma : float
        Noise level in normalized cloud units.
    """
    data = ExpertDataset() if data is None else data
    env = AssemblyEnv(chair, caps=tuple(expert.caps), planner=expert._env(chair).planner)
    net = expert.network_
    P = env.caps[0]
    rng = np.random.default_rng(seed)
    for s in (expert.eval_seeds() if seeds is None else seeds):
        state = env.reset(s)
        feats = part_features(ae, state)
        noisy = [noisy_features(ae, state, sigma, rng) for _ in range(augment)]
        visited = []
        while not is_fully_assembled(state):
            cols = np.flatnonzero(env.mask(state))
            if len(cols) == 0:
                break
            x = build_state_encoding(state, feats, P)
            q = net.forward(x)
            index = int(cols[int(np.argmax(q[cols]))])
            visited.append((x, q, index, cols, [build_state_encoding(state, f, P) for f in noisy]))
            res = env.step(state, index, seed=s)
            state = res.next_state
            if res.done:
                break
        if not is_fully_assembled(state):
            continue
        for x, q, index, cols, copies in visited:
            row = data.add_state(q, chair.id)
            data.add(x, row, index, cols, False)
            for xc in copies:
                data.add(xc, row, index, cols, True)
    return data


def _agreement(net: MLP, X, index, valid) -> float:
    if len(X) == 0:
        return float("nan")
    h = net.hidden(np.asarray(X, np.float32))[-1]
    hits = [cols[int(np.argmax(q_columns(net, hi, cols)))] == e for hi, e, cols in zip(h, index, valid)]
    return float(np.mean(hits))


class DistilledQPolicy(BaseEstimator, RegressorMixin):
    """Multi-task Q network regressed on expert Q vectors.

    ``fit(X, Q, expert_index=..., valid=...)`` minimizes ``L1 + lam * L2``
    per state, averaged over minibatches. With ``lam=0`` only the vector
    distance is trained.

    Attributes
    ----------
    network_ : MLP
    loss_curve_ : list of dict
        Mean ``L1``, ``L2`` and ``L`` per epoch.
    """

    def __init__(self, hidden=(1024, 512), lam=LAMBDA, epochs=30, batch_size=64, learning_rate=1e-4,
                 random_state=0):
        self.hidden = hidden
        self.lam = lam
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, y, expert_index=None, valid=None, q_row=None):
        """Fit on encodings ``X`` and expert Q vectors ``y``.

        ``q_row`` maps each row of ``X`` to a row of ``y`` (defaults to the
        identity). ``expert_index`` defaults to the argmax of ``y`` within
        ``valid`` when given, else over all actions.
        """
        X = np.asarray(X, np.float32)
        y = np.asarray(y, np.float32)
        q_row = np.arange(len(X)) if q_row is None else np.asarray(q_row)
        if X.ndim != 2 or y.ndim != 2 or len(X) == 0 or len(q_row) != len(X) or q_row.max() >= len(y):
            raise ValueError("X must be (n, d) and y (m, actions) with a valid row mapping")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite training data")
        if expert_index is None:
            if valid is None:
                expert_index = y[q_row].argmax(axis=1)
            else:
                expert_index = [c[int(np.argmax(y[r, c]))] for r, c in zip(q_row, valid)]
        expert_index = np.asarray(expert_index, np.int64)
        rng = np.random.default_rng(self.random_state)
        net = MLP((X.shape[1], *self.hidden, y.shape[1]), seed=self.random_state)
        opt = Adam(net.params, lr=self.learning_rate)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            sums = np.zeros(3)
            for i in range(0, len(X), self.batch_size):
                b = order[i:i + self.batch_size]
                out, acts = net.forward(X[b], return_cache=True)
                l1, l2, g = distill_grad(out, y[q_row[b]], expert_index[b], self.lam)
                if not np.isfinite(l1 + l2):
                    raise Diverged("distillation loss became non-finite")
                grads, _ = net.backward(acts, g.astype(np.float32))
                opt.step(net.params, grads)
                sums += np.array([l1, l2, l1 + self.lam * l2]) * len(b)
            sums /= len(X)
            self.loss_curve_.append({"L1": sums[0], "L2": sums[1], "L": sums[2]})
        self.network_ = net
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = np.asarray(X, np.float32)
        if X.ndim != 2 or X.shape[1] != self.network_.sizes[0]:
            raise ValueError(f"expected encodings of shape (n, {self.network_.sizes[0]})")
        return self.network_.forward(X)

    def agreement(self, X, expert_index, valid) -> float:
        """Fraction of states whose masked greedy action matches the expert's."""
        check_is_fitted(self, "network_")
        return _agreement(self.network_, X, expert_index, valid)


def distill_train(experts, chairs, ae, *, epochs: int = 30, seed: int = 0, lam: float = LAMBDA,
                  augment: int = 4, sigma: float = 0.01, holdout: float = 0.1, **policy_kwargs):
    """Collect expert data, hold out a fraction of clean states, and fit a :class:`DistilledQPolicy`.

    Returns ``(policy, report)``; the report holds held-in and held-out
    argmax agreement measured on clean (non-augmented) states.
    """
    experts, chairs = list(experts), list(chairs)
    if len(experts) != len(chairs) or not experts:
        raise ValueError("need one chair per expert")
    data = ExpertDataset()
    for i, (expert, chair) in enumerate(zip(experts, chairs)):
        collect_expert_data(expert, chair, ae, data, augment=augment, sigma=sigma, seed=seed + i)
    if data.n_states == 0:
        raise ValueError("experts produced no successful rollouts")
    X, Q, q_row, index, valid = data.arrays()
    rng = np.random.default_rng(seed)
    held = rng.random(data.n_states) < holdout
    train = ~held[q_row]
    policy = DistilledQPolicy(lam=lam, epochs=epochs, random_state=seed, **policy_kwargs)
    policy.fit(X[train], Q, expert_index=index[train], q_row=q_row[train])
    clean = ~np.asarray(data.augmented)
    report = {"n_states": data.n_states, "n_records": len(data)}
    for name, sel in (("held_in", clean & train), ("held_out", clean & ~train)):
        idx = np.flatnonzero(sel)
        report[f"{name}_agreement"] = policy.agreement(X[idx], index[idx], [valid[i] for i in idx])
    return policy, report
