"""PointNet-style point-cloud autoencoder trained on the Chamfer distance."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from partforge.errors import Diverged
from partforge.geom import Pose6D, sample_point_cloud
from partforge.learn.nn import MLP, Adam

CLOUD_POINTS = 256
CLOUD_SEED = 0


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance: mean squared nearest-neighbour distance both ways (m^2)."""
    a = np.asarray(getattr(a, "points", a), float)
    b = np.asarray(getattr(b, "points", b), float)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs two nonempty clouds")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da * da) + np.mean(db * db))


def batch_chamfer(x: np.ndarray, y: np.ndarray):
    """Per-sample Chamfer distances between ``x`` and ``y`` (both ``(B, m, 3)``) and the gradient wrt ``y``.

    The returned gradient is that of the *sum* of the per-sample distances.
    """
    diff = x[:, :, None, :] - y[:, None, :, :]
    d2 = np.einsum("bijc,bijc->bij", diff, diff)
    B, n, m = d2.shape
    j_of_i = d2.argmin(axis=2)
    i_of_j = d2.argmin(axis=1)
    rows = np.arange(B)[:, None]
    loss = d2[rows, np.arange(n)[None], j_of_i].mean(axis=1) + d2[rows, i_of_j, np.arange(m)[None]].mean(axis=1)
    grad = 2.0 * (y - np.take_along_axis(x, i_of_j[..., None], axis=1)) / m
    # forward term: each x_i pulls its nearest y
    pull = 2.0 * (np.take_along_axis(y, j_of_i[..., None], axis=1) - x) / n
    for b in range(B):
        np.add.at(grad[b], j_of_i[b], pull[b])
    return loss, grad


def normalize_cloud(points: np.ndarray) -> np.ndarray:
    """Centre on the bounding-box centre and scale the longest side to 1."""
    pts = np.asarray(points, float)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    ext = float((hi - lo).max())
    return (pts - (lo + hi) / 2) / (ext if ext > 0 else 1.0)


def part_cloud(part, pose: Pose6D | None = None, n_points: int = CLOUD_POINTS, seed: int = CLOUD_SEED) -> np.ndarray:
    """Normalized surface cloud of ``part`` in the orientation of ``pose``."""
    pts = sample_point_cloud(part.mesh, n_points, seed).points
    if pose is not None:
        pts = pts @ pose.rotation.T
    return normalize_cloud(pts)


def part_clouds(chairs, n_points: int = CLOUD_POINTS, orientations: int = 4, seed: int = 0) -> np.ndarray:
    """Training clouds for the autoencoder: every part under random rotations."""
    rng = np.random.default_rng(seed)
    out = []
    for chair in chairs:
        for part in chair.parts:
            pts = sample_point_cloud(part.mesh, n_points, int(rng.integers(2**31))).points
            for R in Rotation.random(orientations, random_state=rng).as_matrix():
                out.append(normalize_cloud(pts @ R.T))
    return np.asarray(out, np.float32)


class PointCloudAutoEncoder(BaseEstimator, TransformerMixin):
    """Per-point MLP, max-pool over points, then an MLP decoder back to ``n_points`` points.

    Parameters
    ----------
    n_points : int
        Number of points the decoder emits.
    feature_dim : int
        Size of the pooled feature.
    encoder_hidden, decoder_hidden : tuple of int
        Hidden widths of the two MLPs.
    epochs, batch_size, learning_rate : training schedule (Adam).
    random_state : int
        Seeds initialisation and minibatch order.

    Attributes
    ----------
    loss_curve_ : list of float
        Mean training Chamfer loss per epoch.
    initial_loss_, final_loss_ : float
        Mean Chamfer loss over the training set before and after fitting.
    """

    def __init__(self, n_points=CLOUD_POINTS, feature_dim=128, encoder_hidden=(64, 128), decoder_hidden=(256,),
                 epochs=200, batch_size=32, learning_rate=1e-3, random_state=0):
        self.n_points = n_points
        self.feature_dim = feature_dim
        self.encoder_hidden = encoder_hidden
        self.decoder_hidden = decoder_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    # -- network --------------------------------------------------------------------
    def _init_nets(self, dtype=np.float32):
        self.encoder_ = MLP((3, *self.encoder_hidden, self.feature_dim), seed=self.random_state, dtype=dtype)
        self.decoder_ = MLP((self.feature_dim, *self.decoder_hidden, 3 * self.n_points),
                            seed=self.random_state + 1, dtype=dtype)

    @property
    def params_(self):
        return self.encoder_.params + self.decoder_.params

    def _encode(self, X):
        B, m, _ = X.shape
        z, acts = self.encoder_.forward(X.reshape(B * m, 3), return_cache=True)
        z = z.reshape(B, m, -1)
        arg = z.argmax(axis=1)
        return np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0], (acts, arg, z.shape)

    def loss_and_grads(self, X):
        """Mean Chamfer loss over the batch and gradients for :attr:`params_`."""
        X = np.asarray(X, self.encoder_.weights[0].dtype)
        B = len(X)
        feat, (eacts, arg, zshape) = self._encode(X)
        out, dacts = self.decoder_.forward(feat, return_cache=True)
        Y = out.reshape(B, self.n_points, 3)
        loss, gY = batch_chamfer(X, Y)
        dgrads, gfeat = self.decoder_.backward(dacts, gY.reshape(B, -1) / B)
        gz = np.zeros(zshape, gfeat.dtype)
        np.put_along_axis(gz, arg[:, None, :], gfeat[:, None, :], axis=1)
        egrads, _ = self.encoder_.backward(eacts, gz.reshape(-1, zshape[2]))
        return float(loss.mean()), egrads + dgrads

    def _check_X(self, X):
        X = np.asarray(X, np.float32)
        if X.ndim != 3 or X.shape[2] != 3 or X.shape[1] < 1:
            raise ValueError(f"expected clouds of shape (n, m, 3), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("clouds contain non-finite values")
        return X

    def _mean_loss(self, X):
        losses = [self.loss_and_grads(X[i:i + 256])[0] * len(X[i:i + 256]) for i in range(0, len(X), 256)]
        return float(np.sum(losses) / len(X))

    def fit(self, X, y=None):
        X = self._check_X(X)
        if X.shape[1] != self.n_points:
            raise ValueError(f"clouds must have {self.n_points} points for fitting")
        self._init_nets()
        rng = np.random.default_rng(self.random_state)
        opt = Adam(self.params_, lr=self.learning_rate)
        self.initial_loss_ = self._mean_loss(X)
        self.loss_curve_ = []
        for _ in range(self.epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for i in range(0, len(X), self.batch_size):
                batch = X[order[i:i + self.batch_size]]
                loss, grads = self.loss_and_grads(batch)
                if not np.isfinite(loss):
                    raise Diverged("autoencoder loss became non-finite")
                opt.step(self.params_, grads)
                total += loss * len(batch)
            self.loss_curve_.append(total / len(X))
        self.final_loss_ = self._mean_loss(X)
        return self

    def transform(self, X):
        """Pooled features, shape ``(n, feature_dim)``; works for any number of points."""
        check_is_fitted(self, "encoder_")
        X = self._check_X(X)
        return self._encode(X)[0]

    def reconstruct(self, X):
        check_is_fitted(self, "encoder_")
        feat = self.transform(X)
        return self.decoder_.forward(feat).reshape(len(feat), self.n_points, 3)

    def score(self, X, y=None):
        """Negative mean Chamfer loss."""
        check_is_fitted(self, "encoder_")
        return -self._mean_loss(self._check_X(X))


def encode_part(ae: PointCloudAutoEncoder, part, pose: Pose6D) -> np.ndarray:
    """Geometry feature of ``part`` seen in the orientation of ``pose``."""
    return ae.transform(part_cloud(part, pose)[None])[0]
