"""Binary checkpoints: magic, length-prefixed JSON header, little-endian float32 arrays."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from partforge.errors import SchemaVersionMismatch
from partforge.learn.nn import MLP

MAGIC = b"PFCKPT01"


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    """Write ``arrays`` (name -> array, in insertion order) and a JSON ``meta`` block."""
    header = {
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, "<f4").tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Inverse of :func:`save_checkpoint`; returns ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC or len(raw) < 12:
        raise SchemaVersionMismatch(f"{path} is not a partforge checkpoint")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n])
    except ValueError as exc:
        raise SchemaVersionMismatch(f"{path}: corrupt checkpoint header") from exc
    arrays, pos = {}, 12 + n
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = pos + 4 * count
        if end > len(raw):
            raise SchemaVersionMismatch(f"{path}: truncated array data")
        arrays[entry["name"]] = np.frombuffer(raw[pos:end], "<f4").reshape(entry["shape"]).astype(np.float32)
        pos = end
    return arrays, header["meta"]


def mlp_arrays(net: MLP, prefix: str = "") -> dict:
    out = {}
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{i}"] = W
        out[f"{prefix}b{i}"] = b
    return out


def mlp_from_arrays(arrays: dict, prefix: str = "") -> MLP:
    n = sum(1 for k in arrays if k.startswith(f"{prefix}W"))
    Ws = [arrays[f"{prefix}W{i}"] for i in range(n)]
    net = MLP.__new__(MLP)
    net.sizes = (Ws[0].shape[0], *(w.shape[1] for w in Ws))
    net.weights = [w.copy() for w in Ws]
    net.biases = [arrays[f"{prefix}b{i}"].copy() for i in range(n)]
    return net


def save_ae(path, ae, meta: dict | None = None) -> None:
    arrays = {**mlp_arrays(ae.encoder_, "enc."), **mlp_arrays(ae.decoder_, "dec.")}
    info = {"kind": "autoencoder", "params": _jsonable(ae.get_params()),
            "initial_loss": ae.initial_loss_, "final_loss": ae.final_loss_, **(meta or {})}
    save_checkpoint(path, arrays, info)


def load_ae(path):
    from partforge.learn.autoencoder import PointCloudAutoEncoder

    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "autoencoder":
        raise SchemaVersionMismatch(f"{path} does not hold an autoencoder")
    params = meta["params"]
    for key in ("encoder_hidden", "decoder_hidden"):
        params[key] = tuple(params[key])
    ae = PointCloudAutoEncoder(**params)
    ae.encoder_ = mlp_from_arrays(arrays, "enc.")
    ae.decoder_ = mlp_from_arrays(arrays, "dec.")
    ae.initial_loss_, ae.final_loss_ = meta["initial_loss"], meta["final_loss"]
    return ae


def save_qnet(path, net: MLP, caps, meta: dict | None = None) -> None:
    save_checkpoint(path, mlp_arrays(net), {"kind": "qnet", "caps": list(caps), "sizes": list(net.sizes),
                                            **(meta or {})})


def load_qnet(path) -> tuple[MLP, tuple, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "qnet":
        raise SchemaVersionMismatch(f"{path} does not hold a Q network")
    return mlp_from_arrays(arrays), tuple(meta["caps"]), meta


def _jsonable(params: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}


def save_agent(path, agent, meta: dict | None = None) -> None:
    """Persist a fitted :class:`DDQNAgent` (network plus constructor parameters, without the AE)."""
    params = _jsonable({k: v for k, v in agent.get_params(deep=False).items() if k != "ae"})
    info = {"agent": params, "chair_id": agent.chair_id_, "success_rate": agent.success_rate_,
            "n_steps": agent.n_steps_, **(meta or {})}
    save_qnet(path, agent.network_, agent.caps, info)


def load_agent(path, ae):
    from partforge.learn.dqn import DDQNAgent

    net, caps, meta = load_qnet(path)
    if "agent" not in meta:
        raise SchemaVersionMismatch(f"{path} does not hold a single-chair expert")
    params = dict(meta["agent"])
    params["caps"], params["hidden"] = tuple(params["caps"]), tuple(params["hidden"])
    agent = DDQNAgent(ae=ae, **params)
    agent.network_ = net
    agent.chair_id_, agent.success_rate_, agent.n_steps_ = meta["chair_id"], meta["success_rate"], meta["n_steps"]
    return agent
