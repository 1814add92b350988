"""Weighted GCN scorer with a pairwise ranking objective and exact gradients.

Forward pass: n_layers of relu(L @ H @ W) over a commit graph's propagation
operator, per-node layer normalization of the final hidden features, then a
linear head mapping each node to a scalar score. Deleted-node pairs train the
scores through the RankNet cross-entropy: the probability that node i
outranks node j is sigmoid(s_i - s_j), compared against priority targets in
{0, 0.5, 1}. backward() returns exact reverse-mode gradients for every
parameter (ReLU subgradient at 0 is taken as 0), validated against central
finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PROB_CLAMP = 1e-12


class ModelError(ValueError):
    """Inconsistent model, operator, or feature shapes."""


@dataclass
class RankModel:
    """GCN layer weights, final-layer normalization parameters, scoring head."""

    weights: list
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    head_w: np.ndarray
    head_b: np.ndarray
    ln_eps: float = 1e-5

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def params(self) -> dict:
        """Live parameter arrays in checkpoint declaration order."""
        out = {f"w{l}": w for l, w in enumerate(self.weights)}
        out["ln_gain"] = self.ln_gain
        out["ln_bias"] = self.ln_bias
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        return out


def init_rank_model(input_dim: int, hidden_dim: int = 256, n_layers: int = 2,
                    seed: int = 0, ln_eps: float = 1e-5) -> RankModel:
    """Glorot-uniform layer weights, identity layer norm, small random head."""
    if input_dim < 1 or hidden_dim < 1:
        raise ModelError("input_dim and hidden_dim must be >= 1")
    if not 1 <= n_layers <= 4:
        raise ModelError(f"n_layers must be in [1, 4], got {n_layers}")
    rng = np.random.RandomState(seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    dims = [input_dim] + [hidden_dim] * n_layers
    weights = [glorot(dims[l], dims[l + 1]) for l in range(n_layers)]
    head_w = glorot(hidden_dim, 1)[:, 0]
    return RankModel(
        weights=weights,
        ln_gain=np.ones(hidden_dim),
        ln_bias=np.zeros(hidden_dim),
        head_w=head_w,
        head_b=np.zeros(1),
        ln_eps=ln_eps,
    )


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    expx = np.exp(x[~positive])
    out[~positive] = expx / (1.0 + expx)
    return out


def forward(model: RankModel, operator, features, n_deleted: int):
    """Scores over the first n_deleted nodes plus the activation cache.

    Layer l computes relu(L @ H @ W_l); the final hidden features are
    normalized per node to mean 0 / variance 1 over the feature axis (with
    the ln_eps guard), scaled by gain and shifted by bias, then mapped to a
    scalar by the head.
    """
    operator = np.asarray(operator, dtype=float)
    hidden = np.asarray(features, dtype=float)
    n = hidden.shape[0]
    if operator.shape != (n, n):
        raise ModelError(
            f"operator shape {operator.shape} does not match {n} feature rows"
        )
    if hidden.ndim != 2 or hidden.shape[1] != model.input_dim:
        raise ModelError(
            f"feature dim {hidden.shape[1:]} does not match model input "
            f"dim {model.input_dim}"
        )
    if not 0 <= n_deleted <= n:
        raise ModelError(f"n_deleted={n_deleted} out of range for {n} nodes")
    mixed = []
    pre_acts = []
    for w in model.weights:
        m = operator @ hidden
        z = m @ w
        mixed.append(m)
        pre_acts.append(z)
        hidden = np.maximum(z, 0.0)
    mean = hidden.mean(axis=1, keepdims=True)
    var = hidden.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + model.ln_eps)
    x_hat = (hidden - mean) * inv_std
    normed = x_hat * model.ln_gain + model.ln_bias
    scores = normed @ model.head_w + model.head_b[0]
    cache = {
        "mixed": mixed,
        "pre_acts": pre_acts,
        "x_hat": x_hat,
        "inv_std": inv_std,
        "normed": normed,
        "scores": scores,
        "n_deleted": n_deleted,
    }
    return scores[:n_deleted].copy(), cache


def pair_prob(score_i, score_j):
    """Probability that node i outranks node j: sigmoid(s_i - s_j), computed
    in the overflow-safe branch form."""
    diff = np.asarray(score_i, dtype=float) - np.asarray(score_j, dtype=float)
    return _stable_sigmoid(diff)[()] if diff.ndim == 0 else _stable_sigmoid(diff)


def pair_targets(root_cause_i: bool, root_cause_j: bool) -> float:
    """Priority target: 1 when i is a root cause and j is not, 0 in the
    mirrored case, 0.5 when both or neither are."""
    if root_cause_i and not root_cause_j:
        return 1.0
    if root_cause_j and not root_cause_i:
        return 0.0
    return 0.5


def pair_loss(prob, target) -> float:
    """RankNet cross-entropy for one pair, with the probability clamped to
    [1e-12, 1 - 1e-12] so extreme score gaps cannot produce log(0)."""
    clamped = min(max(float(prob), PROB_CLAMP), 1.0 - PROB_CLAMP)
    target = float(target)
    return -(target * np.log(clamped) + (1.0 - target) * np.log1p(-clamped))


def pair_batch_loss(scores, pairs):
    """Mean pair loss over a batch plus its gradient w.r.t. the scores.

    pairs: iterable of (i, j, target) index triples into ``scores``. The
    gradient of the clamped cross-entropy w.r.t. the score difference is
    P - target while P is inside the clamp window and exactly 0 outside it.
    """
    scores = np.asarray(scores, dtype=float)
    grad = np.zeros_like(scores)
    if not pairs:
        return 0.0, grad
    idx_i = np.array([p[0] for p in pairs], dtype=int)
    idx_j = np.array([p[1] for p in pairs], dtype=int)
    targets = np.array([p[2] for p in pairs], dtype=float)
    probs = _stable_sigmoid(scores[idx_i] - scores[idx_j])
    clamped = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    losses = -(targets * np.log(clamped) + (1.0 - targets) * np.log1p(-clamped))
    inside = (probs > PROB_CLAMP) & (probs < 1.0 - PROB_CLAMP)
    d_diff = np.where(inside, probs - targets, 0.0) / len(pairs)
    np.add.at(grad, idx_i, d_diff)
    np.add.at(grad, idx_j, -d_diff)
    return float(losses.mean()), grad


def backward(model: RankModel, operator, features, pairs, cache) -> dict:
    """Exact gradients of the mean pair loss for every parameter.

    Requires the cache produced by forward() on the same inputs. Returns a
    dict keyed like model.params().
    """
    operator = np.asarray(operator, dtype=float)
    n_deleted = cache["n_deleted"]
    scores = cache["scores"]
    if operator.shape[0] != scores.shape[0]:
        raise ModelError("cache does not correspond to the given operator")
    _, d_score_deleted = pair_batch_loss(scores[:n_deleted], pairs)
    d_scores = np.zeros_like(scores)
    d_scores[:n_deleted] = d_score_deleted

    x_hat = cache["x_hat"]
    grads = {
        "head_w": cache["normed"].T @ d_scores,
        "head_b": np.array([d_scores.sum()]),
    }
    d_normed = np.outer(d_scores, model.head_w)
    grads["ln_gain"] = (d_normed * x_hat).sum(axis=0)
    grads["ln_bias"] = d_normed.sum(axis=0)

    d_x_hat = d_normed * model.ln_gain
    inv_std = cache["inv_std"]
    d_hidden = inv_std * (
        d_x_hat
        - d_x_hat.mean(axis=1, keepdims=True)
        - x_hat * (d_x_hat * x_hat).mean(axis=1, keepdims=True)
    )

    for layer in reversed(range(model.n_layers)):
        d_pre = d_hidden * (cache["pre_acts"][layer] > 0)
        grads[f"w{layer}"] = cache["mixed"][layer].T @ d_pre
        if layer > 0:
            d_hidden = (operator.T @ d_pre) @ model.weights[layer].T
    return {name: grads[name] for name in model.params()}


def pair_objective(model: RankModel, operator, features, n_deleted: int, pairs):
    """Mean pair loss and parameter gradients in one forward/backward pass."""
    scores, cache = forward(model, operator, features, n_deleted)
    loss, _ = pair_batch_loss(scores, pairs)
    grads = backward(model, operator, features, pairs, cache)
    return loss, grads


CHECKPOINT_FORMAT = "bichunter-ckpt-v1"


def save_checkpoint(model: RankModel, path, meta: dict | None = None) -> None:
    """One JSON header line (dims, parameter declarations, metadata) followed
    by packed little-endian float32 parameter blocks in declared order."""
    params = model.params()
    header = dict(meta or {})
    header.update(
        {
            "format": CHECKPOINT_FORMAT,
            "input_dim": model.input_dim,
            "hidden_dim": model.hidden_dim,
            "n_layers": model.n_layers,
            "ln_eps": model.ln_eps,
            "params": [
                {"name": name, "shape": list(value.shape)}
                for name, value in params.items()
            ],
        }
    )
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for value in params.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (model, header dict)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelError(f"{path}: bad checkpoint header") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ModelError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    arrays = {}
    offset = 0
    for decl in header["params"]:
        shape = tuple(decl["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise ModelError(f"{path}: truncated parameter block {decl['name']!r}")
        arrays[decl["name"]] = (
            np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            .astype(float)
            .reshape(shape)
        )
        offset = end
    if offset != len(blob):
        raise ModelError(f"{path}: {len(blob) - offset} trailing bytes")
    n_layers = header["n_layers"]
    model = RankModel(
        weights=[arrays[f"w{l}"] for l in range(n_layers)],
        ln_gain=arrays["ln_gain"],
        ln_bias=arrays["ln_bias"],
        head_w=arrays["head_w"],
        head_b=arrays["head_b"],
        ln_eps=header["ln_eps"],
    )
    return model, header
