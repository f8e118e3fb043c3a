"""Local-global return predictor.

The prediction decomposes each stock's return into a local (idiosyncratic)
term from its own features and a global term: a per-stock loading vector
(beta head) times a shared D-dimensional daily information vector. The daily
vector comes from attention aggregation of the cross-section (lg_stock), a
linear map of the day's news embedding (lg_llm), or the aggregated vector
gated by a sparse mask (scrl_lg).

Forward passes are pure numpy; gradients are computed by hand-written
backpropagation (see loss_and_grads) so they can be checked against finite
differences exactly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

VARIANTS = ("local", "lg_stock", "lg_llm", "scrl_lg")
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass
class MlpHead:
    """Two-layer net: relu(M @ w1 + b1) @ w2 + b2."""

    w1: np.ndarray  # (m, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, out)
    b2: np.ndarray  # (out,)

    def forward(self, M: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, M @ self.w1 + self.b1) @ self.w2 + self.b2


@dataclass
class AttentionAggregator:
    w_key: np.ndarray    # (m, D)
    w_value: np.ndarray  # (m, D)
    query: np.ndarray    # (D,), the 1 x D query row


@dataclass
class LlmMapper:
    w_llm: np.ndarray  # (D, d_llm)


@dataclass
class MaskVector:
    """Feature-selector mask; binary when sampled, fractional in expectation mode."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ModelError("mask entries must lie in [0, 1]")
        self.values = v


@dataclass
class LgModelParams:
    local: MlpHead          # out = 1
    beta: MlpHead           # out = D
    aggregator: AttentionAggregator
    mapper: LlmMapper
    variant: str = "local"
    # how a policy mask enters scrl_lg: "feature" masks the columns of M fed
    # to the aggregator; "global" gates the aggregated D-vector directly
    mask_mode: str = "feature"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ModelError(f"unknown variant {self.variant!r}")
        if self.mask_mode not in ("feature", "global"):
            raise ModelError(f"unknown mask_mode {self.mask_mode!r}")

    @property
    def m(self) -> int:
        return self.local.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.local.w1.shape[1]

    @property
    def D(self) -> int:
        return self.beta.w2.shape[1]

    @property
    def d_llm(self) -> int:
        return self.mapper.w_llm.shape[1]


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(m: int, hidden: int, D: int, d_llm: int, variant: str,
                seed: int, mask_mode: str = "feature") -> LgModelParams:
    """Seeded symmetric-uniform init, scale 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    local = MlpHead(_uniform(rng, m, (m, hidden)), np.zeros(hidden),
                    _uniform(rng, hidden, (hidden, 1)), np.zeros(1))
    beta = MlpHead(_uniform(rng, m, (m, hidden)), np.zeros(hidden),
                   _uniform(rng, hidden, (hidden, D)), np.zeros(D))
    agg = AttentionAggregator(_uniform(rng, m, (m, D)), _uniform(rng, m, (m, D)),
                              _uniform(rng, D, (D,)))
    mapper = LlmMapper(_uniform(rng, d_llm, (D, d_llm)))
    return LgModelParams(local, beta, agg, mapper, variant, mask_mode)


def attention_weights(agg: AttentionAggregator, M: np.ndarray) -> np.ndarray:
    """Non-negative attention weights over the cross-section, summing to 1.

    Similarities are per-row cosines between the query and each key row,
    clipped at zero and renormalized; if every similarity is clipped the
    weights fall back to uniform 1/n.
    """
    w, _ = _attention_forward(agg, M)
    return w


def _attention_forward(agg: AttentionAggregator, M: np.ndarray):
    n = M.shape[0]
    K = M @ agg.w_key
    V = M @ agg.w_value
    qn = np.linalg.norm(agg.query)
    kn = np.linalg.norm(K, axis=1)
    if qn == 0.0 or np.any(kn == 0.0):
        raise ModelError("degenerate norm: zero query or zero key row")
    s = (K @ agg.query) / (qn * kn)
    a = np.maximum(0.0, s)
    S = a.sum()
    uniform = S == 0.0
    w = np.full(n, 1.0 / n) if uniform else a / S
    cache = {"K": K, "V": V, "qn": qn, "kn": kn, "s": s, "S": S, "uniform": uniform, "w": w}
    return w, cache


def aggregate_stock(agg: AttentionAggregator, M: np.ndarray) -> np.ndarray:
    """Attention-weighted combination of value rows; lies in their convex hull."""
    w, cache = _attention_forward(agg, M)
    return cache["V"].T @ w


def map_llm(mapper: LlmMapper, v_llm: np.ndarray) -> np.ndarray:
    v_llm = np.asarray(v_llm, dtype=np.float64)
    if v_llm.shape != (mapper.w_llm.shape[1],):
        raise ModelError(f"v_llm length {v_llm.shape} != d_llm {mapper.w_llm.shape[1]}")
    return mapper.w_llm @ v_llm


def apply_mask(f_stock: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != f_stock.shape:
        raise ModelError(f"mask length {mask.shape} != vector length {f_stock.shape}")
    return f_stock * mask


def _resolve_masks(params: LgModelParams, mask) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Return (feature_mask of length m, global_mask of length D) for scrl_lg."""
    if mask is None:
        raise ModelError("variant scrl_lg requires a mask")
    vals = mask.values if isinstance(mask, MaskVector) else np.asarray(mask, dtype=np.float64)
    if params.mask_mode == "feature":
        if vals.shape != (params.m,):
            raise ModelError(f"feature mask length {vals.shape} != m {params.m}")
        return vals, None
    if vals.shape == (params.D,):
        return None, vals
    if vals.shape == (params.m,):
        # length-m policy output restricted to the first D coordinates
        return None, vals[: params.D]
    raise ModelError(f"global mask length {vals.shape} fits neither D nor m")


def predict(params: LgModelParams, M: np.ndarray, v_llm: np.ndarray | None = None,
            mask=None) -> np.ndarray:
    """Per-stock return predictions for one cross-section."""
    out, _ = _forward(params, M, v_llm, mask)
    return out


def _forward(params: LgModelParams, M, v_llm, mask):
    if mask is not None and params.variant != "scrl_lg":
        raise ModelError(f"variant {params.variant!r} takes no mask")
    M = np.asarray(M, dtype=np.float64)
    cache: dict = {"M": M}
    z1l = M @ params.local.w1 + params.local.b1
    h1l = np.maximum(0.0, z1l)
    alpha = (h1l @ params.local.w2 + params.local.b2)[:, 0]
    cache.update(z1l=z1l, h1l=h1l)
    if params.variant == "local":
        cache["alpha_only"] = True
        return alpha, cache

    z1b = M @ params.beta.w1 + params.beta.b1
    h1b = np.maximum(0.0, z1b)
    B = h1b @ params.beta.w2 + params.beta.b2
    cache.update(z1b=z1b, h1b=h1b, B=B)

    if params.variant == "lg_llm":
        if v_llm is None:
            raise ModelError("variant lg_llm requires v_llm")
        v_llm = np.asarray(v_llm, dtype=np.float64)
        f = map_llm(params.mapper, v_llm)
        cache.update(v_llm=v_llm, f=f, branch="llm")
        return alpha + B @ f, cache

    feat_mask = glob_mask = None
    if params.variant == "scrl_lg":
        feat_mask, glob_mask = _resolve_masks(params, mask)
    Ma = M * feat_mask[None, :] if feat_mask is not None else M
    aw, att = _attention_forward(params.aggregator, Ma)
    f_stock = att["V"].T @ aw
    f = f_stock * glob_mask if glob_mask is not None else f_stock
    cache.update(Ma=Ma, att=att, f_stock=f_stock, f=f, glob_mask=glob_mask, branch="stock")
    return alpha + B @ f, cache


def zero_grads(params: LgModelParams) -> dict[str, np.ndarray]:
    return {
        "local.w1": np.zeros_like(params.local.w1),
        "local.b1": np.zeros_like(params.local.b1),
        "local.w2": np.zeros_like(params.local.w2),
        "local.b2": np.zeros_like(params.local.b2),
        "beta.w1": np.zeros_like(params.beta.w1),
        "beta.b1": np.zeros_like(params.beta.b1),
        "beta.w2": np.zeros_like(params.beta.w2),
        "beta.b2": np.zeros_like(params.beta.b2),
        "agg.w_key": np.zeros_like(params.aggregator.w_key),
        "agg.w_value": np.zeros_like(params.aggregator.w_value),
        "agg.query": np.zeros_like(params.aggregator.query),
        "map.w_llm": np.zeros_like(params.mapper.w_llm),
    }


def get_param(params: LgModelParams, key: str) -> np.ndarray:
    head, name = key.split(".")
    obj = {"local": params.local, "beta": params.beta,
           "agg": params.aggregator, "map": params.mapper}[head]
    return getattr(obj, name)


def set_param(params: LgModelParams, key: str, value: np.ndarray) -> None:
    head, name = key.split(".")
    obj = {"local": params.local, "beta": params.beta,
           "agg": params.aggregator, "map": params.mapper}[head]
    setattr(obj, name, value)


def trainable_keys(variant: str) -> list[str]:
    keys = ["local.w1", "local.b1", "local.w2", "local.b2"]
    if variant != "local":
        keys += ["beta.w1", "beta.b1", "beta.w2", "beta.b2"]
    if variant in ("lg_stock", "scrl_lg"):
        keys += ["agg.w_key", "agg.w_value", "agg.query"]
    if variant == "lg_llm":
        keys += ["map.w_llm"]
    return keys


def loss_and_grads(params: LgModelParams, M: np.ndarray, r: np.ndarray,
                   v_llm: np.ndarray | None = None, mask=None):
    """Squared-error loss on one cross-section and its analytic gradients.

    Returns (loss, grads, predictions). The mask, when present, is a constant
    of the computation (gradients do not flow into the policy here).
    """
    r = np.asarray(r, dtype=np.float64)
    pred, cache = _forward(params, M, v_llm, mask)
    n = r.shape[0]
    resid = pred - r
    loss = float(np.mean(resid**2))
    dpred = 2.0 * resid / n

    grads = zero_grads(params)
    M = cache["M"]

    def mlp_backward(head: MlpHead, z1, h1, dout, prefix):
        grads[f"{prefix}.w2"] += h1.T @ dout
        grads[f"{prefix}.b2"] += dout.sum(axis=0)
        dh1 = dout @ head.w2.T
        dz1 = dh1 * (z1 > 0.0)
        grads[f"{prefix}.w1"] += M.T @ dz1
        grads[f"{prefix}.b1"] += dz1.sum(axis=0)

    mlp_backward(params.local, cache["z1l"], cache["h1l"], dpred[:, None], "local")
    if cache.get("alpha_only"):
        return loss, grads, pred

    B, f = cache["B"], cache["f"]
    mlp_backward(params.beta, cache["z1b"], cache["h1b"], np.outer(dpred, f), "beta")
    df = B.T @ dpred

    if cache["branch"] == "llm":
        grads["map.w_llm"] += np.outer(df, cache["v_llm"])
        return loss, grads, pred

    df_stock = df * cache["glob_mask"] if cache["glob_mask"] is not None else df
    att, Ma = cache["att"], cache["Ma"]
    w, V, K = att["w"], att["V"], att["K"]
    dV = np.outer(w, df_stock)
    grads["agg.w_value"] += Ma.T @ dV
    if not att["uniform"]:
        dw = V @ df_stock
        da = (dw - float(w @ dw)) / att["S"]
        ds = da * (att["s"] > 0.0)
        qn, kn, s, q = att["qn"], att["kn"], att["s"], params.aggregator.query
        dK = (ds / (qn * kn))[:, None] * q[None, :] - ((ds * s) / kn**2)[:, None] * K
        grads["agg.w_key"] += Ma.T @ dK
        grads["agg.query"] += (ds / kn) @ K / qn - float(ds @ s) * q / qn**2
    return loss, grads, pred


# --- checkpoint io: one JSON header line + raw little-endian float64 bytes ---

_PARAM_KEYS = ["local.w1", "local.b1", "local.w2", "local.b2",
               "beta.w1", "beta.b1", "beta.w2", "beta.b2",
               "agg.w_key", "agg.w_value", "agg.query", "map.w_llm"]


def save_checkpoint(params: LgModelParams, path,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    """Write the checkpoint; extras (e.g. policy arrays) ride along by name."""
    extras = extras or {}
    keys = _PARAM_KEYS + sorted(extras)

    def arr(k):
        return extras[k] if k in extras else get_param(params, k)

    header = {
        "version": CHECKPOINT_VERSION,
        "m": params.m, "hidden": params.hidden, "D": params.D, "d_llm": params.d_llm,
        "variant": params.variant, "mask_mode": params.mask_mode,
        "arrays": [{"key": k, "shape": list(arr(k).shape)} for k in keys],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for k in keys:
            fh.write(np.ascontiguousarray(arr(k), dtype="<f8").tobytes())


def load_checkpoint_with_extras(path) -> tuple[LgModelParams, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {header.get('version')!r}")
        arrays = {}
        for rec in header["arrays"]:
            shape = tuple(rec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ModelError("truncated checkpoint file")
            arrays[rec["key"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    local = MlpHead(arrays["local.w1"], arrays["local.b1"], arrays["local.w2"], arrays["local.b2"])
    beta = MlpHead(arrays["beta.w1"], arrays["beta.b1"], arrays["beta.w2"], arrays["beta.b2"])
    agg = AttentionAggregator(arrays["agg.w_key"], arrays["agg.w_value"], arrays["agg.query"])
    mapper = LlmMapper(arrays["map.w_llm"])
    params = LgModelParams(local, beta, agg, mapper, header["variant"], header["mask_mode"])
    extras = {k: v for k, v in arrays.items() if k not in _PARAM_KEYS}
    return params, extras


def load_checkpoint(path) -> LgModelParams:
    return load_checkpoint_with_extras(path)[0]


def clone_params(params: LgModelParams) -> LgModelParams:
    return copy.deepcopy(params)
