"""Decoder-only causal transformer on numpy with a hand-written backward pass.

Position 0 of the input can be an arbitrary injected vector instead of a token
embedding; it is summed with the position embedding exactly like a token, so
injecting the model's own <bos> row reproduces the plain forward bit for bit.

Parameters are float32; loss and per-token log-probs accumulate in float64.
For gradient checking, ``astype(np.float64)`` casts the whole model so the
analytic and finite-difference sides share one precision.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .tokenization import BOS_ID

LN_EPS = 1e-5
SQRT_2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    layer_count: int = 2
    head_count: int = 4
    ff_dim: int = 256
    max_positions: int = 64
    init_std: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 specials plus a word")
        if self.embed_dim < 1 or self.layer_count < 1 or self.ff_dim < 1:
            raise ValueError("embed_dim, layer_count, ff_dim must be >= 1")
        if self.embed_dim % self.head_count != 0:
            raise ValueError("embed_dim must be divisible by head_count")
        if self.max_positions < 2:
            raise ValueError("max_positions must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_entries(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Fixed (name, shape, kind) order; also the init draw order and file order."""
    d, f = config.embed_dim, config.ff_dim
    entries = [
        ("tok_emb", (config.vocab_size, d), "weight"),
        ("pos_emb", (config.max_positions, d), "weight"),
    ]
    for i in range(config.layer_count):
        p = f"l{i}."
        entries += [
            (p + "ln1_g", (d,), "ln_gain"),
            (p + "ln1_b", (d,), "ln_bias"),
            (p + "wq", (d, d), "weight"),
            (p + "bq", (d,), "bias"),
            (p + "wk", (d, d), "weight"),
            (p + "bk", (d,), "bias"),
            (p + "wv", (d, d), "weight"),
            (p + "bv", (d,), "bias"),
            (p + "wo", (d, d), "weight"),
            (p + "bo", (d,), "bias"),
            (p + "ln2_g", (d,), "ln_gain"),
            (p + "ln2_b", (d,), "ln_bias"),
            (p + "w1", (d, f), "weight"),
            (p + "b1", (f,), "bias"),
            (p + "w2", (f, d), "weight"),
            (p + "b2", (d,), "bias"),
        ]
    entries += [("lnf_g", (d,), "ln_gain"), ("lnf_b", (d,), "ln_bias")]
    return entries


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """normal(0, init_std) weights, zero biases, unit layer-norm gains.

    Draws follow param_entries order from one generator seeded by config.seed,
    so a config fully determines the initialization.
    """
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape, kind in param_entries(config):
        if kind == "weight":
            params[name] = rng.normal(0.0, config.init_std, size=shape).astype(np.float32)
        elif kind == "ln_gain":
            params[name] = np.ones(shape, dtype=np.float32)
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return params


def gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / SQRT_2))


def gelu_prime(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u / SQRT_2)) + u * INV_SQRT_2PI * np.exp(-0.5 * u * u)


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(LN_EPS, dtype=x.dtype))
    xhat = (x - mu) * inv_std
    return g * xhat + b, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, g):
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    ) * inv_std
    return dx, dg, db


class TransformerLM:
    """Causal LM over token ids with optional injected position-0 embedding."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        if params is None:
            params = init_params(config)
        expected = {name: shape for name, shape, _ in param_entries(config)}
        if set(params) != set(expected):
            missing = set(expected) - set(params)
            extra = set(params) - set(expected)
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in params.items():
            if tuple(arr.shape) != expected[name]:
                raise ValueError(f"{name}: shape {arr.shape}, expected {expected[name]}")
        self.params = params

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def astype(self, dtype) -> "TransformerLM":
        return TransformerLM(self.config, {k: v.astype(dtype) for k, v in self.params.items()})

    def _check_tokens(self, tokens, with_injection: bool):
        tokens = list(tokens)
        n = len(tokens) + (1 if with_injection else 0)
        if n == 0:
            raise ValueError("empty input")
        if n > self.config.max_positions:
            raise ValueError(f"sequence of {n} positions exceeds max_positions={self.config.max_positions}")
        for t in tokens:
            if not 0 <= t < self.config.vocab_size:
                raise ValueError(f"token id {t} out of range")
        return tokens

    def _input_rows(self, tokens: list[int], injection: np.ndarray | None) -> np.ndarray:
        p = self.params
        tok_rows = p["tok_emb"][np.asarray(tokens, dtype=np.intp)] if tokens else \
            np.zeros((0, self.config.embed_dim), dtype=self.dtype)
        if injection is None:
            return tok_rows
        inj = np.asarray(injection, dtype=self.dtype)
        if inj.shape != (self.config.embed_dim,):
            raise ValueError(f"injection shape {inj.shape}, expected ({self.config.embed_dim},)")
        return np.concatenate([inj[None, :], tok_rows], axis=0)

    def _forward_cache(self, tokens: list[int], injection: np.ndarray | None):
        p = self.params
        cfg = self.config
        H = cfg.head_count
        dh = cfg.embed_dim // H
        scale = np.asarray(1.0 / math.sqrt(dh), dtype=self.dtype)

        rows = self._input_rows(tokens, injection)
        T = rows.shape[0]
        x = rows + p["pos_emb"][:T]
        causal = np.tril(np.ones((T, T), dtype=bool))

        layers = []
        for i in range(cfg.layer_count):
            pre = f"l{i}."
            a, xhat1, inv1 = _layer_norm(x, p[pre + "ln1_g"], p[pre + "ln1_b"])
            q = a @ p[pre + "wq"] + p[pre + "bq"]
            k = a @ p[pre + "wk"] + p[pre + "bk"]
            v = a @ p[pre + "wv"] + p[pre + "bv"]
            qh = q.reshape(T, H, dh).transpose(1, 0, 2)
            kh = k.reshape(T, H, dh).transpose(1, 0, 2)
            vh = v.reshape(T, H, dh).transpose(1, 0, 2)
            scores = (qh @ kh.transpose(0, 2, 1)) * scale
            scores = np.where(causal, scores, np.asarray(-np.inf, dtype=self.dtype))
            m = scores.max(axis=-1, keepdims=True)
            e = np.exp(scores - m)
            att = e / e.sum(axis=-1, keepdims=True)
            oh = att @ vh
            o = oh.transpose(1, 0, 2).reshape(T, cfg.embed_dim)
            attn_out = o @ p[pre + "wo"] + p[pre + "bo"]
            x_mid = x + attn_out
            fpost, xhat2, inv2 = _layer_norm(x_mid, p[pre + "ln2_g"], p[pre + "ln2_b"])
            u = fpost @ p[pre + "w1"] + p[pre + "b1"]
            g_act = gelu(u).astype(self.dtype)
            m_out = g_act @ p[pre + "w2"] + p[pre + "b2"]
            x_out = x_mid + m_out
            layers.append(
                dict(x=x, xhat1=xhat1, inv1=inv1, a=a, att=att, vh=vh, qh=qh, kh=kh, o=o,
                     x_mid=x_mid, xhat2=xhat2, inv2=inv2, fpost=fpost, u=u, g_act=g_act)
            )
            x = x_out
        y, xhatf, invf = _layer_norm(x, p["lnf_g"], p["lnf_b"])
        logits = y @ p["tok_emb"].T
        cache = dict(tokens=tokens, injection=injection, T=T, layers=layers,
                     y=y, xhatf=xhatf, invf=invf, scale=scale, H=H, dh=dh)
        return logits, cache

    def forward(self, tokens, injection: np.ndarray | None = None) -> np.ndarray:
        """Logits for every input position, shape (T, vocab_size).

        With ``injection`` the input is the injected vector followed by the
        token embeddings; otherwise it is the token embeddings alone.
        """
        tokens = self._check_tokens(tokens, injection is not None)
        logits, _ = self._forward_cache(tokens, injection)
        return logits

    def _targets_and_inputs(self, tokens, injection):
        tokens = list(tokens)
        for t in tokens:
            if not 0 <= t < self.config.vocab_size:
                raise ValueError(f"token id {t} out of range")
        if injection is None:
            if len(tokens) < 2:
                raise ValueError("need at least 2 tokens for next-token loss")
            return tokens[:-1], tokens[1:]
        if len(tokens) < 1:
            raise ValueError("need at least 1 target token")
        return tokens[:-1], tokens

    def nll(self, tokens, injection: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        """Mean per-token NLL in nats and the float64 per-token log-probs.

        Without injection, ``tokens`` is a full marker-wrapped sequence and
        targets are tokens[1:]. With injection, ``tokens`` is the body whose
        every element (including the trailing <eos>) is predicted, the first
        from the injected vector itself.
        """
        inputs, targets = self._targets_and_inputs(tokens, injection)
        inputs = self._check_tokens(inputs, injection is not None)
        logits, _ = self._forward_cache(inputs, injection)
        lp = _log_probs(logits, targets)
        return float(-lp.mean()), lp

    def nll_and_grads(self, tokens, injection: np.ndarray | None = None):
        """Loss, per-token log-probs, and exact gradients of the mean NLL."""
        inputs, targets = self._targets_and_inputs(tokens, injection)
        inputs = self._check_tokens(inputs, injection is not None)
        logits, cache = self._forward_cache(inputs, injection)
        lp = _log_probs(logits, targets)
        loss = float(-lp.mean())
        # d(mean nll)/dlogits = (softmax - onehot) / T
        z = logits.astype(np.float64)
        z -= z.max(axis=-1, keepdims=True)
        soft = np.exp(z)
        soft /= soft.sum(axis=-1, keepdims=True)
        dlogits = soft
        dlogits[np.arange(len(targets)), targets] -= 1.0
        dlogits = (dlogits / len(targets)).astype(self.dtype)
        grads = self._backward(dlogits, cache)
        return loss, lp, grads

    def _backward(self, dlogits: np.ndarray, cache: dict) -> dict[str, np.ndarray]:
        p = self.params
        cfg = self.config
        T, H, dh = cache["T"], cache["H"], cache["dh"]
        scale = cache["scale"]
        grads = {name: np.zeros_like(arr) for name, arr in p.items()}

        grads["tok_emb"] += dlogits.T @ cache["y"]
        dy = dlogits @ p["tok_emb"]
        dx, dgf, dbf = _layer_norm_backward(dy, cache["xhatf"], cache["invf"], p["lnf_g"])
        grads["lnf_g"] += dgf
        grads["lnf_b"] += dbf

        for i in reversed(range(cfg.layer_count)):
            pre = f"l{i}."
            c = cache["layers"][i]
            # x_out = x_mid + g_act @ w2 + b2
            dm = dx
            grads[pre + "w2"] += c["g_act"].T @ dm
            grads[pre + "b2"] += dm.sum(axis=0)
            dg_act = dm @ p[pre + "w2"].T
            du = dg_act * gelu_prime(c["u"]).astype(self.dtype)
            grads[pre + "w1"] += c["fpost"].T @ du
            grads[pre + "b1"] += du.sum(axis=0)
            dfpost = du @ p[pre + "w1"].T
            dx_mid, dg2, db2 = _layer_norm_backward(dfpost, c["xhat2"], c["inv2"], p[pre + "ln2_g"])
            grads[pre + "ln2_g"] += dg2
            grads[pre + "ln2_b"] += db2
            dx_mid = dx_mid + dx
            # x_mid = x + o @ wo + bo
            dattn = dx_mid
            grads[pre + "wo"] += c["o"].T @ dattn
            grads[pre + "bo"] += dattn.sum(axis=0)
            do = (dattn @ p[pre + "wo"].T).reshape(T, H, dh).transpose(1, 0, 2)
            datt = do @ c["vh"].transpose(0, 2, 1)
            dvh = c["att"].transpose(0, 2, 1) @ do
            dscores = c["att"] * (datt - (datt * c["att"]).sum(axis=-1, keepdims=True))
            dqh = (dscores @ c["kh"]) * scale
            dkh = (dscores.transpose(0, 2, 1) @ c["qh"]) * scale
            dq = dqh.transpose(1, 0, 2).reshape(T, cfg.embed_dim)
            dk = dkh.transpose(1, 0, 2).reshape(T, cfg.embed_dim)
            dv = dvh.transpose(1, 0, 2).reshape(T, cfg.embed_dim)
            a = c["a"]
            grads[pre + "wq"] += a.T @ dq
            grads[pre + "bq"] += dq.sum(axis=0)
            grads[pre + "wk"] += a.T @ dk
            grads[pre + "bk"] += dk.sum(axis=0)
            grads[pre + "wv"] += a.T @ dv
            grads[pre + "bv"] += dv.sum(axis=0)
            da = dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
            dx_ln, dg1, db1 = _layer_norm_backward(da, c["xhat1"], c["inv1"], p[pre + "ln1_g"])
            grads[pre + "ln1_g"] += dg1
            grads[pre + "ln1_b"] += db1
            dx = dx_ln + dx_mid

        grads["pos_emb"][:T] += dx
        tokens = cache["tokens"]
        if cache["injection"] is not None:
            token_rows = dx[1:]
        else:
            token_rows = dx
        if tokens:
            np.add.at(grads["tok_emb"], np.asarray(tokens, dtype=np.intp), token_rows)
        return grads

    def batch_nll_and_grads(self, batch: list[tuple[list[int], np.ndarray | None]]):
        """Mean loss over examples and equally weighted mean gradients.

        Each example's loss is its per-token mean; examples then weigh
        equally regardless of length.
        """
        if not batch:
            raise ValueError("empty batch")
        total = 0.0
        grads = {name: np.zeros_like(arr) for name, arr in self.params.items()}
        inv = 1.0 / len(batch)
        for tokens, injection in batch:
            loss, _, g = self.nll_and_grads(tokens, injection)
            total += loss
            for name in grads:
                grads[name] += g[name] * np.asarray(inv, dtype=self.dtype)
        return total * inv, grads

    def sequence_logprob(self, tokens, injection: np.ndarray | None = None) -> float:
        """Total log-probability of the sequence in nats (sum, not mean)."""
        _, lp = self.nll(tokens, injection)
        return float(lp.sum())

    def bos_embedding(self) -> np.ndarray:
        """The <bos> input row; injecting it must reproduce the plain forward."""
        return self.params["tok_emb"][BOS_ID].copy()


def _log_probs(logits: np.ndarray, targets: list[int]) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - logz
    return ls[np.arange(len(targets)), targets]
