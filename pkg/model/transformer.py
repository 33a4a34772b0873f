"""
A small decoder-only transformer with a visual-token prefix.

Layout of one forward pass (N = n_visual + T positions):

    visual (Nv, Dv) -> 2-layer MLP adapter -> + segment embedding --+
    text ids (T,)   -> token embedding --------------------------------+-> + positions
    -> n_layers x [x + Attn(RMSNorm(x)), x + MLP(RMSNorm(x))] -> RMSNorm -> head

Visual positions see the whole prefix; text position t sees the prefix and
text positions <= t. Row t of the output is the log-distribution of token t+1.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict

from numeric_core import ops
from numeric_core.node import Node
from numeric_core.params import ParamStore
from tokenizer.conversation import TokenStream

logger = logging.getLogger(__name__)

MASK_FILL = -1e9


class ModelConfigError(ValueError):
    pass


class SequenceTooLongError(ValueError):
    def __init__(self, length: int, limit: int) -> None:
        super().__init__(f"sequence of {length} positions exceeds max_seq_len {limit}")
        self.length = length
        self.limit = limit


class EmptyMaskError(ValueError):
    pass


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_layers: int = 2
    width: int = 64
    n_heads: int = 4
    max_seq_len: int = 512
    vocab_size: int = 0
    visual_token_dim: int = 0
    n_visual_tokens: int = 0
    init_std: float = 0.02
    seed: int = 0

    def check(self) -> None:
        if min(self.n_layers, self.width, self.n_heads, self.vocab_size, self.visual_token_dim) <= 0:
            raise ModelConfigError("layers, width, heads, vocab size and visual token dim must be positive")
        if self.width % self.n_heads:
            raise ModelConfigError(f"width {self.width} is not divisible by {self.n_heads} heads")
        if self.max_seq_len <= self.n_visual_tokens:
            raise ModelConfigError("max_seq_len leaves no room for text after the visual prefix")

    @property
    def head_dim(self) -> int:
        return self.width // self.n_heads


def parameter_count(config: ModelConfig) -> int:
    d, v, dv = config.width, config.vocab_size, config.visual_token_dim
    embeddings = v * d + config.max_seq_len * d + d
    adapter = dv * d + d + d * d + d
    block = 2 * d + 4 * d * d + (d * 4 * d + 4 * d) + (4 * d * d + d)
    return embeddings + adapter + config.n_layers * block + d + d * v


@dataclass(frozen=True)
class Model:
    config: ModelConfig
    params: ParamStore

    def frozen(self) -> "Model":
        return Model(config=self.config, params=self.params.frozen())

    def copy(self) -> "Model":
        return Model(config=self.config, params=self.params.copy())


def init_model(config: ModelConfig) -> Model:
    config.check()
    rng = np.random.default_rng(config.seed)
    d, std = config.width, config.init_std
    residual_std = std / math.sqrt(2 * config.n_layers)
    params = ParamStore()

    def normal(shape, scale=std):
        return rng.normal(0.0, scale, size=shape)

    params.add("tok_emb", normal((config.vocab_size, d)))
    params.add("pos_emb", normal((config.max_seq_len, d)))
    params.add("vis_seg", normal((d,)))
    params.add("vis_w1", normal((config.visual_token_dim, d), 1.0 / math.sqrt(config.visual_token_dim)))
    params.add("vis_b1", np.zeros(d))
    params.add("vis_w2", normal((d, d)))
    params.add("vis_b2", np.zeros(d))
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        params.add(p + "attn_norm", np.ones(d))
        for name in ("wq", "wk", "wv"):
            params.add(p + name, normal((d, d)))
        params.add(p + "wo", normal((d, d), residual_std))
        params.add(p + "mlp_norm", np.ones(d))
        params.add(p + "w_up", normal((d, 4 * d)))
        params.add(p + "b_up", np.zeros(4 * d))
        params.add(p + "w_down", normal((4 * d, d), residual_std))
        params.add(p + "b_down", np.zeros(d))
    params.add("final_norm", np.ones(d))
    params.add("head", normal((d, config.vocab_size)))
    logger.debug("Initialized model with %d parameters (seed %d)", params.num_parameters, config.seed)
    return Model(config=config, params=params)


def attention_mask(n_visual: int, n_text: int) -> np.ndarray:
    """True where attention is blocked."""
    n = n_visual + n_text
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    return cols > np.maximum(rows, n_visual - 1)


def _attention(x: Node, params: ParamStore, prefix: str, config: ModelConfig, mask: np.ndarray) -> Node:
    n = x.shape[0]
    heads, dh = config.n_heads, config.head_dim

    def split(w: str) -> Node:
        return ops.transpose(ops.reshape(x @ params[prefix + w], (n, heads, dh)), (1, 0, 2))

    q, k, v = split("wq"), split("wk"), split("wv")
    logits = ops.matmul(q, ops.transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    weights = ops.exp(ops.log_softmax(ops.mask_fill(logits, mask, MASK_FILL), axis=-1))
    out = ops.reshape(ops.transpose(ops.matmul(weights, v), (1, 0, 2)), (n, config.width))
    return out @ params[prefix + "wo"]


def _mlp(x: Node, params: ParamStore, prefix: str) -> Node:
    hidden = ops.softplus(x @ params[prefix + "w_up"] + params[prefix + "b_up"])
    return hidden @ params[prefix + "w_down"] + params[prefix + "b_down"]


def forward(model: Model, visual: np.ndarray, ids: np.ndarray) -> Node:
    """Log-probabilities (T, vocab) for the text positions."""
    config, params = model.config, model.params
    visual = np.asarray(visual, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.int64)
    n_visual, n_text = visual.shape[0], ids.shape[0]
    if n_visual + n_text > config.max_seq_len:
        raise SequenceTooLongError(n_visual + n_text, config.max_seq_len)
    if visual.shape[1] != config.visual_token_dim:
        raise ModelConfigError(f"visual tokens of dim {visual.shape[1]}, model expects {config.visual_token_dim}")

    adapted = ops.softplus(ops.as_node(visual) @ params["vis_w1"] + params["vis_b1"])
    adapted = adapted @ params["vis_w2"] + params["vis_b2"] + params["vis_seg"]
    tokens = ops.gather_rows(params["tok_emb"], ids)
    x = ops.concat([adapted, tokens], axis=0) + ops.gather_rows(params["pos_emb"], np.arange(n_visual + n_text))

    mask = attention_mask(n_visual, n_text)
    for layer in range(config.n_layers):
        p = f"layers.{layer}."
        x = x + _attention(ops.rms_norm(x, params[p + "attn_norm"]), params, p, config, mask)
        x = x + _mlp(ops.rms_norm(x, params[p + "mlp_norm"]), params, p)

    text = ops.gather_rows(ops.rms_norm(x, params["final_norm"]), np.arange(n_visual, n_visual + n_text))
    return ops.log_softmax(text @ params["head"], axis=-1)


def response_logprobs(model: Model, visual: np.ndarray, stream: TokenStream) -> Node:
    """log P of every supervised token given everything before it."""
    positions = np.flatnonzero(stream.loss_mask)
    if positions.size == 0:
        raise EmptyMaskError("token stream has no supervised positions")
    if positions[0] == 0:
        raise EmptyMaskError("position 0 cannot be supervised")
    # Positions after the last supervised token never influence it.
    ids = stream.ids[: positions[-1] + 1]
    logp = forward(model, visual, ids)
    vocab = model.config.vocab_size
    flat = ops.reshape(logp, (logp.shape[0] * vocab,))
    return ops.gather_rows(flat, (positions - 1) * vocab + ids[positions])


def score(model: Model, visual: np.ndarray, stream: TokenStream) -> Node:
    """Token-average log-probability of the supervised tokens."""
    return ops.mean(response_logprobs(model, visual, stream))


def sequence_nll(model: Model, visual: np.ndarray, stream: TokenStream) -> Node:
    """Summed negative log-likelihood of the supervised tokens."""
    return -ops.sum(response_logprobs(model, visual, stream))
