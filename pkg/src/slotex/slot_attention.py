"""Iterative slot refinement against token features.

Slots compete for tokens through one of two attention variants:

* ``softmax``: scaled dot-product logits, softmax across slots per token,
  then each slot's weights renormalized over tokens (rows sum to 1).
* ``optimal_transport``: cosine similarity costs, sharpened by the
  entropy-minimizing refinement, then sinkhorn-normalized into a transport
  plan (rows sum to 1, columns to k/n).

Each iteration re-projects queries from the current slots and feeds the
attention-weighted values into a GRU update. All per-iteration attention
maps are kept for explanation export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ot
from .encoder import EncodedSequence, layer_norm_rows
from .errors import ContractError

VARIANT_SOFTMAX = "softmax"
VARIANT_OT = "optimal_transport"
VARIANTS = (VARIANT_SOFTMAX, VARIANT_OT)


@dataclass
class SlotBank:
    """Current slot vectors (k x d) and the refinement step they came from."""

    slots: ad.Tensor
    iteration: int = 0

    @property
    def count(self):
        return self.slots.shape[0]

    @property
    def width(self):
        return self.slots.shape[1]


@dataclass
class AttentionMap:
    """One k x n slot-token attention matrix."""

    values: ad.Tensor
    variant: str
    iteration: int


@dataclass
class SlotAttentionParams:
    slot_init: ad.Tensor
    query: ad.Tensor
    key: ad.Tensor
    value: ad.Tensor
    gru: ad.GRUParams

    def tensors(self):
        return [self.slot_init, self.query, self.key, self.value, *self.gru.tensors()]


@dataclass
class OTConfig:
    """Settings for the optimal-transport variant."""

    epsilon: float = 1.0
    max_iters: int = 200
    tol: float = 1e-9
    mesh_lr: float = 6.0
    n_mesh_iters: int = 4
    implementation: str = "fused"


def project_qkv(slots, feats, params):
    """Queries from slots, keys/values from token features."""
    z = slots.slots if isinstance(slots, SlotBank) else ad.as_tensor(slots)
    h = feats.features if isinstance(feats, EncodedSequence) else ad.as_tensor(feats)
    if z.shape[1] != params.query.shape[0] or h.shape[1] != params.key.shape[0]:
        raise ContractError(
            f"width mismatch: slots {z.shape}, features {h.shape}, "
            f"projections {params.query.shape}"
        )
    return ad.matmul(z, params.query), ad.matmul(h, params.key), ad.matmul(h, params.value)


def softmax_attention(queries, keys):
    """Slots compete per token, then each slot renormalizes over tokens."""
    width = queries.shape[1]
    logits = ad.mul(ad.matmul(queries, ad.transpose(keys)), 1.0 / math.sqrt(width))
    per_token = ad.softmax(logits, axis=0)
    row_mass = ad.sum_(per_token, axis=1, keepdims=True)
    return ad.mul(per_token, ad.div(1.0, row_mass))


def cosine_cost(queries, keys):
    """Cosine similarity between every slot query and token key, in [-1, 1]."""
    sim = ad.matmul(queries, ad.transpose(keys))
    qn = ad.sqrt(ad.add(ad.sum_(ad.mul(queries, queries), axis=1, keepdims=True), 1e-30))
    kn = ad.sqrt(ad.add(ad.sum_(ad.mul(keys, keys), axis=1, keepdims=True), 1e-30))
    denom = ad.add(ad.matmul(qn, ad.transpose(kn)), 1e-8)
    return ad.div(sim, denom)


def ot_attention(queries, keys, cfg):
    """Cost -> entropy-minimizing refinement -> transport plan."""
    cost = cosine_cost(queries, keys)
    refined = ot.mesh(cost, cfg.mesh_lr, cfg.n_mesh_iters, cfg.epsilon,
                      cfg.max_iters, cfg.tol, implementation=cfg.implementation)
    return ot.sinkhorn(refined, cfg.epsilon, cfg.max_iters, cfg.tol,
                       implementation=cfg.implementation)


def run_slot_attention(feats, init, num_iterations, variant, params, *,
                       dropout_rate=0.0, training=False, rng=None,
                       slot_layernorm=False, ot_config=None):
    """Refine slots for ``num_iterations`` rounds.

    Returns the final slot bank, every iteration's attention map, and the
    sinkhorn convergence info collected along the way (empty for the
    softmax variant). Dropout is applied to the slot state between
    iterations during training only.
    """
    if variant not in VARIANTS:
        raise ContractError(f"variant must be one of {VARIANTS}")
    if num_iterations < 1:
        raise ContractError("need at least one refinement iteration")
    if training and dropout_rate > 0.0 and rng is None:
        raise ContractError("training with dropout needs an rng")
    cfg = ot_config or OTConfig()

    h = feats.features if isinstance(feats, EncodedSequence) else ad.as_tensor(feats)
    if slot_layernorm:
        h = layer_norm_rows(h)
    keys = ad.matmul(h, params.key)
    values = ad.matmul(h, params.value)

    z = init.slots if isinstance(init, SlotBank) else ad.as_tensor(init)
    maps = []
    infos = []
    for step in range(1, num_iterations + 1):
        z_in = layer_norm_rows(z) if slot_layernorm else z
        queries = ad.matmul(z_in, params.query)
        if variant == VARIANT_SOFTMAX:
            attn = softmax_attention(queries, keys)
        else:
            attn, info = ot_attention(queries, keys, cfg)
            infos.append(info)
        maps.append(AttentionMap(attn, variant, step))
        z = ad.gru_cell(z, ad.matmul(attn, values), params.gru)
        if training and dropout_rate > 0.0 and step < num_iterations:
            keep = (rng.random(z.shape) >= dropout_rate).astype(np.float64)
            z = ad.mul(z, ad.Tensor(keep / (1.0 - dropout_rate)))
    return SlotBank(z, num_iterations), maps, infos
