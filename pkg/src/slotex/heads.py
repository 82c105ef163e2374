"""Structured readout: each slot yields five categorical distributions.

Four position heads (subject start/end, object start/end) score every
token against the slot through a shared-form bilinear-tanh layer, and a
relation head classifies the slot over the relation inventory plus the
reserved no-relation class (always the last index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .encoder import EncodedSequence
from .errors import ContractError, DimensionError

SPAN_HEAD_NAMES = ("subj_start", "subj_end", "obj_start", "obj_end")
INVALID_SPAN_MODES = ("swap", "discard")


@dataclass
class SpanHeadParams:
    w_slot: ad.Tensor
    w_tok: ad.Tensor
    proj: ad.Tensor

    def tensors(self):
        return [self.w_slot, self.w_tok, self.proj]


@dataclass
class HeadParams:
    subj_start: SpanHeadParams
    subj_end: SpanHeadParams
    obj_start: SpanHeadParams
    obj_end: SpanHeadParams
    relation: ad.Tensor

    def span_heads(self):
        return (self.subj_start, self.subj_end, self.obj_start, self.obj_end)

    def tensors(self):
        out = []
        for head in self.span_heads():
            out.extend(head.tensors())
        out.append(self.relation)
        return out


@dataclass
class HeadOutputs:
    """Per-slot distributions: spans over n positions, relation over t+1 classes."""

    subj_start: ad.Tensor
    subj_end: ad.Tensor
    obj_start: ad.Tensor
    obj_end: ad.Tensor
    relation: ad.Tensor

    @property
    def num_slots(self):
        return self.relation.shape[0]

    @property
    def num_positions(self):
        return self.subj_start.shape[1]

    @property
    def na_index(self):
        return self.relation.shape[1] - 1

    def span_matrices(self):
        return (self.subj_start, self.subj_end, self.obj_start, self.obj_end)


@dataclass
class TriplePrediction:
    """One slot's five distributions as plain arrays (for decode/eval)."""

    p_ss: np.ndarray
    p_se: np.ndarray
    p_os: np.ndarray
    p_oe: np.ndarray
    p_rs: np.ndarray
    slot_index: int


@dataclass(frozen=True)
class DecodedTriple:
    ss: int
    se: int
    os: int
    oe: int
    rel: int
    score: float

    def key(self):
        return (self.ss, self.se, self.rel, self.os, self.oe)

    def to_json(self):
        return {"subject": [self.ss, self.se], "relation": self.rel,
                "object": [self.os, self.oe], "score": self.score}


def _span_logits(slots, feats, head):
    k, d = slots.shape
    n = feats.shape[0]
    if feats.shape[1] != d:
        raise DimensionError(f"slot width {d} vs feature width {feats.shape[1]}")
    from_slot = ad.matmul(slots, head.w_slot)
    from_tok = ad.matmul(feats, head.w_tok)
    mixed = ad.tanh(ad.add(ad.reshape(from_slot, (k, 1, d)), ad.reshape(from_tok, (1, n, d))))
    return ad.reshape(ad.matmul(ad.reshape(mixed, (k * n, d)), head.proj), (k, n))


def head_outputs(slots, feats, params):
    """All five distributions for every slot at once."""
    z = slots if isinstance(slots, ad.Tensor) else slots.slots
    h = feats.features if isinstance(feats, EncodedSequence) else ad.as_tensor(feats)
    mats = [ad.softmax_rows(_span_logits(z, h, head)) for head in params.span_heads()]
    rel = ad.softmax_rows(ad.matmul(z, ad.transpose(params.relation)))
    return HeadOutputs(*mats, rel)


def predict_spans(slot_vec, feats, params):
    """Spec surface for one slot: four position distributions as arrays."""
    z = ad.as_tensor(slot_vec)
    if z.ndim == 1:
        z = ad.reshape(z, (1, z.shape[0]))
    h = feats.features if isinstance(feats, EncodedSequence) else ad.as_tensor(feats)
    out = [ad.softmax_rows(_span_logits(z, h, head)).data[0] for head in params.span_heads()]
    return tuple(out)


def predict_relation(slot_vec, params):
    """Distribution over t+1 relation classes for one slot."""
    z = ad.as_tensor(slot_vec)
    if z.ndim == 1:
        z = ad.reshape(z, (1, z.shape[0]))
    if z.shape[1] != params.relation.shape[1]:
        raise DimensionError(
            f"slot width {z.shape[1]} vs relation head width {params.relation.shape[1]}")
    return ad.softmax_rows(ad.matmul(z, ad.transpose(params.relation))).data[0]


def predictions_from(outputs):
    """Split batched head outputs into per-slot TriplePrediction records."""
    preds = []
    for i in range(outputs.num_slots):
        preds.append(TriplePrediction(
            p_ss=outputs.subj_start.data[i],
            p_se=outputs.subj_end.data[i],
            p_os=outputs.obj_start.data[i],
            p_oe=outputs.obj_end.data[i],
            p_rs=outputs.relation.data[i],
            slot_index=i,
        ))
    return preds


def _masked_argmax(p):
    # boundary markers (first/last position) are never part of an entity
    masked = p.copy()
    masked[0] = -np.inf
    masked[-1] = -np.inf
    idx = int(np.argmax(masked))
    return idx, float(p[idx])


def decode(pred, n, invalid_span="swap"):
    """Argmax readout of one slot: a DecodedTriple, or None for no-relation.

    Span distributions have boundary positions masked before the argmax.
    An inverted span is repaired by swapping its endpoints (``swap``) or
    drops the slot (``discard``). The attached score is the product of the
    five argmax probabilities.
    """
    if invalid_span not in INVALID_SPAN_MODES:
        raise ContractError(f"invalid_span must be one of {INVALID_SPAN_MODES}")
    if n < 3:
        raise ContractError("need at least one body token between the markers")
    rel = int(np.argmax(pred.p_rs))
    na_index = pred.p_rs.shape[0] - 1
    if rel == na_index:
        return None
    ss, p1 = _masked_argmax(pred.p_ss)
    se, p2 = _masked_argmax(pred.p_se)
    os_, p3 = _masked_argmax(pred.p_os)
    oe, p4 = _masked_argmax(pred.p_oe)
    if se < ss or oe < os_:
        if invalid_span == "discard":
            return None
        if se < ss:
            ss, se = se, ss
        if oe < os_:
            os_, oe = oe, os_
    score = float(pred.p_rs[rel]) * p1 * p2 * p3 * p4
    return DecodedTriple(ss, se, os_, oe, rel, score)


def decode_all(outputs, invalid_span="swap"):
    """Decode every slot; returns a list aligned with the slot index."""
    n = outputs.num_positions
    return [decode(p, n, invalid_span=invalid_span) for p in predictions_from(outputs)]
