"""The full extractor: encoder -> slot attention -> heads, plus checkpoints.

Parameters live in a flat name -> Tensor map. Checkpoints are numpy ``.npz``
archives holding one float64 array per parameter under these exact keys
(documented in the README) plus a ``__meta__`` JSON string carrying the
model hyperparameters, vocabulary and relation inventory, which makes a
checkpoint self-contained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import heads as heads_mod
from . import matching
from .encoder import EncodedSequence, EncoderParams, Vocabulary, encode
from .errors import ConfigError
from .slot_attention import (OTConfig, SlotAttentionParams, SlotBank,
                             VARIANT_OT, VARIANTS, run_slot_attention)

ENCODER_PREFIX = "encoder/"

# Slot states leave the GRU with small magnitude; the relation logits need a
# larger initial gain than the other heads or the no-relation prior swamps
# them and the relation head never differentiates.
RELATION_INIT_GAIN = 10.0


@dataclass
class ModelConfig:
    dim: int = 64
    num_slots: int = 15
    num_iterations: int = 3
    num_classes: int = 11  # relation inventory size + the reserved no-relation class
    variant: str = VARIANT_OT
    slot_dropout: float = 0.2
    slot_layernorm: bool = False
    mesh_lr: float = 6.0
    n_mesh_iters: int = 4
    sinkhorn_epsilon: float = 1.0
    sinkhorn_max_iters: int = 200
    sinkhorn_tol: float = 1e-9
    ot_implementation: str = "fused"
    invalid_span: str = "swap"
    head_word: str = "last"

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if self.num_classes < 2:
            raise ConfigError("need at least one relation plus the no-relation class")
        if min(self.dim, self.num_slots, self.num_iterations) < 1:
            raise ConfigError("dim, num_slots and num_iterations must be positive")
        if not 0.0 <= self.slot_dropout < 1.0:
            raise ConfigError("slot_dropout must be in [0, 1)")
        return self

    def ot_config(self):
        return OTConfig(self.sinkhorn_epsilon, self.sinkhorn_max_iters,
                        self.sinkhorn_tol, self.mesh_lr, self.n_mesh_iters,
                        self.ot_implementation)


@dataclass
class ForwardPass:
    encoded: EncodedSequence
    slots: SlotBank
    attention: list
    outputs: heads_mod.HeadOutputs
    sinkhorn_infos: list = field(default_factory=list)


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return ad.Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def _zeros(shape):
    return ad.Tensor(np.zeros(shape), requires_grad=True)


class TripleExtractor:
    """End-to-end slot-attention triple extractor over a fixed vocabulary."""

    def __init__(self, vocab, relations, config=None, seed=0):
        self.vocab = vocab
        self.relations = list(relations)
        self.config = (config or ModelConfig()).validate()
        if self.config.num_classes != len(self.relations) + 1:
            raise ConfigError(
                f"num_classes={self.config.num_classes} but inventory has "
                f"{len(self.relations)} relations (+1 for no-relation)")
        d = self.config.dim
        k = self.config.num_slots
        rng = np.random.default_rng(seed)
        p = {}
        p["encoder/embedding"] = _uniform(rng, (len(vocab), d), d)
        for name in ("attn_query", "attn_key", "attn_value"):
            p[f"encoder/{name}"] = _uniform(rng, (d, d), d)
        p["slots/init"] = _uniform(rng, (k, d), d)
        for name in ("query", "key", "value"):
            p[f"slot_attn/{name}"] = _uniform(rng, (d, d), d)
        for gate in ("update", "reset", "cand"):
            p[f"gru/w_{gate}"] = _uniform(rng, (d, d), d)
            p[f"gru/u_{gate}"] = _uniform(rng, (d, d), d)
            p[f"gru/b_{gate}"] = _zeros((d,))
        for head in heads_mod.SPAN_HEAD_NAMES:
            p[f"heads/{head}/w_slot"] = _uniform(rng, (d, d), d)
            p[f"heads/{head}/w_tok"] = _uniform(rng, (d, d), d)
            p[f"heads/{head}/proj"] = _uniform(rng, (d, 1), d)
        p["heads/relation"] = _uniform(rng, (self.config.num_classes, d),
                                       d / RELATION_INIT_GAIN ** 2)
        self.params = p

    # ----- parameter views -------------------------------------------------

    def encoder_params(self):
        return EncoderParams(
            embedding=self.params["encoder/embedding"],
            attn_query=self.params["encoder/attn_query"],
            attn_key=self.params["encoder/attn_key"],
            attn_value=self.params["encoder/attn_value"])

    def slot_params(self):
        gru = ad.GRUParams(*[self.params[f"gru/{w}_{g}"]
                             for g in ("update", "reset", "cand")
                             for w in ("w", "u", "b")])
        return SlotAttentionParams(
            slot_init=self.params["slots/init"],
            query=self.params["slot_attn/query"],
            key=self.params["slot_attn/key"],
            value=self.params["slot_attn/value"],
            gru=gru)

    def head_params(self):
        span = [heads_mod.SpanHeadParams(*[self.params[f"heads/{h}/{w}"]
                                           for w in ("w_slot", "w_tok", "proj")])
                for h in heads_mod.SPAN_HEAD_NAMES]
        return heads_mod.HeadParams(*span, relation=self.params["heads/relation"])

    def parameters(self):
        return dict(self.params)

    def encoder_parameter_names(self):
        return {name for name in self.params if name.startswith(ENCODER_PREFIX)}

    def zero_grads(self):
        for t in self.params.values():
            t.zero_grad()

    # ----- forward ---------------------------------------------------------

    def forward(self, sentence, training=False, rng=None):
        cfg = self.config
        encoded = encode(sentence, self.encoder_params())
        slot_p = self.slot_params()
        bank, maps, infos = run_slot_attention(
            encoded, SlotBank(slot_p.slot_init), cfg.num_iterations, cfg.variant,
            slot_p, dropout_rate=cfg.slot_dropout, training=training, rng=rng,
            slot_layernorm=cfg.slot_layernorm, ot_config=cfg.ot_config())
        outputs = heads_mod.head_outputs(bank.slots, encoded, self.head_params())
        return ForwardPass(encoded, bank, maps, outputs, infos)

    def loss_for(self, sentence, golds, training=False, rng=None):
        """Hungarian-matched set loss for one sentence; returns the pass too."""
        fw = self.forward(sentence, training=training, rng=rng)
        assignment = matching.match(fw.outputs, golds)
        loss = matching.set_loss(fw.outputs, golds, assignment)
        return loss, fw, assignment

    def predict(self, sentence):
        """Deduplicated decoded triples (set semantics, highest score kept)."""
        with ad.no_grad():
            fw = self.forward(sentence, training=False)
        decoded = heads_mod.decode_all(fw.outputs, invalid_span=self.config.invalid_span)
        best = {}
        for triple in decoded:
            if triple is None:
                continue
            key = triple.key()
            if key not in best or triple.score > best[key].score:
                best[key] = triple
        return list(best.values())

    def predict_example(self, example):
        return self.predict(self.vocab.encode_tokens(example.tokens))

    # ----- persistence -----------------------------------------------------

    def meta(self):
        return {"format": 1,
                "config": asdict(self.config),
                "vocab": self.vocab.tokens,
                "relations": self.relations}

    def save(self, path):
        arrays = {name: t.data for name, t in self.params.items()}
        arrays["__meta__"] = np.frombuffer(
            json.dumps(self.meta()).encode("utf-8"), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        with np.load(path) as archive:
            if "__meta__" not in archive:
                raise ConfigError(f"{path} is not a model checkpoint (missing __meta__)")
            meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
            arrays = {name: archive[name] for name in archive.files if name != "__meta__"}
        model = cls(Vocabulary(meta["vocab"]), meta["relations"],
                    ModelConfig(**meta["config"]), seed=0)
        missing = set(model.params) - set(arrays)
        if missing:
            raise ConfigError(f"checkpoint is missing parameters: {sorted(missing)}")
        for name, tensor in model.params.items():
            if tensor.data.shape != arrays[name].shape:
                raise ConfigError(f"checkpoint shape mismatch for {name}")
            tensor.data = np.array(arrays[name], dtype=np.float64)
        return model

    def state_snapshot(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_snapshot(self, snapshot):
        for name, tensor in self.params.items():
            tensor.data = snapshot[name].copy()
