"""End-to-end optimization: AdamW with two learning-rate groups, linear
warmup/decay schedule, global gradient-norm clipping, per-epoch validation
and best-checkpoint tracking.

A batch is processed sentence by sentence and averaged into one scalar
loss before the single backward pass; this is arithmetically identical to
padded batching and keeps the transport-plan marginals exact per sentence.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NumericError, ParseError, SchemaError
from .evaluation import evaluate_model
from .model import ModelConfig, TripleExtractor
from .slot_attention import VARIANT_OT, VARIANTS

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 50
    num_classes: int = 11
    num_generated_triples: int = 15
    encoder_lr: float = 5e-4
    decoder_lr: float = 2e-3
    mesh_lr: float = 6.0
    n_mesh_iters: int = 4
    num_iterations: int = 3
    slot_dropout: float = 0.2
    max_grad_norm: float = 2.5
    weight_decay: float = 1e-5
    lr_decay: float = 0.01
    warmup_rate: float = 0.1
    seed: int = 42
    variant: str = VARIANT_OT
    sinkhorn_epsilon: float = 1.0
    sinkhorn_max_iters: int = 200
    sinkhorn_tol: float = 1e-9

    def validate(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if not 0.0 <= self.warmup_rate < 1.0:
            raise ConfigError("warmup_rate must lie in [0, 1)")
        for name in ("encoder_lr", "decoder_lr", "max_grad_norm",
                     "sinkhorn_epsilon", "sinkhorn_tol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.lr_decay < 0 or self.slot_dropout < 0:
            raise ConfigError("rates must be nonnegative")
        return self

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path):
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"config is not valid JSON: {exc}") from exc
        known = set(cls.__dataclass_fields__)
        unknown = set(payload) - known
        if unknown:
            raise SchemaError(f"config has unknown keys: {sorted(unknown)}")
        return cls(**payload).validate()

    def model_config(self, relations, **overrides):
        kwargs = dict(
            num_slots=self.num_generated_triples,
            num_iterations=self.num_iterations,
            num_classes=self.num_classes,
            variant=self.variant,
            slot_dropout=self.slot_dropout,
            mesh_lr=self.mesh_lr,
            n_mesh_iters=self.n_mesh_iters,
            sinkhorn_epsilon=self.sinkhorn_epsilon,
            sinkhorn_max_iters=self.sinkhorn_max_iters,
            sinkhorn_tol=self.sinkhorn_tol,
        )
        kwargs.update(overrides)
        cfg = ModelConfig(**kwargs)
        if cfg.num_classes != len(relations) + 1:
            raise ConfigError(
                f"num_classes={cfg.num_classes} does not match inventory size "
                f"{len(relations)} + 1")
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1_exact: float
    val_f1_partial: float
    wall_time_s: float
    sinkhorn_nonconverged: int

    FIELDS = ("epoch", "train_loss", "val_f1_exact", "val_f1_partial",
              "wall_time_s", "sinkhorn_nonconverged")


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_f1_exact: float = 0.0

    def append(self, record):
        self.epochs.append(record)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(EpochRecord.FIELDS)
            for rec in self.epochs:
                writer.writerow([getattr(rec, f) for f in EpochRecord.FIELDS])


def lr_schedule(step, total_steps, base_lr, warmup_rate, lr_decay):
    """Linear warmup to base_lr, then linear decay to lr_decay * base_lr."""
    if total_steps <= 0:
        return base_lr
    step = min(max(step, 0), total_steps)
    warm = warmup_rate * total_steps
    if warm > 0 and step < warm:
        return base_lr * step / warm
    if total_steps == warm:
        return base_lr
    frac = (step - warm) / (total_steps - warm)
    return base_lr * (1.0 + (lr_decay - 1.0) * frac)


def clip_gradient_norm(tensors, max_norm):
    """Scale all gradients jointly so the global norm is at most max_norm.

    Returns the pre-clip norm. NaN/Inf gradients abort with a numeric error.
    """
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = float(np.sqrt(total))
    if not np.isfinite(norm):
        raise NumericError("non-finite gradient norm; step aborted")
    if norm > max_norm:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return norm


class AdamW:
    """Adaptive moments with bias correction and decoupled weight decay."""

    def __init__(self, params, encoder_names, weight_decay):
        self.params = dict(params)
        self.encoder_names = set(encoder_names)
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(t.data) for name, t in self.params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params.items()}
        self.step_count = 0

    def step(self, encoder_lr, decoder_lr):
        self.step_count += 1
        bc1 = 1.0 - ADAM_BETA1 ** self.step_count
        bc2 = 1.0 - ADAM_BETA2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"NaN gradient for {name}; step aborted")
            m = self.m[name]
            v = self.v[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * g * g
            lr = encoder_lr if name in self.encoder_names else decoder_lr
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            p.data -= lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def optimizer_step(optimizer, tensors, config, encoder_lr, decoder_lr):
    """Clip the global gradient norm, then apply one AdamW update."""
    norm = clip_gradient_norm(tensors, config.max_grad_norm)
    optimizer.step(encoder_lr, decoder_lr)
    return norm


def _batches(order, size):
    for start in range(0, len(order), size):
        yield order[start:start + size]


def train(train_examples, valid_examples, relations, config, *, out_dir=None,
          quiet=False, stop_at_f1=None, model_overrides=None):
    """Full training run; returns (model restored to the best epoch, RunRecord).

    ``stop_at_f1`` optionally ends the run early once the validation
    exact-match F1 reaches the threshold (wall-clock guard for harnesses;
    the config file schema is unchanged).
    """
    config.validate()
    if not train_examples:
        raise ConfigError("training corpus is empty")
    max_golds = max(ex.triple_count for ex in train_examples)
    if config.num_generated_triples < max_golds:
        raise ConfigError(
            f"num_generated_triples={config.num_generated_triples} is below the "
            f"corpus maximum of {max_golds} triples per sentence")

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    from .encoder import build_vocab

    vocab = build_vocab([ex.tokens for ex in train_examples])
    model_cfg = config.model_config(relations, **(model_overrides or {}))
    model = TripleExtractor(vocab, relations, model_cfg, seed=config.seed)
    sentences = [vocab.encode_tokens(ex.tokens) for ex in train_examples]

    rng = np.random.default_rng(config.seed)
    optimizer = AdamW(model.params, model.encoder_parameter_names(), config.weight_decay)
    steps_per_epoch = (len(train_examples) + config.batch_size - 1) // config.batch_size
    total_steps = steps_per_epoch * config.epochs

    record = RunRecord()
    best_snapshot = model.state_snapshot()
    step_index = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_examples))
        epoch_loss = 0.0
        nonconverged = 0
        for batch in _batches(order, config.batch_size):
            model.zero_grads()
            total = None
            for idx in batch:
                loss, fw, _ = model.loss_for(sentences[idx], train_examples[idx].golds,
                                             training=True, rng=rng)
                nonconverged += sum(1 for info in fw.sinkhorn_infos if not info.converged)
                total = loss if total is None else ad.add(total, loss)
            total = ad.mul(total, 1.0 / len(batch))
            if not np.isfinite(total.data):
                _dump_bad_batch(out_path, batch, train_examples)
                raise NumericError("non-finite loss; offending batch dumped")
            ad.backward(total)
            enc_lr = lr_schedule(step_index, total_steps, config.encoder_lr,
                                 config.warmup_rate, config.lr_decay)
            dec_lr = lr_schedule(step_index, total_steps, config.decoder_lr,
                                 config.warmup_rate, config.lr_decay)
            optimizer_step(optimizer, list(model.params.values()), config, enc_lr, dec_lr)
            step_index += 1
            epoch_loss += float(total.data) * len(batch)
        epoch_loss /= len(train_examples)

        report = evaluate_model(model, valid_examples) if valid_examples else None
        f1_exact = report.f1("exact") if report else 0.0
        f1_partial = report.f1("partial") if report else 0.0
        wall = time.perf_counter() - t0
        record.append(EpochRecord(epoch, epoch_loss, f1_exact, f1_partial,
                                  wall, nonconverged))
        if nonconverged:
            logger.warning("epoch %d: %d sinkhorn calls did not converge",
                           epoch, nonconverged)
        if record.best_epoch < 0 or f1_exact > record.best_val_f1_exact:
            record.best_val_f1_exact = f1_exact
            record.best_epoch = epoch
            best_snapshot = model.state_snapshot()
            if out_path is not None:
                model.save(out_path / "checkpoint.npz")  # crash-safe best-so-far
        if not quiet:
            print(f"epoch {epoch:3d}  loss {epoch_loss:9.4f}  "
                  f"val F1 exact {f1_exact:6.4f} partial {f1_partial:6.4f}  "
                  f"({wall:5.1f}s)")
        if stop_at_f1 is not None and f1_exact >= stop_at_f1:
            break

    model.load_snapshot(best_snapshot)
    if out_path is not None:
        model.save(out_path / "checkpoint.npz")
        vocab.save(out_path / "vocab.txt")
        record.to_csv(out_path / "run_record.csv")
        config.to_json(out_path / "config_used.json")
    return model, record


def _dump_bad_batch(out_path, batch, examples):
    if out_path is None:
        return
    payload = [{"index": int(i), "text": examples[i].text} for i in batch]
    (out_path / "nan_batch_dump.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8")
