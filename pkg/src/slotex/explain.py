"""Per-slot attention explanations: CSV + JSON + rendered heatmaps.

For each sentence the chosen refinement iteration's k x n attention map is
written as CSV (header = surface tokens), the per-slot decoded triples as
JSON, and a heatmap image with tokens on the x-axis, slots on the y-axis
and cell intensity = log attention (floored). Slots that decoded to a real
relation are highlighted and their five strongest tokens annotated.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from . import autodiff as ad  # noqa: E402
from .errors import ContractError  # noqa: E402
from .heads import decode_all  # noqa: E402

ATTENTION_FLOOR = 1e-12
TOP_TOKENS = 5


@dataclass
class Explanation:
    """Everything needed to render one sentence's explanation."""

    tokens: list
    attention: np.ndarray      # k x n, chosen iteration
    log_attention: np.ndarray  # log10 of the floored attention
    decoded: list              # per slot: DecodedTriple or None
    iteration: int


def build_explanation(model, example, iteration=None):
    """Run the model on one example and collect its explanation payload."""
    sentence = model.vocab.encode_tokens(example.tokens)
    with ad.no_grad():
        fw = model.forward(sentence, training=False)
    total = len(fw.attention)
    it = total if iteration is None else iteration
    if not 1 <= it <= total:
        raise ContractError(f"iteration must be in 1..{total}, got {iteration}")
    attn = fw.attention[it - 1].values.data
    decoded = decode_all(fw.outputs, invalid_span=model.config.invalid_span)
    log_attn = np.log10(np.maximum(attn, ATTENTION_FLOOR))
    return Explanation(sentence.tokens, attn.copy(), log_attn, decoded, it)


def write_attention_csv(explanation, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slot", *explanation.tokens])
        for i, row in enumerate(explanation.attention):
            writer.writerow([i, *(repr(float(v)) for v in row)])


def read_attention_csv(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    tokens = rows[0][1:]
    values = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return tokens, values


def write_triples_json(explanation, path):
    """Attention map + per-slot decoded triples, tagged with the iteration."""
    payload = {
        "iteration": explanation.iteration,
        "tokens": list(explanation.tokens),
        "slots": [{"slot": i,
                   "prediction": None if t is None else t.to_json(),
                   "attention": [float(v) for v in explanation.attention[i]]}
                  for i, t in enumerate(explanation.decoded)],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def render_heatmap(explanation, path):
    k, n = explanation.attention.shape
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * n + 2.0), max(3.5, 0.3 * k + 1.5)))
    im = ax.imshow(explanation.log_attention, aspect="auto", cmap="viridis")
    ax.set_xticks(range(n))
    ax.set_xticklabels(explanation.tokens, rotation=60, ha="right", fontsize=8)
    ax.set_yticks(range(k))
    labels = []
    for i, triple in enumerate(explanation.decoded):
        labels.append(f"slot {i}" if triple is None else f"slot {i} [rel {triple.rel}]")
    ax.set_yticklabels(labels, fontsize=8)
    for i, triple in enumerate(explanation.decoded):
        if triple is None:
            continue
        ax.add_patch(plt.Rectangle((-0.5, i - 0.5), n, 1, fill=False,
                                   edgecolor="red", linewidth=1.6))
        ax.get_yticklabels()[i].set_fontweight("bold")
        top = np.argsort(explanation.attention[i])[::-1][:TOP_TOKENS]
        ax.scatter(top, [i] * len(top), marker="o", s=14, facecolors="none",
                   edgecolors="white", linewidths=1.0)
    ax.set_xlabel("tokens")
    ax.set_ylabel("slots (log10 attention)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def export_explanations(model, examples, out_dir, iteration=None, quiet=False):
    """Write CSV + JSON + PNG per sentence; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for idx, example in enumerate(examples):
        expl = build_explanation(model, example, iteration=iteration)
        stem = out / f"sentence_{idx:04d}"
        write_attention_csv(expl, stem.with_suffix(".attention.csv"))
        write_triples_json(expl, stem.with_suffix(".triples.json"))
        render_heatmap(expl, stem.with_suffix(".heatmap.png"))
        written.extend([stem.with_suffix(".attention.csv"),
                        stem.with_suffix(".triples.json"),
                        stem.with_suffix(".heatmap.png")])
        if not quiet:
            print(f"explained sentence {idx}: {example.text}")
    return written
