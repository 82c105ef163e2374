"""Benchmark the optimal-transport attention kernels across backends.

Times the hot path (cost refinement + sinkhorn, forward and backward) for
the compiled extension vs the pure-numpy fallback, plus the fully unrolled
tape implementation for reference, and a whole end-to-end training step.

Usage: python benchmarks/compare_backends.py [--reps 200]
"""

import argparse
import time

import numpy as np

from slotex import autodiff as ad
from slotex import kernels, ot
from slotex.data import CorpusManifest, generate_synthetic
from slotex.encoder import build_vocab
from slotex.model import ModelConfig, TripleExtractor


def time_ot_block(reps, implementation):
    rng = np.random.default_rng(0)
    cost = ad.Tensor(rng.uniform(-1, 1, (15, 20)), requires_grad=True)
    weight = ad.Tensor(rng.normal(size=(15, 20)))
    t0 = time.perf_counter()
    for _ in range(reps):
        refined = ot.mesh(cost, 6.0, 4, implementation=implementation)
        plan, _ = ot.sinkhorn(refined, implementation=implementation)
        ad.grad(ad.sum_(ad.mul(plan, weight)), [cost])
    return (time.perf_counter() - t0) / reps * 1e3


def time_training_step(reps):
    manifest = CorpusManifest(train_size=max(reps, 16), valid_size=0, test_size=0, seed=3)
    examples, _, _ = generate_synthetic(manifest)
    examples = examples[:reps]
    vocab = build_vocab([ex.tokens for ex in examples])
    model = TripleExtractor(vocab, manifest.relations, ModelConfig(), seed=0)
    sentences = [vocab.encode_tokens(ex.tokens) for ex in examples]
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for sent, ex in zip(sentences, examples):
        loss, _, _ = model.loss_for(sent, ex.golds, training=True, rng=rng)
        ad.backward(loss)
        model.zero_grads()
    return (time.perf_counter() - t0) / len(examples) * 1e3


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--reps", type=int, default=100)
    args = parser.parse_args()

    print(f"available backends: {', '.join(kernels.available_backends())}")
    print(f"{'backend':<10} {'OT block fwd+bwd':>18} {'train step/sentence':>21}")
    for backend in kernels.available_backends():
        kernels.use_backend(backend)
        block = time_ot_block(args.reps, "fused")
        step = time_training_step(min(args.reps, 60))
        print(f"{backend:<10} {block:>15.3f} ms {step:>18.3f} ms")
    kernels.use_backend(kernels.available_backends()[-1])
    unrolled = time_ot_block(max(args.reps // 10, 5), "unrolled")
    print(f"{'tape':<10} {unrolled:>15.3f} ms {'—':>21}   (fully unrolled reference)")


if __name__ == "__main__":
    main()
