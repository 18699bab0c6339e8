"""Sweep the sparsity/diversity weights and report trained mask means.

Used to pick the defaults in configs/toy.yaml: the target is a matched-prompt
mask mean in [0.05, 0.25] together with a positive mask-mean-vs-similarity
rank correlation. Run from the repo root:

    python3 scripts/sweep_lambdas.py --config configs/toy.yaml --epochs 2
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lmaczs import datagen, evaluation as ev
from lmaczs.config import load_config
from lmaczs.contrastive import ClapArch, ClapTrainConfig, train_clap
from lmaczs.dsp import MelFrontend
from lmaczs.interpreter import InterpreterTrainConfig, train_interpreter
from lmaczs.zeroshot import build_prompts


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/toy.yaml")
    parser.add_argument("--lambda1", type=float, nargs="+", default=[0.2, 0.6, 1.5])
    parser.add_argument("--lambda2", type=float, nargs="+", default=[0.0, 0.3])
    parser.add_argument("--epochs", type=int, default=2, help="interpreter epochs per grid point")
    parser.add_argument("--max-samples", type=int, default=30)
    args = parser.parse_args()

    cfg = load_config(args.config)
    frontend = MelFrontend(cfg.sample_rate, frame_len=cfg.dsp.frame_len, hop=cfg.dsp.hop, n_mels=cfg.dsp.n_mels)
    corpus = datagen.make_dataset(
        n_per_class=cfg.datagen.n_per_class, families=tuple(cfg.datagen.families),
        seed=cfg.seed, sample_rate=cfg.sample_rate, clip_seconds=cfg.clip_seconds,
    )
    arch = ClapArch(
        vocab=datagen.caption_vocabulary(), embed_dim=cfg.contrastive.embed_dim,
        text_hidden=cfg.contrastive.text_hidden, conv_channels=tuple(cfg.contrastive.conv_channels),
        n_mels=cfg.dsp.n_mels,
    )
    print("training the contrastive model once...")
    clap, _ = train_clap(
        corpus["train"], corpus["val"], arch,
        ClapTrainConfig(lr=cfg.contrastive.lr, batch_size=cfg.contrastive.batch_size,
                        epochs=cfg.contrastive.epochs, seed=cfg.seed),
        frontend,
    )
    clap.eval()
    prompts = build_prompts(clap, [datagen.CLASS_LABELS[f] for f in cfg.datagen.families])

    print(f"{'lambda1':>8} {'lambda2':>8} {'mm_matched':>11} {'mm_neg':>8} {'rho':>7} {'secs':>6}")
    for lam1 in args.lambda1:
        for lam2 in args.lambda2:
            t0 = time.time()
            tc = InterpreterTrainConfig(
                lambda1=lam1, lambda2=lam2, batch_size=cfg.interpreter.batch_size,
                lr=cfg.interpreter.lr, epochs=args.epochs, mask_domain=cfg.interpreter.mask_domain,
                seed=cfg.seed, distance=cfg.interpreter.distance,
            )
            decoder, _ = train_interpreter(
                corpus["train"], corpus["val"], clap, tc, frontend,
                decoder_width=cfg.interpreter.decoder_width,
            )
            records, rho = ev.mask_mean_vs_similarity(
                corpus["test"], clap, decoder, prompts, frontend, max_samples=args.max_samples
            )
            mms = np.array([r["mask_mean"] for r in records])
            sims = np.array([r["similarity"] for r in records])
            matched = np.array([r["prompt_label"] == r["clip_label"] for r in records])
            mm_matched = float(mms[matched].mean())
            mm_neg = float(mms[sims < 0].mean()) if (sims < 0).any() else float("nan")
            print(f"{lam1:>8.2f} {lam2:>8.2f} {mm_matched:>11.3f} {mm_neg:>8.3f} {rho:>7.3f} {time.time() - t0:>6.0f}")


if __name__ == "__main__":
    main()
