"""Single entry point driving the whole pipeline.

    lmaczs <datagen|train-clap|train-interpreter|explain|evaluate|sanity|serve>
           --config PATH [--seed N] [--out DIR]

Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numeric failure.
Every subcommand writes its resolved config next to its artifacts; reruns
with the same seed into a fresh directory are byte-identical.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import datagen as dg
from . import dsp, evaluation as ev, interpreter as itp
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, dump_config, load_config
from .contrastive import (
    ClapArch,
    ClapTrainConfig,
    clap_checkpoint,
    clap_from_checkpoint,
    train_clap,
)
from .errors import ConfigError, InvalidInputError, MissingArtifactError, NumericError
from .interpreter import (
    InterpreterTrainConfig,
    decoder_checkpoint,
    decoder_from_checkpoint,
    train_interpreter,
)
from .zeroshot import build_prompts


def _exit_codes(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except MissingArtifactError as exc:
            click.echo(f"missing artifact: {exc}", err=True)
            sys.exit(3)
        except NumericError as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(4)
        except InvalidInputError as exc:
            click.echo(f"invalid input: {exc}", err=True)
            sys.exit(2)

    return wrapper


def _common(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(), help="YAML run config")(fn)
    fn = click.option("--seed", type=int, default=None, help="override config seed")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(), default=None, help="override output directory")(fn)
    return fn


def _prepare(config_path, seed, out_dir) -> tuple[RunConfig, Path]:
    cfg = load_config(config_path, seed=seed, out_dir=out_dir)
    out = cfg.resolved_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "resolved_config.yaml")
    return cfg, out


def _frontend(cfg: RunConfig) -> dsp.MelFrontend:
    return dsp.MelFrontend(cfg.sample_rate, frame_len=cfg.dsp.frame_len, hop=cfg.dsp.hop, n_mels=cfg.dsp.n_mels)


def _corpus(cfg: RunConfig, out: Path):
    manifest = out / "corpus" / "manifest.jsonl"
    if not manifest.exists():
        raise MissingArtifactError(f"{manifest} (run `lmaczs datagen` first)")
    return dg.load_corpus(manifest, sample_rate=cfg.sample_rate)


def _clap(out: Path):
    path = out / "clap.ckpt"
    if not path.exists():
        raise MissingArtifactError(f"{path} (run `lmaczs train-clap` first)")
    return clap_from_checkpoint(load_checkpoint(path))


def _decoder(out: Path):
    path = out / "interpreter.ckpt"
    if not path.exists():
        raise MissingArtifactError(f"{path} (run `lmaczs train-interpreter` first)")
    return decoder_from_checkpoint(load_checkpoint(path))


def _labels(cfg: RunConfig) -> list[str]:
    return [dg.CLASS_LABELS[f] for f in cfg.datagen.families]


def _write_history(history: dict, out: Path, stem: str) -> None:
    with open(out / f"{stem}_loss.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        writer.writerows(zip(history["step"], history["loss"]))
    (out / f"{stem}_val.json").write_text(
        json.dumps(
            {"val_loss_init": history["val_loss_init"], "val_loss_final": history["val_loss_final"]},
            indent=2, sort_keys=True,
        )
    )


@click.group()
def main():
    """Prompt-conditioned mask explanations for zero-shot audio classifiers."""


@main.command("datagen")
@_common
@_exit_codes
def cmd_datagen(config_path, seed, out_dir):
    """Generate the synthetic captioned corpus and its manifest."""
    cfg, out = _prepare(config_path, seed, out_dir)
    splits = dg.make_dataset(
        n_per_class=cfg.datagen.n_per_class,
        families=tuple(cfg.datagen.families),
        seed=cfg.seed,
        sample_rate=cfg.sample_rate,
        clip_seconds=cfg.clip_seconds,
        split_fracs=tuple(cfg.datagen.split_fracs),
        out_dir=out / "corpus",
    )
    counts = {k: len(v) for k, v in splits.items()}
    click.echo(f"corpus written to {out / 'corpus'}: {counts}")


@main.command("train-clap")
@_common
@_exit_codes
def cmd_train_clap(config_path, seed, out_dir):
    """Train the contrastive audio-text model."""
    cfg, out = _prepare(config_path, seed, out_dir)
    splits = _corpus(cfg, out)
    frontend = _frontend(cfg)
    arch = ClapArch(
        vocab=dg.caption_vocabulary(),
        embed_dim=cfg.contrastive.embed_dim,
        text_hidden=cfg.contrastive.text_hidden,
        conv_channels=tuple(cfg.contrastive.conv_channels),
        n_mels=cfg.dsp.n_mels,
        hash_buckets=cfg.contrastive.hash_buckets,
        temperature_init=cfg.contrastive.temperature_init,
    )
    tc = ClapTrainConfig(
        lr=cfg.contrastive.lr, batch_size=cfg.contrastive.batch_size,
        epochs=cfg.contrastive.epochs, seed=cfg.seed,
    )
    model, history = train_clap(splits["train"], splits["val"], arch, tc, frontend)
    ckpt = clap_checkpoint(model, step=len(history["step"]), extra={"labels": _labels(cfg)})
    save_checkpoint(out / "clap.ckpt", ckpt)
    _write_history(history, out, "clap")
    click.echo(
        f"clap checkpoint at {out / 'clap.ckpt'} "
        f"(held-out loss {history['val_loss_init']:.3f} -> {history['val_loss_final']:.3f})"
    )


@main.command("train-interpreter")
@_common
@_exit_codes
def cmd_train_interpreter(config_path, seed, out_dir):
    """Train the mask decoder against the frozen contrastive model."""
    cfg, out = _prepare(config_path, seed, out_dir)
    splits = _corpus(cfg, out)
    clap = _clap(out)
    frontend = _frontend(cfg)
    tc = InterpreterTrainConfig(
        lambda1=cfg.interpreter.lambda1, lambda2=cfg.interpreter.lambda2,
        batch_size=cfg.interpreter.batch_size, lr=cfg.interpreter.lr,
        epochs=cfg.interpreter.epochs, mask_domain=cfg.interpreter.mask_domain,
        seed=cfg.seed, distance=cfg.interpreter.distance,
    )
    decoder, history = train_interpreter(
        splits["train"], splits["val"], clap, tc, frontend, decoder_width=cfg.interpreter.decoder_width
    )
    save_checkpoint(out / "interpreter.ckpt", decoder_checkpoint(decoder, tc, step=len(history["step"])))
    _write_history(history, out, "interpreter")
    click.echo(
        f"interpreter checkpoint at {out / 'interpreter.ckpt'} "
        f"(held-out loss {history['val_loss_init']:.3f} -> {history['val_loss_final']:.3f})"
    )


@main.command("explain")
@_common
@click.option("--clip", "clip_path", required=True, type=click.Path(), help="input WAV")
@click.option("--prompt", required=True, help="free-text prompt to explain")
@click.option("--domain", type=click.Choice(["mel", "stft"]), default="stft")
@_exit_codes
def cmd_explain(config_path, seed, out_dir, clip_path, prompt, domain):
    """Explain one clip under one prompt; exports mask, images, JSON (and WAV)."""
    cfg, out = _prepare(config_path, seed, out_dir)
    if not Path(clip_path).exists():
        raise MissingArtifactError(clip_path)
    clap = _clap(out)
    decoder = _decoder(out)
    frontend = _frontend(cfg)
    clip = dsp.read_wav(clip_path, expected_rate=cfg.sample_rate)
    clip = dsp.fix_length(clip, int(cfg.clip_seconds * cfg.sample_rate))
    exp = itp.explain(clip, prompt, domain, clap, decoder, frontend)
    slug = hashlib.sha1(f"{prompt}|{domain}".encode()).hexdigest()[:10]
    dest = itp.export_explanation(exp, out / "export" / f"{domain}_{slug}")
    click.echo(
        f"explanation in {dest} (similarity {exp.similarity_original:.3f} -> "
        f"{exp.similarity_masked:.3f}, mask mean {exp.mask_mean:.3f})"
    )


def _evaluate_condition(cfg, clap, decoder, prompts, frontend, items, condition, domain, out):
    reports = []
    lmac_means: dict[str, float] = {}
    names = list(cfg.evaluation.explainers)
    if "random" in names:  # equal-mask-mean control needs the decoder means first
        names = [n for n in names if n != "random"] + ["random"]
    for name in names:
        explainer = ev.make_explainer(
            name, decoder=decoder,
            random_mean=lmac_means if lmac_means else 0.5, random_seed=cfg.seed,
        )
        report, records = ev.evaluate_suite(
            items, explainer, clap, prompts, frontend, mask_domain=domain,
            dataset_tag=condition, max_samples=cfg.evaluation.max_samples,
        )
        if name == "lmac_zs":
            lmac_means = {r["clip_id"]: r["mask_mean"] for r in records}
        reports.append(report)
        ev.write_records_csv(records, out / f"records_{name}_{condition}_{domain}.csv")
    return reports


@main.command("evaluate")
@_common
@_exit_codes
def cmd_evaluate(config_path, seed, out_dir):
    """Metric tables for every explainer on clean and contaminated splits."""
    cfg, out = _prepare(config_path, seed, out_dir)
    splits = _corpus(cfg, out)
    clap = _clap(out)
    decoder = _decoder(out)
    frontend = _frontend(cfg)
    prompts = build_prompts(clap, _labels(cfg))
    reports_dir = out / "reports"
    reports_dir.mkdir(exist_ok=True)

    test = splits["test"]
    conditions = [("clean", test)]
    for source in cfg.evaluation.contaminations:
        conditions.append(
            (source, dg.contaminate(test, source, snr_db=cfg.evaluation.snr_db, seed=cfg.seed))
        )

    for condition, items in conditions:
        for domain in cfg.evaluation.domains:
            reports = _evaluate_condition(cfg, clap, decoder, prompts, frontend, items, condition, domain, reports_dir)
            payload = [r.to_dict() for r in reports]
            # keys stay in the published column order, so no sorting here
            (reports_dir / f"{condition}_{domain}.json").write_text(json.dumps(payload, indent=2))
            section = "In-Domain (clean)" if condition == "clean" else (
                f"Out-of-Domain ({condition} @ {cfg.evaluation.snr_db:g} dB)"
            )
            table = ev.format_table(reports, title=f"{section}, {domain}-masking")
            (reports_dir / f"{condition}_{domain}.txt").write_text(table + "\n")
            click.echo(table)
            click.echo("")
    click.echo(f"reports in {reports_dir}")


@main.command("sanity")
@_common
@_exit_codes
def cmd_sanity(config_path, seed, out_dir):
    """Mask-mean-vs-similarity scatter and the cascading randomization trace."""
    from . import viz

    cfg, out = _prepare(config_path, seed, out_dir)
    splits = _corpus(cfg, out)
    clap = _clap(out)
    decoder = _decoder(out)
    frontend = _frontend(cfg)
    prompts = build_prompts(clap, _labels(cfg))
    sanity_dir = out / "sanity"
    sanity_dir.mkdir(exist_ok=True)

    items = splits["test"][: cfg.evaluation.max_samples] if cfg.evaluation.max_samples else splits["test"]
    records, rho = ev.mask_mean_vs_similarity(items, clap, decoder, prompts, frontend)
    with open(sanity_dir / "scatter.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(records[0].keys()))
        writer.writeheader()
        writer.writerows(records)
    viz.scatter_png(
        [r["similarity"] for r in records], [r["mask_mean"] for r in records],
        "similarity", "mask mean", f"mask mean vs similarity (rho={rho:.3f})",
        sanity_dir / "scatter.png",
    )

    rand_items = items[: min(len(items), 12)]
    samples = []
    for item in rand_items:
        ctx = ev.build_context(clap, prompts, frontend, item.clip, item.clip_id, "mel")
        samples.append((item.clip, ctx.target_idx))
    traces = {}
    for method, fn in (("lmac_zs", ev.lmaczs_mask_fn(decoder)), ("gradcam_pp", ev.gradcam_pp_mask_fn)):
        traces[method] = ev.cascading_randomization(
            clap, fn, samples, prompts, frontend, max_blocks=len(clap.arch.conv_channels),
            seed=cfg.seed, method=method,
        )
    (sanity_dir / "randomization_trace.json").write_text(
        json.dumps({k: t.to_dict() for k, t in traces.items()}, indent=2, sort_keys=True)
    )
    viz.lines_png(
        {k: ([b for b, _ in t.stages], [s for _, s in t.stages]) for k, t in traces.items()},
        "blocks randomized", "mask similarity", "cascading model randomization",
        sanity_dir / "randomization.png",
    )
    click.echo(f"sanity artifacts in {sanity_dir} (scatter rho={rho:.3f})")


@main.command("serve")
@_common
@click.option("--port", type=int, default=None, help="override config port")
@_exit_codes
def cmd_serve(config_path, seed, out_dir, port):
    """Serve the interactive explorer API (and UI, when built)."""
    import uvicorn

    from .server import create_app

    cfg, out = _prepare(config_path, seed, out_dir)
    ui_dir = Path("frontend/dist")  # built explorer assets, when present
    app = create_app(cfg, out, ui_dir=ui_dir if ui_dir.exists() else None)
    uvicorn.run(app, host=cfg.server.host, port=port or cfg.server.port, log_level="info")


if __name__ == "__main__":
    main()
