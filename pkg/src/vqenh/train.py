"""Adversarial training, the ablation grid driver, and cross-QP evaluation.

Each step runs one discriminator update followed by one generator
update on the same batch, with Adam at a constant learning rate.
Checkpoints embed the config snapshot; the loss log is reproducible
bit-for-bit under a fixed seed on one execution target.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .checkpoint import build_discriminator, load_checkpoint, save_checkpoint
from .core import AblationMask, ModelConfig, QPCode, TrainConfig, encode_qp
from .data import TrainingSample
from .discriminator import PatchDiscriminator
from .errors import ConfigError, NumericError, UnknownQPError
from .losses import (LossBundle, LossLog, adversarial_g, discriminator_loss,
                     feature_matching, generator_total, perceptual)
from .metrics import psnr
from .pipeline import (Generator, build_generator, enhance_frame,
                       enhance_sequence, enhancement_speed)

__all__ = [
    "TrainResult",
    "train",
    "evaluate_samples",
    "run_ablation_grid",
    "cross_qp_eval",
    "resolve_eval_qp",
]


@dataclass
class TrainResult:
    steps: int
    loss_log_path: Optional[str]
    checkpoints: list[str]
    final_checkpoint: Optional[str]
    last_bundle: Optional[LossBundle]


def _stack_batch(samples: Sequence[TrainingSample]):
    def stack(frames):
        return torch.from_numpy(np.stack([f.data for f in frames])[:, None, :, :])

    pre = stack([s.compressed_triplet.preceding for s in samples])
    tgt = stack([s.compressed_triplet.target for s in samples])
    suc = stack([s.compressed_triplet.succeeding for s in samples])
    raw = stack([s.raw_target_crop for s in samples])
    one_hot = torch.from_numpy(np.stack([s.qp.one_hot for s in samples]))
    return pre, tgt, suc, raw, one_hot


def _batches(n: int, batch_size: int, epoch: int, seed: int):
    order = list(range(n))
    random.Random(seed * 100003 + epoch).shuffle(order)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train(generator: Generator,
          samples: Sequence[TrainingSample],
          train_config: TrainConfig,
          out_dir=None,
          discriminator: Optional[PatchDiscriminator] = None,
          step_callback: Optional[Callable[[int, Generator], None]] = None) -> TrainResult:
    """Alternating least-squares GAN optimization.

    One discriminator update then one generator update per step. A
    non-finite loss aborts with a reference to the last good checkpoint.
    """
    if not samples:
        raise ConfigError("training requires a non-empty sample stream")
    config = generator.config
    if discriminator is None:
        discriminator = build_discriminator(config)
    conditional = config.disc_conditional
    alpha, beta = config.loss_weights

    out_dir = Path(out_dir) if out_dir is not None else None
    log_fh = None
    log = None
    checkpoints: list[str] = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "loss_log.tsv", "w", encoding="utf-8")
        log = LossLog(log_fh)

    torch.manual_seed(config.seed)
    g_params = [p for p in generator.parameters() if p.requires_grad]
    d_params = list(discriminator.parameters())
    adam = dict(lr=train_config.learning_rate,
                betas=(train_config.adam_beta1, train_config.adam_beta2),
                eps=train_config.adam_eps)
    g_opt = torch.optim.Adam(g_params, **adam)
    d_opt = torch.optim.Adam(d_params, **adam)

    def disc_input(image: torch.Tensor, compressed: torch.Tensor) -> torch.Tensor:
        return torch.cat([image, compressed], dim=1) if conditional else image

    def save(step: int) -> str:
        path = str(out_dir / f"step_{step:06d}.ckpt")
        save_checkpoint(path, generator, discriminator, meta={"step": step})
        checkpoints.append(path)
        return path

    step = 0
    epoch = 0
    bundle = None
    last_good = None
    try:
        while step < train_config.steps:
            for idx in _batches(len(samples), train_config.batch_size, epoch, config.seed):
                if step >= train_config.steps:
                    break
                batch = [samples[i] for i in idx]
                pre, tgt, suc, raw, one_hot = _stack_batch(batch)

                # discriminator phase
                with torch.no_grad():
                    fake = generator(pre, tgt, suc, one_hot, clamp=False)
                d_opt.zero_grad()
                d_loss = discriminator_loss(
                    discriminator(disc_input(raw, tgt)),
                    discriminator(disc_input(fake, tgt)),
                )
                d_loss.backward()
                if train_config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(d_params, train_config.grad_clip)
                d_opt.step()

                # generator phase
                g_opt.zero_grad()
                fake = generator(pre, tgt, suc, one_hot, clamp=False)
                l_adv = adversarial_g(discriminator(disc_input(fake, tgt)))
                l_vgg = perceptual(fake, raw, generator.backbone)
                l_fm = feature_matching(disc_input(fake, tgt), disc_input(raw, tgt),
                                        discriminator)
                g_loss = l_adv + alpha * l_vgg + beta * l_fm
                if not torch.isfinite(g_loss) or not torch.isfinite(d_loss):
                    raise NumericError(
                        f"non-finite loss at step {step + 1}; last good checkpoint: "
                        f"{last_good or 'none written yet'}"
                    )
                g_loss.backward()
                if train_config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(g_params, train_config.grad_clip)
                g_opt.step()

                step += 1
                bundle = generator_total(l_adv.item(), l_vgg.item(), l_fm.item(),
                                         alpha, beta, l_d=d_loss.item())
                if log is not None:
                    log.write(step, bundle)
                if step_callback is not None:
                    step_callback(step, generator)
                if out_dir is not None and step % train_config.checkpoint_every == 0:
                    last_good = save(step)
            epoch += 1  # dataset exhausted: reshuffle and continue
        final = None
        if out_dir is not None and train_config.steps > 0:
            final = str(out_dir / "final.ckpt")
            save_checkpoint(final, generator, discriminator,
                            meta={"step": step})
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(
        steps=step,
        loss_log_path=str(out_dir / "loss_log.tsv") if out_dir is not None else None,
        checkpoints=checkpoints,
        final_checkpoint=final if out_dir is not None and train_config.steps > 0 else None,
        last_bundle=bundle,
    )


def evaluate_samples(generator: Generator, samples: Sequence[TrainingSample]) -> dict:
    """Held-out quality proxies: perceptual loss and PSNR of enhanced
    frames, plus input PSNR for reference."""
    total_vgg = 0.0
    psnrs = []
    psnrs_in = []
    for s in samples:
        enhanced = enhance_frame(s.compressed_triplet, s.qp, generator)
        with torch.no_grad():
            total_vgg += float(perceptual(enhanced, s.raw_target_crop, generator.backbone))
        psnrs.append(psnr(enhanced, s.raw_target_crop))
        psnrs_in.append(psnr(s.compressed_triplet.target, s.raw_target_crop))
    finite = [p for p in psnrs if p != float("inf")] or [float("inf")]
    finite_in = [p for p in psnrs_in if p != float("inf")] or [float("inf")]
    return {
        "l_vgg": total_vgg / len(samples),
        "psnr": sum(finite) / len(finite),
        "psnr_input": sum(finite_in) / len(finite_in),
    }


def run_ablation_grid(base_config: ModelConfig,
                      rows: Sequence[str],
                      train_config: Optional[TrainConfig] = None,
                      samples: Optional[Sequence[TrainingSample]] = None,
                      eval_samples: Optional[Sequence[TrainingSample]] = None,
                      out_dir=None) -> list[dict]:
    """Train/evaluate each requested ablation configuration.

    Returns one report row per configuration with parameter count, the
    toy quality metric, and enhancement throughput; also writes
    ``ablation_report.tsv`` and a rendered table when ``out_dir`` is set.
    """
    report = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for row in rows:
        mask = AblationMask.table_row(row)
        config = base_config.with_mask(mask)
        generator = build_generator(config)
        if samples and train_config is not None and train_config.steps > 0:
            row_dir = out_dir / f"row_{row}" if out_dir is not None else None
            train(generator, samples, train_config, out_dir=row_dir)
        counts = generator.parameter_counts()
        probe_qp = encode_qp(config.qp_vocabulary[0], config.qp_vocabulary)
        entry = {
            "row": row,
            "parameters": counts["total"],
            "speed_fps": enhancement_speed(generator, probe_qp, size=64),
        }
        if eval_samples:
            entry.update(evaluate_samples(generator, eval_samples))
        report.append(entry)
    if out_dir is not None:
        _write_report(out_dir, report)
    return report


def _write_report(out_dir: Path, report: list[dict]) -> None:
    columns = ["row", "parameters", "speed_fps", "l_vgg", "psnr", "psnr_input"]
    used = [c for c in columns if any(c in r for r in report)] or columns[:3]

    def fmt(row, col):
        v = row.get(col, "")
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    with open(out_dir / "ablation_report.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(used) + "\n")
        for row in report:
            fh.write("\t".join(fmt(row, c) for c in used) + "\n")
    cells = [used] + [[fmt(r, c) for c in used] for r in report]
    widths = [max(len(line[i]) for line in cells) for i in range(len(used))]
    rendered = [
        "  ".join(cell.rjust(width) for cell, width in zip(line, widths))
        for line in cells
    ]
    (out_dir / "ablation_report.txt").write_text("\n".join(rendered) + "\n",
                                                 encoding="utf-8")


def resolve_eval_qp(qp: int, vocabulary: Sequence[int],
                    qp_as: Optional[int] = None) -> QPCode:
    """QP code to feed a model when evaluating at ``qp``.

    In-vocabulary QPs encode directly; a single-QP model always uses its
    sole code (the cross-training protocol); otherwise an explicit
    ``qp_as`` override is required.
    """
    vocab = tuple(vocabulary)
    if qp_as is not None:
        return encode_qp(qp_as, vocab)
    if qp in vocab:
        return encode_qp(qp, vocab)
    if len(vocab) == 1:
        return encode_qp(vocab[0], vocab)
    raise UnknownQPError(
        f"QP {qp} is outside the model vocabulary {vocab}; pass qp_as to pick "
        f"the one-hot code explicitly"
    )


def cross_qp_eval(models: dict,
                  test_sets: dict[int, Sequence[tuple]],
                  out_path=None,
                  qp_as: Optional[dict] = None) -> dict:
    """Evaluate every (model, test QP) cell.

    ``models`` maps tag -> Generator or checkpoint path; ``test_sets``
    maps QP -> iterable of (compressed frames, raw frames) pairs. The
    metric is mean enhanced PSNR. Returns tags, QPs, and the cell matrix.
    """
    loaded = {}
    for tag, model in models.items():
        if isinstance(model, Generator):
            loaded[tag] = model
        else:
            loaded[tag], _, _ = load_checkpoint(model)
    qps = sorted(test_sets)
    matrix = {}
    for tag, generator in loaded.items():
        vocab = generator.config.qp_vocabulary
        for qp in qps:
            override = (qp_as or {}).get((tag, qp))
            code = resolve_eval_qp(qp, vocab, qp_as=override)
            values = []
            for compressed, raw in test_sets[qp]:
                enhanced = enhance_sequence(list(compressed), code, generator)
                for e, r in zip(enhanced, raw):
                    value = psnr(e, r)
                    if value != float("inf"):
                        values.append(value)
            matrix[(tag, qp)] = sum(values) / len(values) if values else float("inf")
    if out_path is not None:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write("model\t" + "\t".join(f"qp{q}" for q in qps) + "\n")
            for tag in loaded:
                fh.write(tag + "\t" +
                         "\t".join(f"{matrix[(tag, q)]:.4f}" for q in qps) + "\n")
    return {"tags": list(loaded), "qps": qps, "matrix": matrix}
