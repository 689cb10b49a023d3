"""Mean-teacher training loop with contrast-assisted reconstruction loss.

Per step: the student dehazes a hazy crop, the teacher dehazes the same
scene at a different density, and the objective combines L1 reconstruction,
the contrastive feature loss against a set of negatives, and student/teacher
consistency.  Teacher parameters follow the student by exponential moving
average and never receive gradients.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, asdict, field, replace
from pathlib import Path

import numpy as np
import torch

from .imagecore import Image, psnr, ssim, random_crop
from .hazesynth import HazeParams, apply_scattering
from .backbone import (
    BackboneConfig,
    DehazeNet,
    FULL_PRESET,
    TOY_PRESET,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from .percep import ExtractorConfig, FeatureExtractor, default_vgg_config
from .losses import (
    CarlConfig,
    LossBreakdown,
    LossWeights,
    carl_total,
    consistency_loss,
    rec_loss,
    total_loss,
)
from .data import DatasetIndex, SceneRecord

VARIANTS = ("l1", "l1+carl", "full")

# published full-scale reference results for the three objective variants
# (PSNR dB / SSIM on the standard indoor synthetic benchmark); desk-scale
# runs are not expected to reach these
FULL_SCALE_REFERENCE = {
    "l1": {"psnr": 36.39, "ssim": 0.9886},
    "l1+carl": {"psnr": 39.56, "ssim": 0.9939},
    "full": {"psnr": 41.92, "ssim": 0.9954},
}


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 1e-6
    total_steps: int = 2000
    batch: int = 4
    crop: int = 240
    k: int = 5
    tau: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 10.0
    lambda_ema: float = 0.999
    seed: int = 0
    extractor: str = "fixed-random"  # or "pretrained-vgg19"
    backbone: str = "full"  # or "toy"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 1

    def backbone_config(self) -> BackboneConfig:
        if self.backbone == "full":
            return FULL_PRESET
        if self.backbone == "toy":
            return TOY_PRESET
        raise ValueError(f"unknown backbone preset: {self.backbone}")

    def extractor_config(self) -> ExtractorConfig:
        if self.extractor == "pretrained-vgg19":
            return default_vgg_config()
        if self.extractor == "fixed-random":
            return ExtractorConfig(kind="fixed-random", seed=self.seed)
        raise ValueError(f"unknown extractor kind: {self.extractor}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        return TrainConfig(**json.loads(text))


def desk_config(**overrides) -> TrainConfig:
    base = TrainConfig(
        total_steps=2000, batch=4, crop=64, backbone="toy", lr0=2e-4,
        extractor="fixed-random",
    )
    return replace(base, **overrides)


@dataclass
class NegativeSet:
    images: list  # K aligned Images
    provenance: list  # label per entry

    def __post_init__(self):
        if len(self.images) != len(self.provenance):
            raise ValueError("images/provenance length mismatch")


@dataclass
class TeacherState:
    net: DehazeNet
    lambda_ema: float

    def __post_init__(self):
        if not (0.0 <= self.lambda_ema <= 1.0):
            raise ValueError(f"lambda_ema must be in [0, 1]: {self.lambda_ema}")
        for p in self.net.parameters():
            p.requires_grad_(False)


def build_negative_set(record: SceneRecord, anchor_idx: int, k: int,
                       rng: np.random.Generator) -> NegativeSet:
    """Assemble K negatives for one anchor, in priority order:
    original hazy input, other ladder densities, DCP output, and one
    airlight-jittered re-synthesis at the anchor density."""
    beta = record.betas[anchor_idx]
    candidates = [("original-hazy", record.hazy[anchor_idx])]
    for j, b in enumerate(record.betas):
        if j != anchor_idx:
            candidates.append((f"density-variant(b={b:g})", record.hazy[j]))
    if record.dcp[anchor_idx] is not None:
        candidates.append(("dcp-output", record.dcp[anchor_idx]))
    v = float(rng.uniform(0.7, 1.0))
    jittered = apply_scattering(
        record.clean, HazeParams(airlight=(v, v, v), beta=beta)
    )
    candidates.append((f"density-variant(b={beta:g},jitter)", jittered))
    if k > len(candidates):
        raise ValueError(f"k={k} exceeds {len(candidates)} available negatives")
    chosen = candidates[:k]
    return NegativeSet(images=[c[1] for c in chosen],
                       provenance=[c[0] for c in chosen])


def ema_update(teacher_params: dict, student_params: dict, lam: float) -> None:
    """theta_t <- lam * theta_t + (1 - lam) * theta_s, elementwise, in place."""
    if set(teacher_params) != set(student_params):
        raise ValueError("parameter namespace mismatch")
    with torch.no_grad():
        for name, pt in teacher_params.items():
            ps = student_params[name]
            pt.mul_(lam).add_(ps.detach(), alpha=1.0 - lam)


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float) -> float:
    """Cosine annealing from lr0 at step 0 to lr_min at total_steps."""
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} out of [0, {total_steps}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


def image_to_tensor(img: Image) -> torch.Tensor:
    return torch.from_numpy(img.data.transpose(2, 0, 1).copy())


def tensor_to_image(t: torch.Tensor) -> Image:
    arr = t.detach().cpu().clamp(0.0, 1.0).numpy()
    return Image(arr.transpose(1, 2, 0))


@dataclass
class TrainSample:
    """One aligned training record: clean target, student input, teacher
    input at a different density, and the negative set."""

    clean: Image
    anchor_hazy: Image
    partner_hazy: Image
    negatives: NegativeSet


class Trainer:
    """Holds the student, teacher, optimizer, and extractor; runs steps."""

    def __init__(self, config: TrainConfig, index: DatasetIndex):
        self.config = config
        self.index = index
        torch.manual_seed(config.seed)
        self.student = init_network(config.backbone_config(), config.seed)
        self.teacher = TeacherState(
            net=init_network(config.backbone_config(), config.seed),
            lambda_ema=config.lambda_ema,
        )
        # teacher starts as an exact copy of the student
        ema_update(
            dict(self.teacher.net.named_parameters()),
            dict(self.student.named_parameters()),
            lam=0.0,
        )
        self.extractor = FeatureExtractor(config.extractor_config())
        self.carl_cfg = CarlConfig(tau=config.tau, k=config.k)
        self.weights = LossWeights(lambda1=config.lambda1, lambda2=config.lambda2)
        self.opt = torch.optim.Adam(
            self.student.parameters(),
            lr=config.lr0,
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
        )
        self.rng = np.random.default_rng(config.seed)
        self.step_count = 0

    # -- batch assembly ---------------------------------------------------

    def sample(self) -> TrainSample:
        rng = self.rng
        record = self.index.scenes[int(rng.integers(len(self.index.scenes)))]
        n_levels = len(record.betas)
        if n_levels < 2:
            raise ValueError("need at least two density levels per scene")
        i, j = rng.choice(n_levels, size=2, replace=False)
        negatives = build_negative_set(record, int(i), self.config.k, rng)
        crop_seed = int(rng.integers(2**31))
        partners = [record.hazy[int(i)], record.hazy[int(j)]] + negatives.images
        crops = random_crop(record.clean, partners, self.config.crop, crop_seed)
        return TrainSample(
            clean=crops[0],
            anchor_hazy=crops[1],
            partner_hazy=crops[2],
            negatives=NegativeSet(images=crops[3:], provenance=negatives.provenance),
        )

    def assemble_batch(self) -> list:
        return [self.sample() for _ in range(self.config.batch)]

    # -- optimization -----------------------------------------------------

    def train_step(self, batch: list) -> LossBreakdown:
        cfg = self.config
        lr = cosine_lr(self.step_count, cfg.total_steps, cfg.lr0, cfg.lr_min)
        for group in self.opt.param_groups:
            group["lr"] = lr
        clean = torch.stack([image_to_tensor(s.clean) for s in batch])
        anchor = torch.stack([image_to_tensor(s.anchor_hazy) for s in batch])
        student_out = self.student(anchor)
        rec = rec_loss(student_out, clean)

        if cfg.lambda2 > 0:
            anchor_pyr = self.extractor.extract(student_out)
            with torch.no_grad():
                pos_pyr = self.extractor.extract(clean)
                neg_pyrs = []
                for ki in range(cfg.k):
                    negs = torch.stack(
                        [image_to_tensor(s.negatives.images[ki]) for s in batch]
                    )
                    neg_pyrs.append(self.extractor.extract(negs))
            carl = carl_total(anchor_pyr, pos_pyr, neg_pyrs, self.carl_cfg,
                              self.extractor.cfg.layer_weights)
        else:
            carl = torch.zeros((), dtype=student_out.dtype)

        if cfg.lambda1 > 0:
            partner = torch.stack([image_to_tensor(s.partner_hazy) for s in batch])
            with torch.no_grad():
                teacher_out = self.teacher.net(partner)
            cr = consistency_loss(student_out, teacher_out)
        else:
            cr = torch.zeros((), dtype=student_out.dtype)

        # raises on non-finite values before any parameter write
        total, breakdown = total_loss(rec, cr, carl, self.weights)
        self.opt.zero_grad()
        total.backward()
        self.opt.step()
        ema_update(
            dict(self.teacher.net.named_parameters()),
            dict(self.student.named_parameters()),
            self.teacher.lambda_ema,
        )
        self.step_count += 1
        self._last_lr = lr
        return breakdown

    def run(self, log_path=None) -> list:
        """Train for config.total_steps; returns (and optionally writes)
        the JSON-lines loss log."""
        records = []
        fh = open(log_path, "w") if log_path else None
        try:
            for _ in range(self.config.total_steps):
                batch = self.assemble_batch()
                breakdown = self.train_step(batch)
                if self.step_count % self.config.log_every == 0:
                    rec = breakdown.to_record(self.step_count, self._last_lr)
                    records.append(rec)
                    if fh:
                        fh.write(json.dumps(rec) + "\n")
        finally:
            if fh:
                fh.close()
        return records


# -- evaluation -----------------------------------------------------------


def dehaze_image(net: DehazeNet, hazy: Image) -> Image:
    with torch.no_grad():
        out = net.forward_clamped(image_to_tensor(hazy).unsqueeze(0))[0]
    return tensor_to_image(out)


def evaluate(net: DehazeNet, index: DatasetIndex) -> dict:
    """Full-image metrics over every (hazy, clean) pair plus the
    cross-density consistency gap (mildest vs heaviest output L1)."""
    psnrs, ssims, gaps = [], [], []
    for record in index.scenes:
        outputs = [dehaze_image(net, h) for h in record.hazy]
        for out in outputs:
            psnrs.append(psnr(out, record.clean))
            ssims.append(ssim(out, record.clean))
        if len(outputs) >= 2:
            mild, heavy = outputs[0], outputs[-1]
            gaps.append(float(np.mean(np.abs(
                mild.data.astype(np.float64) - heavy.data.astype(np.float64)
            ))))
    if not psnrs:
        raise ValueError("empty evaluation set")
    return {
        "psnr_mean": statistics.fmean(psnrs),
        "psnr_median": statistics.median(psnrs),
        "ssim_mean": statistics.fmean(ssims),
        "ssim_median": statistics.median(ssims),
        "consistency_gap": statistics.fmean(gaps) if gaps else 0.0,
        "n_pairs": len(psnrs),
    }


def baseline_report(index: DatasetIndex) -> dict:
    """Metrics of the raw hazy inputs against clean (no dehazing)."""
    psnrs, ssims, gaps = [], [], []
    for record in index.scenes:
        for h in record.hazy:
            psnrs.append(psnr(h, record.clean))
            ssims.append(ssim(h, record.clean))
        if len(record.hazy) >= 2:
            gaps.append(float(np.mean(np.abs(
                record.hazy[0].data.astype(np.float64)
                - record.hazy[-1].data.astype(np.float64)
            ))))
    return {
        "psnr_mean": statistics.fmean(psnrs),
        "psnr_median": statistics.median(psnrs),
        "ssim_mean": statistics.fmean(ssims),
        "ssim_median": statistics.median(ssims),
        "consistency_gap": statistics.fmean(gaps) if gaps else 0.0,
        "n_pairs": len(psnrs),
    }


# -- high-level drivers ---------------------------------------------------


def variant_config(config: TrainConfig, variant: str) -> TrainConfig:
    if variant == "l1":
        return replace(config, lambda1=0.0, lambda2=0.0)
    if variant == "l1+carl":
        return replace(config, lambda1=0.0)
    if variant in ("full", "l1+carl+cr"):
        return config
    raise ValueError(f"unknown variant: {variant}")


def train(config: TrainConfig, data_root, out_dir, variant: str = "full") -> dict:
    """Full training run: loss log, checkpoints, and evaluation summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = variant_config(config, variant)
    (out_dir / "config.json").write_text(cfg.to_json())
    index = DatasetIndex(data_root)
    trainer = Trainer(cfg, index)
    records = trainer.run(log_path=out_dir / "logs.jsonl")
    save_checkpoint(trainer.student, out_dir / "checkpoint" / "student",
                    step=trainer.step_count, seed=cfg.seed)
    save_checkpoint(trainer.teacher.net, out_dir / "checkpoint" / "teacher",
                    step=trainer.step_count, seed=cfg.seed)
    report = {
        "variant": variant,
        "train_eval_student": evaluate(trainer.student, index),
        "train_eval_teacher": evaluate(trainer.teacher.net, index),
        "final_loss": records[-1]["total"] if records else None,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    return {"records": records, "report": report, "trainer": trainer}


def run_ablation(config: TrainConfig, variants, seeds, data_root, eval_root,
                 out_path=None, lambda2_values=None) -> dict:
    """Train every (variant, seed) pair with shared data and emit a table:
    rows = variants, cols = PSNR / SSIM / consistency gap (medians across
    seeds).  Optionally sweeps lambda2 for the full variant."""
    for v in variants:
        if v not in VARIANTS and v != "l1+carl+cr":
            raise ValueError(f"unknown variant: {v}")
    train_index = DatasetIndex(data_root)
    eval_index = DatasetIndex(eval_root)
    rows = []
    for variant in variants:
        per_seed = []
        for seed in seeds:
            cfg = variant_config(replace(config, seed=seed), variant)
            trainer = Trainer(cfg, train_index)
            trainer.run()
            ev = evaluate(trainer.student, eval_index)
            per_seed.append({"seed": seed, **ev})
        rows.append({
            "variant": variant,
            "psnr_median": statistics.median(r["psnr_mean"] for r in per_seed),
            "ssim_median": statistics.median(r["ssim_mean"] for r in per_seed),
            "consistency_gap_median": statistics.median(
                r["consistency_gap"] for r in per_seed
            ),
            "per_seed": per_seed,
        })
    report = {
        "reference_full_scale": FULL_SCALE_REFERENCE,
        "baseline_hazy": baseline_report(eval_index),
        "seeds": list(seeds),
        "rows": rows,
    }
    if lambda2_values:
        sweep = []
        for lam2 in lambda2_values:
            cfg = replace(config, lambda2=float(lam2))
            trainer = Trainer(cfg, train_index)
            trainer.run()
            ev = evaluate(trainer.student, eval_index)
            sweep.append({"lambda2": float(lam2), **ev})
        report["lambda2_sweep"] = sweep
    if out_path:
        Path(out_path).write_text(json.dumps(report, indent=2))
    return report
