"""Adversarial training loop with EMA codebooks, checkpoints and a JSONL loss log."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .adversary import Discriminators, LossBundle, MultiScaleMelLoss, adv_losses, feature_matching
from .audio import HOP_PRODUCT, ExcerptDataset, segment_corpus
from .checkpoint import load_archive, save_archive
from .codec import Codec
from .errors import ConfigurationError, TrainingDivergedError
from .model import CodecConfig
from .rvq import RVQConfig

log = logging.getLogger(__name__)

ALLOWED_NQ = (2, 4, 6, 12)
MIN_EXCERPT = 1280


@dataclass
class TrainConfig:
    steps: int = 5000
    batch_size: int = 8
    excerpt_length: int = 16000
    num_excerpts: int = 0  # 0: one excerpt per excerpt_length of audio
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    seed: int = 0
    nq: int = 4
    codebook_size: int = 1024
    ema_decay: float = 0.99
    lambda_adv: float = 1.0
    lambda_feat: float = 100.0
    lambda_recon: float = 1.0
    lambda_commit: float = 0.25
    checkpoint_every: int = 1000
    probe_every: int = 50
    base_channels: int = 32
    ablate_sdbp: bool = False
    ablate_subp: bool = False
    disc_wave_channels: int = 16
    disc_stft_channels: int = 32

    def __post_init__(self):
        if self.excerpt_length <= 0 or self.excerpt_length % HOP_PRODUCT:
            raise ConfigurationError(f"excerpt_length must be a positive multiple of {HOP_PRODUCT}")
        if self.excerpt_length < MIN_EXCERPT:
            # the 2048-point mel window and the 1024-point STFT critic both reflect-pad
            raise ConfigurationError(f"excerpt_length must be >= {MIN_EXCERPT}")
        if self.nq not in ALLOWED_NQ:
            raise ConfigurationError(f"nq must be one of {ALLOWED_NQ}, got {self.nq}")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigurationError("steps must be >= 0 and batch_size >= 1")
        if min(self.lr_g, self.lr_d) < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if self.checkpoint_every < 1 or self.probe_every < 1:
            raise ConfigurationError("checkpoint_every and probe_every must be >= 1")

    @property
    def adversarial(self) -> bool:
        return self.lambda_adv > 0 or self.lambda_feat > 0

    def codec_config(self) -> CodecConfig:
        return CodecConfig(base_channels=self.base_channels, ablate_sdbp=self.ablate_sdbp,
                           ablate_subp=self.ablate_subp)

    def rvq_config(self) -> RVQConfig:
        return RVQConfig(num_stages=self.nq, codebook_size=self.codebook_size,
                         ema_decay=self.ema_decay, commitment_weight=self.lambda_commit)


PRESETS = {
    # full-scale reference run length; batch and excerpt length stay at desk values
    "fullscale": {"steps": 800_000},
    "desk": {},
    "toy": {"steps": 5000, "batch_size": 8, "excerpt_length": 3200, "base_channels": 8,
            "disc_wave_channels": 8, "disc_stft_channels": 16,
            "lr_g": 1e-3, "lr_d": 1e-4, "checkpoint_every": 1000},
}


def preset(name: str, **overrides) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return TrainConfig(**{**PRESETS[name], **overrides})


def _field_types():
    return {f.name: type(f.default) for f in dataclasses.fields(TrainConfig)}


def coerce_config_values(values: dict, where: dict | None = None) -> dict:
    types = _field_types()
    out = {}
    for key, value in values.items():
        line = f" (line {where[key]})" if where and key in where else ""
        if key not in types:
            raise ConfigurationError(f"unknown config key {key!r}{line}")
        kind = types[key]
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigurationError(f"{key} must be true/false{line}")
        elif kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigurationError(f"{key} must be an integer{line}")
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{key} must be a number{line}")
            value = float(value)
        out[key] = value
    return out


def load_config(path, base: str = "desk") -> TrainConfig:
    """Read a YAML mapping whose keys are :class:`TrainConfig` field names.

    A ``preset`` key selects the starting values. Errors carry line numbers.
    """
    text = Path(path).read_text()
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigurationError(f"{path}: {line}{getattr(exc, 'problem', exc)}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path}: line 1: top level must be a mapping")
    where = {k.value: k.start_mark.line + 1 for k, _ in node.value} if node is not None else {}
    name = raw.pop("preset", base)
    values = coerce_config_values(raw, where)
    try:
        return preset(name, **values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


@dataclass
class TrainState:
    config: TrainConfig
    codec: Codec
    discriminators: Discriminators
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    step: int = 0
    data_rng: np.random.Generator = field(default_factory=np.random.default_rng)
    torch_rng: torch.Generator = field(default_factory=torch.Generator)
    mel_loss: MultiScaleMelLoss = field(default_factory=MultiScaleMelLoss)

    def generator_parameters(self) -> dict:
        return {k: v.detach().clone() for k, v in self.codec.named_parameters()}

    def discriminator_parameters(self) -> dict:
        return {k: v.detach().clone() for k, v in self.discriminators.named_parameters()}


def init_state(config: TrainConfig) -> TrainState:
    codec = Codec(config.codec_config(), config.rvq_config(), seed=config.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(config.seed + 2)
        disc = Discriminators(config.disc_wave_channels, config.disc_stft_channels)
    betas = (config.beta1, config.beta2)
    opt_g = torch.optim.Adam(codec.parameters(), lr=config.lr_g, betas=betas)
    opt_d = torch.optim.Adam(disc.parameters(), lr=config.lr_d, betas=betas)
    torch_rng = torch.Generator().manual_seed(config.seed + 3)
    return TrainState(config, codec, disc, opt_g, opt_d, 0,
                      np.random.default_rng(config.seed + 4), torch_rng)


def sample_batch(state: TrainState, data: np.ndarray) -> torch.Tensor:
    idx = state.data_rng.integers(0, data.shape[0], state.config.batch_size)
    return torch.from_numpy(data[idx])[:, None, :]


def _check_finite(state, losses: dict, stage: str):
    values = {k: float(torch.as_tensor(v).detach()) for k, v in losses.items()}
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        snapshot = {"step": state.step, "stage": stage, **values}
        raise TrainingDivergedError(f"non-finite loss at step {state.step} ({stage}): {bad}", snapshot)


def train_step(state: TrainState, batch: torch.Tensor):
    """One discriminator update, one generator update, then the EMA codebook update.

    The discriminator is skipped when both adversarial weights are zero.
    Returns ``(state, LossBundle)``; ``state`` is updated in place.
    """
    cfg = state.config
    codec, disc = state.codec, state.discriminators
    codec.train()
    disc.train()
    if not bool(codec.quantizer.initialized):
        with torch.no_grad():
            codec.quantizer.init_from_batch(codec.encoder(batch), state.torch_rng)

    x_hat, e, codes, commitment = codec(batch)
    x_hat = x_hat[..., : batch.shape[-1]]
    bundle = LossBundle()

    if cfg.adversarial:
        state.opt_d.zero_grad(set_to_none=True)
        real = disc(batch)
        fake = disc(x_hat.detach())
        adv_d, _ = adv_losses(real.logits, fake.logits)
        _check_finite(state, {"adv_d": adv_d}, "discriminator")
        adv_d.backward()
        state.opt_d.step()
        bundle.adv_d = float(adv_d.detach())

    state.opt_g.zero_grad(set_to_none=True)
    total = cfg.lambda_commit * commitment
    terms = {"commitment": commitment}
    if cfg.adversarial:
        for p in disc.parameters():
            p.requires_grad_(False)
        with torch.no_grad():
            real = disc(batch)
        fake = disc(x_hat)
        _, adv_g = adv_losses(real.logits, fake.logits)
        feat = feature_matching(real.features, fake.features)
        total = total + cfg.lambda_adv * adv_g + cfg.lambda_feat * feat
        terms.update(adv_g=adv_g, feat_match=feat)
    if cfg.lambda_recon > 0:
        recon = state.mel_loss(batch, x_hat)
        total = total + cfg.lambda_recon * recon
        terms["recon_spectral"] = recon
    terms["total_g"] = total
    _check_finite(state, terms, "generator")
    total.backward()
    state.opt_g.step()
    if cfg.adversarial:
        for p in disc.parameters():
            p.requires_grad_(True)

    codec.quantizer.ema_update(e.detach(), codes, state.torch_rng)
    state.step += 1
    for k, v in terms.items():
        setattr(bundle, k, float(v.detach()))
    return state, bundle


@torch.no_grad()
def probe_recon(state: TrainState, batch: torch.Tensor) -> float:
    """Mel reconstruction loss on a fixed batch without touching any state."""
    codec = state.codec
    was_training = codec.training
    codec.eval()
    x_hat, _, _, _ = codec(batch)
    loss = float(state.mel_loss(batch, x_hat[..., : batch.shape[-1]]))
    codec.train(was_training)
    return loss


def save_checkpoint(state: TrainState, path):
    payload = state.codec.archive_payload()
    payload.update(
        train_config=asdict(state.config),
        discriminators=state.discriminators.state_dict(),
        opt_g=state.opt_g.state_dict(),
        opt_d=state.opt_d.state_dict(),
        step=state.step,
        data_rng=json.dumps(state.data_rng.bit_generator.state),
        torch_rng=state.torch_rng.get_state(),
    )
    return save_archive(payload, path)


def load_checkpoint(path) -> TrainState:
    payload = load_archive(path)
    if "train_config" not in payload:
        raise ConfigurationError(f"{path}: inference-only checkpoint cannot resume training")
    state = init_state(TrainConfig(**payload["train_config"]))
    state.codec = Codec.from_payload(payload)
    state.discriminators.load_state_dict(payload["discriminators"])
    betas = (state.config.beta1, state.config.beta2)
    state.opt_g = torch.optim.Adam(state.codec.parameters(), lr=state.config.lr_g, betas=betas)
    state.opt_g.load_state_dict(payload["opt_g"])
    state.opt_d.load_state_dict(payload["opt_d"])
    state.step = int(payload["step"])
    state.data_rng.bit_generator.state = json.loads(payload["data_rng"])
    state.torch_rng.set_state(payload["torch_rng"])
    return state


def load_corpus(config: TrainConfig, corpus) -> np.ndarray:
    if isinstance(corpus, ExcerptDataset):
        dataset = corpus
    else:
        dataset = segment_corpus(corpus, config.excerpt_length, config.seed,
                                 config.num_excerpts or None)
    if dataset.excerpt_length != config.excerpt_length:
        raise ConfigurationError("dataset excerpt length differs from the config")
    return dataset.as_array()


def train(config: TrainConfig, corpus, out_dir, resume=None, probe_batch=None, callback=None):
    """Run ``config.steps`` training steps and return the final checkpoint path.

    ``out_dir`` receives ``checkpoint_<step>.pt`` files, ``final.pt`` and
    ``metrics.jsonl``: one record per step with every loss term, plus
    ``probe_recon`` records every ``probe_every`` steps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_corpus(config, corpus)
    state = load_checkpoint(resume) if resume else init_state(config)
    if probe_batch is None:
        probe_batch = torch.from_numpy(data[: config.batch_size])[:, None, :]
    log_path = out_dir / "metrics.jsonl"
    with log_path.open("a") as fh:
        if state.step == 0:
            fh.write(json.dumps({"step": 0, "probe_recon": probe_recon(state, probe_batch)}) + "\n")
        while state.step < config.steps:
            state, losses = train_step(state, sample_batch(state, data))
            record = {"step": state.step, **losses.as_dict()}
            if state.step % config.probe_every == 0:
                record["probe_recon"] = probe_recon(state, probe_batch)
            fh.write(json.dumps(record) + "\n")
            if state.step % 100 == 0:
                fh.flush()
                log.info("step %d %s", state.step, losses.as_dict())
            if callback is not None:
                callback(state, losses)
            if state.step % config.checkpoint_every == 0:
                save_checkpoint(state, out_dir / f"checkpoint_{state.step:07d}.pt")
    return save_checkpoint(state, out_dir / "final.pt")


def read_log(path) -> list:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def summarize_log(records) -> dict:
    """Mean of each loss term over all per-step records."""
    keys = [k for k in LossBundle().as_dict()]
    steps = [r for r in records if "total_g" in r]
    return {k: float(np.mean([r[k] for r in steps])) if steps else float("nan") for k in keys}
