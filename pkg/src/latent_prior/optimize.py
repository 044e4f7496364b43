"""Test-time optimization loop driving a renderer with the latent diffusion prior."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import kernels
from .archive import save_archive
from .backend import BackendBundle, build_mock_backend, load_real_backend
from .config import RunConfig, to_dict
from .errors import ConfigError, NonFiniteGradientError
from .imageio import image_size, load_mask, load_rgb, save_png
from .losses import JacobianMode, PriorWeights, combined_step, constant_weight
from .renderers import Renderer, init_latent_map, init_layered
from .schedule import NoiseSchedule, TimestepRange, build_linear_schedule, sample_timestep

log = logging.getLogger(__name__)

RUNLOG_FORMAT = "latent-prior-runlog/1"
RUNLOG_NAME = "runlog.jsonl"
CHECKPOINT_NAME = "checkpoint.safetensors"


class AdamW:
    """Adam with decoupled weight decay, updating parameter arrays in place."""

    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        for name in sorted(grads):
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            kernels.adamw_update(
                p, grads[name], self.m[name], self.v[name], self.step_count,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )


@dataclass
class RunLog:
    header: dict[str, Any]
    records: list[dict[str, Any]] = field(default_factory=list)
    artifacts: dict[str, str] = field(default_factory=dict)
    # final renderer state; not serialized
    renderer: Renderer | None = field(default=None, repr=False, compare=False)

    def lines(self, include_wall_time: bool = False) -> list[str]:
        out = [json.dumps(self.header, sort_keys=True)]
        for rec in self.records:
            if not include_wall_time:
                rec = {k: v for k, v in rec.items() if k != "wall_time"}
            out.append(json.dumps(rec, sort_keys=True))
        out.append(json.dumps({"type": "summary", "iterations": len(self.records), "artifacts": self.artifacts}, sort_keys=True))
        return out

    def write(self, path, include_wall_time: bool = False) -> Path:
        path = Path(path)
        path.write_text("\n".join(self.lines(include_wall_time)) + "\n")
        return path


def read_runlog(path) -> RunLog:
    rows = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    summary = rows[-1] if rows and rows[-1].get("type") == "summary" else {}
    return RunLog(
        header=rows[0],
        records=[r for r in rows if r.get("type") == "step"],
        artifacts=summary.get("artifacts", {}),
    )


def build_schedule(cfg: RunConfig) -> NoiseSchedule:
    s = cfg.schedule
    return build_linear_schedule(s.num_steps, s.beta_start, s.beta_end, s.interpolation)


def lsd_weight_fn(name: str, schedule: NoiseSchedule):
    if name == "constant":
        return constant_weight
    if name == "sigma-squared":
        return lambda t: float(schedule.sigma_t[t] ** 2)
    raise ConfigError(f"unknown LSD weighting {name!r}")


def latent_shape(cfg: RunConfig, image_hw: tuple[int, int] | None = None, downsample: int = 8):
    rd = cfg.renderer
    if rd.kind == "layered":
        h, w = image_hw
        return (rd.latent_channels, h // downsample, w // downsample)
    return (rd.latent_channels, rd.latent_height, rd.latent_width)


def build_backend(cfg: RunConfig, shape) -> BackendBundle:
    b = cfg.backend
    schedule = build_schedule(cfg)
    if b.kind == "pretrained":
        return load_real_backend(b.weights_path, b.device, b.version, schedule)
    return build_mock_backend(
        b.kind, shape, schedule,
        target_seed=b.target_seed, target_mean=b.target_mean, target_std=b.target_std,
        prior_std=b.prior_std, decoder_seed=b.decoder_seed,
    )


def load_edit_inputs(cfg: RunConfig) -> tuple[np.ndarray, np.ndarray]:
    """Read the input image and mask, checking they share a size."""
    rd = cfg.renderer
    hw_img, hw_mask = image_size(rd.image_path), image_size(rd.mask_path)
    if hw_img != hw_mask:
        raise ConfigError(f"image size {hw_img} and mask size {hw_mask} differ")
    size = rd.image_size or None
    if size is None and (hw_img[0] % 8 or hw_img[1] % 8):
        raise ConfigError(f"image size {hw_img} must be divisible by 8 when renderer.image_size = 0")
    return load_rgb(rd.image_path, size), load_mask(rd.mask_path, size)


def build_renderer(cfg: RunConfig, backend: BackendBundle, rng: np.random.Generator, inputs=None) -> Renderer:
    rd = cfg.renderer
    if rd.kind == "latent-map":
        return init_latent_map(rng, latent_shape(cfg))
    image, mask = inputs if inputs is not None else load_edit_inputs(cfg)
    return init_layered(
        rng, image, mask, backend.encoder, backend.decoder,
        base_channels=rd.base_channels, mask_weight=rd.mask_weight,
        mask_reduction=rd.mask_reduction, stop_grad_encoder=rd.stop_grad_encoder,
    )


def initial_renderer(cfg: RunConfig, backend: BackendBundle, inputs=None) -> Renderer:
    """The renderer :func:`run_optimization` would start from for this seed."""
    init_seq, _ = np.random.SeedSequence(cfg.run.seed).spawn(2)
    return build_renderer(cfg, backend, np.random.default_rng(init_seq), inputs)


def _header(cfg: RunConfig, backend: BackendBundle) -> dict[str, Any]:
    doc = to_dict(cfg)
    # the output location must not make otherwise identical runs differ
    doc["run"].pop("out_dir", None)
    return {
        "type": "header",
        "format": RUNLOG_FORMAT,
        "config": doc,
        "backend": backend.name,
        "renderer": cfg.renderer.kind,
        "stop_grad_encoder": cfg.renderer.stop_grad_encoder,
        "kernels": kernels.ACTIVE,
    }


def _require_finite(it: int, name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteGradientError(it, name)


def _save_checkpoint(path, renderer: Renderer, iteration: int) -> None:
    save_archive(path, renderer.params, {"iteration": iteration, "renderer": renderer.kind})


def run_optimization(
    cfg: RunConfig,
    backend: BackendBundle | None = None,
    *,
    renderer: Renderer | None = None,
    write_artifacts: bool = True,
    inputs=None,
) -> RunLog:
    """Run ``cfg.run.iterations`` prior-guided updates.

    Each step renders ``v``, draws ``t`` and ``eps`` from the step stream,
    evaluates the prior, adds renderer-owned losses, backpropagates into the
    renderer parameters and takes one AdamW step. Initialisation and the step
    stream are seeded from independent children of ``cfg.run.seed``.

    A prebuilt ``renderer`` (e.g. :func:`initial_renderer`) replaces the
    seeded initialisation. The returned log carries the final renderer in
    ``.renderer``. With ``write_artifacts`` the decoded images, the parameter
    checkpoint and the run log go to ``cfg.run.out_dir``.

    Raises:
        NonFiniteGradientError: NaN/Inf in the latent or any gradient.
    """
    cfg.validate(check_files=inputs is None and renderer is None)
    if inputs is None and renderer is None and cfg.renderer.kind == "layered":
        inputs = load_edit_inputs(cfg)
    if backend is None:
        hw = inputs[0].shape[1:] if inputs is not None else None
        backend = build_backend(cfg, latent_shape(cfg, hw))

    _, step_seq = np.random.SeedSequence(cfg.run.seed).spawn(2)
    if renderer is None:
        renderer = initial_renderer(cfg, backend, inputs)
    rng = np.random.default_rng(step_seq)

    schedule = backend.schedule
    trange = TimestepRange(cfg.schedule.t_min, cfg.schedule.t_max).validate(schedule.num_steps)
    p = cfg.prior
    weights = PriorWeights(p.lambda1, p.lambda2, p.lambda3, lsd_weight_fn(p.lsd_weighting, schedule))
    mode = JacobianMode(p.jacobian_mode)
    levels = list(p.fm_levels) or None
    cond = backend.condition(cfg.run.prompt)

    extras_active = any(w > 0 for w, _ in renderer.extra_losses().values())
    o = cfg.optimizer
    weight_decay = 0.0 if weights.all_zero and not extras_active else o.weight_decay
    opt = AdamW(o.lr, (o.beta1, o.beta2), o.eps, weight_decay)

    out_dir = Path(cfg.run.out_dir)
    if write_artifacts:
        out_dir.mkdir(parents=True, exist_ok=True)
    runlog = RunLog(_header(cfg, backend), renderer=renderer)
    start = time.perf_counter()
    for it in range(cfg.run.iterations):
        v = renderer.render()
        _require_finite(it, "latent", v)
        t = sample_timestep(rng, trange)
        eps = rng.standard_normal(v.shape)
        report = combined_step(
            v, t, eps, backend, weights, mode, cond, p.guidance_scale,
            levels=levels, fm_reduction=p.fm_reduction, kl_strict=p.kl_strict,
        )
        _require_finite(it, "grad_v", report.grad_v)
        extras = renderer.extra_losses()
        grads = renderer.backward(report.grad_v)
        for name in sorted(grads):
            _require_finite(it, name, grads[name])
        renderer.apply_update(grads, opt)

        rec = {
            "type": "step",
            "iteration": it,
            "t": report.t_used,
            "loss_lsd": report.loss_lsd,
            "loss_fm": report.loss_fm,
            "loss_kl": report.loss_kl,
            "loss_total": report.loss_total + sum(w * val for w, val in extras.values()),
            "grad_norm": float(np.linalg.norm(report.grad_v)),
            "wall_time": time.perf_counter() - start,
        }
        for name, (_, val) in extras.items():
            rec[f"loss_{name}"] = val
        runlog.records.append(rec)
        if write_artifacts and cfg.run.checkpoint_every and (it + 1) % cfg.run.checkpoint_every == 0:
            _save_checkpoint(out_dir / CHECKPOINT_NAME, renderer, it + 1)

    if write_artifacts:
        renderer.render()
        for name, img in renderer.images(backend.decoder).items():
            save_png(out_dir / f"{name}.png", img)
            runlog.artifacts[name] = f"{name}.png"
        _save_checkpoint(out_dir / CHECKPOINT_NAME, renderer, cfg.run.iterations)
        runlog.artifacts["checkpoint"] = CHECKPOINT_NAME
        runlog.artifacts["runlog"] = RUNLOG_NAME
        runlog.write(out_dir / RUNLOG_NAME, cfg.run.log_wall_time)
        log.info("wrote %d artifacts to %s", len(runlog.artifacts), out_dir)
    return runlog
