"""Self-verification suite run by ``latent-prior check``.

Each check returns a :class:`CheckResult` holding the measured quantities,
their tolerances and the wall time against the check's budget. ``quick``
covers the analytic and fast checks; ``full`` adds the optimization runs and
the optional pretrained-weights sanity run, which is skipped (not failed)
when no weights are available.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .backend import MockLinearDecoder, MockTanhDecoder, build_mock_backend, guided_noise
from .backend.pretrained import resolve_weights_path
from .config import apply_overrides, preset
from .errors import LatentPriorError
from .optimize import build_backend, initial_renderer, latent_shape, run_optimization
from .renderers import blend, mask_loss
from .schedule import build_linear_schedule, perturb

SMALL_LATENT = (4, 8, 8)


@dataclass
class Measurement:
    """One measured quantity compared against a tolerance."""

    name: str
    value: float
    tolerance: float
    passed: bool
    relation: str = "<="


@dataclass
class CheckResult:
    number: int
    title: str
    measurements: list[Measurement] = field(default_factory=list)
    runtime: float = 0.0
    budget: float | None = None
    skipped: bool = False
    note: str = ""

    @property
    def within_budget(self) -> bool:
        return self.budget is None or self.runtime < self.budget

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        return bool(self.measurements) and all(m.passed for m in self.measurements) and self.within_budget

    @property
    def status(self) -> str:
        if self.skipped:
            return "SKIP"
        return "PASS" if self.passed else "FAIL"

    def add(self, name: str, value: float, tolerance: float, relation: str = "<=") -> Measurement:
        """Record ``value relation tolerance``; relations are ``<=``, ``<``, ``==`` and ``>=``."""
        value = float(value)
        ok = {
            "<=": lambda: value <= tolerance,
            "<": lambda: value < tolerance,
            ">=": lambda: value >= tolerance,
            "==": lambda: value == tolerance,
        }[relation]()
        m = Measurement(name, value, float(tolerance), bool(ok) and math.isfinite(value), relation)
        self.measurements.append(m)
        return m


def rel_error(a, b) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both are exactly zero."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Elementwise central finite differences of a scalar function."""
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(x)
        flat[i] = keep - h
        down = fn(x)
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return out.reshape(x.shape)


def check_schedule() -> CheckResult:
    res = CheckResult(1, "schedule invariant", budget=1.0)
    s = build_linear_schedule()
    res.add("max |a^2 + s^2 - 1|", np.max(np.abs(s.alpha_t**2 + s.sigma_t**2 - 1.0)), 1e-6)
    res.add("largest step of alpha_bar", np.max(np.diff(s.alpha_bar)), 0.0, "<")
    return res


def check_kl() -> CheckResult:
    res = CheckResult(2, "KL value and gradient", budget=5.0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(SMALL_LATENT)
    x = (x - x.mean()) / x.std()
    res.add("|kl(mean 0, var 1) - 1|", abs(losses.kl_loss(x)[0] - 1.0), 1e-9)
    four = np.array([2.0, 2.0, -2.0, -2.0])
    res.add("|kl({2,2,-2,-2}) - (5 - ln 4)/2|", abs(losses.kl_loss(four)[0] - 0.5 * (5.0 - math.log(4.0))), 1e-9)

    v = rng.normal(0.3, 1.7, SMALL_LATENT)
    perm = rng.permutation(v.size)
    base = losses.kl_loss(v)[0]
    res.add("|kl(v) - kl(permuted v)|", abs(base - losses.kl_loss(v.reshape(-1)[perm].reshape(v.shape))[0]), 0.0, "==")

    _, g = losses.kl_loss(v)
    fd = central_difference(lambda y: losses.kl_loss(y)[0], v, 1e-5)
    res.add("grad rel. error vs central FD", rel_error(g, fd), 1e-6)
    return res


def check_fm_gradient() -> CheckResult:
    """Stop-gradient feature-matching gradient against finite differences.

    On a linear decoder ``F(v) - F(v + r) = -F(r)``, so the loss does not
    depend on ``v`` and the full gradient is zero up to rounding. The check
    therefore measures each branch separately, the combined gradient against
    the branch scale, and the combined gradient on a curved (tanh) decoder.
    """
    res = CheckResult(3, "FM gradient (stop-gradient)", budget=10.0)
    rng = np.random.default_rng(1)
    dec = MockLinearDecoder(seed=3, latent_channels=SMALL_LATENT[0])
    v = rng.standard_normal(SMALL_LATENT)
    r = rng.standard_normal(SMALL_LATENT)
    h = 1e-6
    mode = losses.JacobianMode.STOP_GRADIENT

    def l1_to(frozen, y):
        return sum(np.abs(a - b).sum() for a, b in zip(dec.decode_features(y), frozen)) * losses._fm_scale(
            len(frozen), y.size, "normalized"
        )

    _, g_clean, g_pert = losses.fm_branch_gradients(v, r, dec)
    frozen_pert = dec.decode_features(v + r)
    frozen_clean = dec.decode_features(v)
    res.add("clean-branch rel. error", rel_error(g_clean, central_difference(lambda y: l1_to(frozen_pert, y), v, h)), 1e-5)
    res.add("perturbed-branch rel. error", rel_error(g_pert, central_difference(lambda y: l1_to(frozen_clean, y), v + r, h)), 1e-5)

    g = losses.fm_gradient(v, r, dec, mode=mode)
    fd = central_difference(lambda y: losses.fm_loss(y, r, dec)[0], v, h)
    scale = np.linalg.norm(g_clean) + np.linalg.norm(g_pert)
    res.add("linear decoder: ||g - FD|| / branch scale", np.linalg.norm(g - fd) / scale, 1e-5)

    curved = MockTanhDecoder(dec, gain=0.7)
    g = losses.fm_gradient(v, r, curved, mode=mode)
    fd = central_difference(lambda y: losses.fm_loss(y, r, curved)[0], v, h)
    res.add("tanh decoder rel. error", rel_error(g, fd), 1e-5)
    return res


def check_mode_relation() -> CheckResult:
    res = CheckResult(4, "identity-approx vs stop-gradient relation")
    schedule = build_linear_schedule()
    backend = build_mock_backend("mock-linear", SMALL_LATENT, schedule, target_seed=2)
    weights = losses.PriorWeights(1.0, 0.0, 0.0)
    rng = np.random.default_rng(4)
    v = rng.standard_normal(SMALL_LATENT)
    cond = backend.condition("a prompt")
    for t in (20, 500, 980):
        eps = rng.standard_normal(SMALL_LATENT)
        by_mode = {
            m: losses.combined_step(v, t, eps, backend, weights, m, cond).grad_fm for m in losses.JacobianMode
        }
        z_t = perturb(v, eps, t, schedule)
        residual = guided_noise(backend.denoiser, z_t, t, cond, 7.5) - eps
        _, _, g_pert = losses.fm_branch_gradients(v, residual, backend.decoder)
        alpha_t, _ = schedule.coefficients(t)
        diff = by_mode[losses.JacobianMode.IDENTITY_APPROX] - by_mode[losses.JacobianMode.STOP_GRADIENT]
        res.add(f"t={t}: max |diff - alpha_t g_pert|", np.max(np.abs(diff - alpha_t * g_pert)), 1e-9)
    return res


def _final_latent(cfg) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    backend = build_backend(cfg, latent_shape(cfg))
    start = initial_renderer(cfg, backend).render()
    log = run_optimization(cfg, backend, write_artifacts=False)
    return start, log.renderer.render(), backend.denoiser.target


def check_lsd_convergence() -> CheckResult:
    res = CheckResult(5, "LSD converges to the point-mass target", budget=30.0)
    cfg = preset("lsd-only-baseline")
    apply_overrides(cfg, {"run.iterations": 500, "run.seed": 0, "backend.kind": "mock-pointmass"})
    start, final, target = _final_latent(cfg)
    ratio = np.linalg.norm(final - target) / np.linalg.norm(start - target)
    res.add("||v - mu*|| / initial", ratio, 0.1)
    return res


def check_kl_effect() -> CheckResult:
    res = CheckResult(6, "KL term pulls latent variance toward 1", budget=60.0)
    gaps = {}
    for lam in (0.0, 0.1):
        cfg = preset("image-synthesis")
        apply_overrides(
            cfg,
            {"run.iterations": 500, "run.seed": 0, "backend.kind": "mock-pointmass",
             "backend.target_std": 2.0, "prior.lambda2": lam},
        )
        _, final, _ = _final_latent(cfg)
        gaps[lam] = abs(final.var() - 1.0)
    res.note = f"|var - 1|: {gaps[0.0]:.6e} without KL, {gaps[0.1]:.6e} with KL"
    res.add("|var - 1| with KL minus without", gaps[0.1] - gaps[0.0], 0.0, "<")
    return res


def check_blend_mask() -> CheckResult:
    res = CheckResult(7, "blend and mask identities")
    rng = np.random.default_rng(5)
    edit, base = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    ones, zeros = np.ones((16, 16)), np.zeros((16, 16))
    res.add("max |blend(alpha=1) - edit|", np.max(np.abs(blend(edit, ones, base) - edit)), 0.0, "==")
    res.add("max |blend(alpha=0) - base|", np.max(np.abs(blend(edit, zeros, base) - base)), 0.0, "==")
    alpha = rng.random((16, 16))
    res.add("mask_loss(alpha, alpha)", mask_loss(alpha, alpha), 0.0, "==")
    res.add("|mask_loss(1, 0) - 1| (mean)", abs(mask_loss(ones, zeros, "mean") - 1.0), 0.0, "==")
    return res


def check_determinism() -> CheckResult:
    from .cli import main
    from .optimize import RUNLOG_NAME

    res = CheckResult(8, "synth runs are byte-identical", budget=30.0)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for k in range(2):
            out = Path(tmp) / f"run{k}"
            code = main([
                "synth", "--preset", "image-synthesis", "--backend", "mock-pointmass",
                "--iterations", "100", "--seed", "7", "--out", str(out), "--quiet",
            ])
            res.add(f"exit status of run {k}", code, 0, "==")
            path = out / RUNLOG_NAME
            blobs.append(path.read_bytes() if path.exists() else b"")
    res.add("runlog byte mismatch (0 = identical)", float(blobs[0] != blobs[1] or not blobs[0]), 0.0, "==")
    return res


def check_presets() -> CheckResult:
    res = CheckResult(9, "preset fidelity")
    expected = {
        "image-synthesis": {"lambda1": 3.0, "lambda2": 0.1, "lambda3": 1.0, "lr": 0.1, "iterations": 1000},
        "layered-edit": {"lambda1": 1e-5, "lambda2": 1e-7, "lambda3": 1e-6},
    }
    for name, want in expected.items():
        cfg = preset(name)
        got = {
            "lambda1": cfg.prior.lambda1, "lambda2": cfg.prior.lambda2, "lambda3": cfg.prior.lambda3,
            "lr": cfg.optimizer.lr, "iterations": cfg.run.iterations,
        }
        for key, value in want.items():
            res.add(f"{name}.{key} mismatch (expected {value:g})", float(got[key] != value), 0.0, "==")
    return res


def check_pretrained(weights_path: str | None = None) -> CheckResult:
    res = CheckResult(10, "pretrained run variance band (optional)")
    path = resolve_weights_path(weights_path)
    if path is None or not path.exists():
        res.skipped = True
        res.note = "no pretrained weights available"
        return res
    cfg = preset("image-synthesis")
    apply_overrides(cfg, {"backend.kind": "pretrained", "backend.weights_path": str(path),
                          "run.prompt": "a photo of a red apple on a wooden table", "run.seed": 0})
    try:
        log = run_optimization(cfg, write_artifacts=False)
    except LatentPriorError as exc:
        res.note = str(exc)
        res.add("completed iterations", 0, cfg.run.iterations, ">=")
        return res
    res.add("completed iterations", len(log.records), cfg.run.iterations, ">=")
    var = float(log.renderer.render().var())
    res.add("latent variance (lower bound 0.5)", var, 0.5, ">=")
    res.add("latent variance (upper bound 2.0)", var, 2.0, "<=")
    return res


CHECKS: dict[int, Callable[[], CheckResult]] = {
    1: check_schedule,
    2: check_kl,
    3: check_fm_gradient,
    4: check_mode_relation,
    5: check_lsd_convergence,
    6: check_kl_effect,
    7: check_blend_mask,
    8: check_determinism,
    9: check_presets,
    10: check_pretrained,
}
LEVELS = {"quick": (1, 2, 3, 4, 7, 8, 9), "full": tuple(range(1, 11))}


def run_check(number: int) -> CheckResult:
    start = time.perf_counter()
    res = CHECKS[number]()
    res.runtime = time.perf_counter() - start
    return res


def run_checks(level: str = "quick", report: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    """Run every check of ``level``, calling ``report`` after each one."""
    if level not in LEVELS:
        raise ValueError(f"unknown check level {level!r}; expected one of {sorted(LEVELS)}")
    results = []
    for number in LEVELS[level]:
        res = run_check(number)
        results.append(res)
        if report is not None:
            report(res)
    return results


def format_result(res: CheckResult) -> str:
    budget = f" / budget {res.budget:g}s" if res.budget is not None else ""
    lines = [f"[{res.status}] {res.number:>2}. {res.title} ({res.runtime:.2f}s{budget})"]
    if res.note:
        lines.append(f"       note: {res.note}")
    for m in res.measurements:
        flag = "ok " if m.passed else "BAD"
        lines.append(f"       {flag} {m.name}: {m.value:.3e} {m.relation} {m.tolerance:.3e}")
    if not res.within_budget:
        lines.append("       BAD runtime over budget")
    return "\n".join(lines)
