"""Forward corruption, the reward-signed denoising objective, and training.

The objective flips the sign of the per-sample denoising error according to a
binary simulator stability label: minimizing it concentrates the model on
shapes the simulator accepts.  The raw flipped objective rewards unbounded
error growth on unstable samples, so their contribution is clipped at a
multiple of the running stable-sample residual median.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .denoiser import Adam, Denoiser
from .schedule import NoiseSchedule
from .shapes import ChairFamily, ShapeParam, get_family

UNSTABLE_CLIP_FACTOR = 4.0


def forward_diffuse(x0: np.ndarray, t, schedule: NoiseSchedule, seed=None, rng=None):
    """x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps; returns (x_t, eps)."""
    if rng is None:
        rng = np.random.default_rng(seed)
    x0 = np.asarray(x0, dtype=np.float64)
    t_arr = np.asarray(t)
    if np.any(t_arr < 0) or np.any(t_arr > schedule.T):
        raise ValueError("t must lie in [0, T]")
    eps = rng.standard_normal(x0.shape)
    s = schedule.signal(t_arr)
    n = schedule.noise(t_arr)
    if x0.ndim == 2:
        s = np.asarray(s).reshape(-1, 1)
        n = np.asarray(n).reshape(-1, 1)
    return s * x0 + n * eps, eps


def _draw_batch(x0, schedule, seed):
    rng = np.random.default_rng(seed)
    batch = len(x0)
    t = rng.integers(1, schedule.T + 1, size=batch)
    x_t, eps = forward_diffuse(x0, t, schedule, rng=rng)
    return t, x_t, eps


def dsro_loss(x0: np.ndarray, labels: np.ndarray, cond: np.ndarray,
              denoiser: Denoiser, schedule: NoiseSchedule, seed: int = 0,
              unstable_clip: float | None = None) -> float:
    """Monte-Carlo value of the signed objective (labels in {0, 1}).

    The time steps and noise draws depend only on the seed and batch shape,
    so flipping every label exactly negates the value.
    """
    value, _ = dsro_loss_and_grad(
        x0, labels, cond, denoiser, schedule, seed, unstable_clip
    )
    return value


def dsro_loss_and_grad(x0, labels, cond, denoiser, schedule, seed: int = 0,
                       unstable_clip: float | None = None):
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64).ravel()
    if len(labels) != len(x0):
        raise ValueError("one label per sample")
    if len(x0) == 0:
        raise ValueError("batch must be non-empty")
    t, x_t, eps = _draw_batch(x0, schedule, seed)
    eps_hat, cache = denoiser.forward_cached(x_t, t, cond, schedule.T)
    res = eps - eps_hat
    res_sq = (res * res).sum(axis=1)
    w = schedule.weight(t)
    sign = 1.0 - 2.0 * labels

    contrib = w * sign * res_sq
    grad_scale = np.ones(len(x0))
    if unstable_clip is not None:
        over = (labels == 0) & (res_sq > unstable_clip)
        contrib = np.where(over, w[...] * sign * unstable_clip, contrib)
        grad_scale = np.where(over, 0.0, 1.0)

    value = -schedule.T * float(contrib.mean())

    # d value / d eps_hat_i = -T/B * w_i * sign_i * 2 (eps_hat - eps)_i
    factor = (-schedule.T / len(x0)) * (w * sign * grad_scale)
    grad_out = 2.0 * factor[:, None] * (eps_hat - eps)
    grads_w, grads_b = denoiser.backward(cache, grad_out)
    return value, denoiser.grads_vector(grads_w, grads_b)


def denoising_loss_and_grad(x0, cond, denoiser, schedule, rng):
    """Standard weighted eps-prediction MSE (pre-training)."""
    x0 = np.atleast_2d(x0)
    t = rng.integers(1, schedule.T + 1, size=len(x0))
    x_t, eps = forward_diffuse(x0, t, schedule, rng=rng)
    eps_hat, cache = denoiser.forward_cached(x_t, t, cond, schedule.T)
    res = eps_hat - eps
    w = schedule.weight(t)
    value = float((w * (res * res).sum(axis=1)).mean())
    grad_out = (2.0 / len(x0)) * w[:, None] * res
    grads_w, grads_b = denoiser.backward(cache, grad_out)
    return value, denoiser.grads_vector(grads_w, grads_b)


def pretrain_denoiser(denoiser: Denoiser, family: ChairFamily,
                      schedule: NoiseSchedule, steps: int = 2000,
                      batch: int = 64, lr: float = 1e-3, seed: int = 0) -> list:
    """Fit the family's data distribution by plain denoising; returns trace."""
    rng = np.random.default_rng(seed)
    opt = Adam(lr=lr)
    trace = []
    for _ in range(steps):
        x0, cond = family.sample_data(rng, batch)
        value, grads = denoising_loss_and_grad(x0, cond, denoiser, schedule, rng)
        denoiser.set_params_vector(opt.step(denoiser.params_vector(), grads))
        trace.append(value)
    return trace


def sample_shape(denoiser: Denoiser, cond: np.ndarray, schedule: NoiseSchedule,
                 seed=None, rng=None, family: str = "chair") -> ShapeParam:
    """Ancestral reverse process from pure noise; deterministic per seed."""
    if rng is None:
        rng = np.random.default_rng(seed)
    x = rng.standard_normal(denoiser.dim)
    cond = np.asarray(cond, dtype=np.float64)
    for t in range(schedule.T, 0, -1):
        eps_hat = denoiser.forward(x[None, :], np.array([t]), cond[None, :],
                                   schedule.T)[0]
        beta = schedule.betas[t - 1]
        alpha = 1.0 - beta
        ab_t = schedule.alpha_bar[t]
        mean = (x - beta / np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            ab_prev = schedule.alpha_bar[t - 1]
            var = beta * (1.0 - ab_prev) / (1.0 - ab_t)
            x = mean + np.sqrt(var) * rng.standard_normal(denoiser.dim)
        else:
            x = mean
    return ShapeParam(x0=x, family=family)


@dataclass
class DsroOptions:
    steps: int = 200
    batch: int = 8
    inner_steps: int = 4   # gradient updates per labelled batch (labels dominate cost)
    step_size: float = 2e-4
    grad_clip: float = 10.0
    eval_every: int = 25
    eval_samples: int = 64
    label_cache_size: int = 100_000
    seed: int = 0
    quant: float = 1e-3  # label cache grid (1 mm on raw parameters)


@dataclass
class DsroResult:
    denoiser: Denoiser
    trace: list = field(default_factory=list)  # (step, dsro_loss, stability_rate)
    initial_rate: float = 0.0
    final_rate: float = 0.0
    cache_hits: int = 0
    labels_computed: int = 0


class LabelCache:
    """Quantized-key memo so repeat shapes skip the simulator."""

    def __init__(self, quant: float, capacity: int):
        self.quant = quant
        self.capacity = capacity
        self.data: dict = {}
        self.hits = 0
        self.misses = 0

    def key(self, raw: np.ndarray):
        return tuple(np.round(raw / self.quant).astype(np.int64).tolist())

    def get_or_compute(self, raw: np.ndarray, compute):
        k = self.key(raw)
        if k in self.data:
            self.hits += 1
            return self.data[k]
        value = compute()
        self.misses += 1
        if len(self.data) < self.capacity:
            self.data[k] = value
        return value


def train_dsro(denoiser: Denoiser, family: ChairFamily, label_fn,
               schedule: NoiseSchedule, opts: DsroOptions | None = None) -> DsroResult:
    """Fine-tune with simulator feedback; reports the fresh-sample rate.

    label_fn maps a normalized shape vector to {0, 1}; simulator failures
    inside it must come back as 0, never as exceptions.
    """
    opts = opts or DsroOptions()
    model = denoiser.copy()
    cache = LabelCache(opts.quant, opts.label_cache_size)
    rng = np.random.default_rng(opts.seed)
    stable_res: list = []

    def labelled_sample(sample_rng):
        _, cond = family.sample_data(sample_rng, 1)
        shape = sample_shape(model, cond[0], schedule, rng=sample_rng,
                             family=family.name)
        raw = family.to_raw(shape.x0)
        label = cache.get_or_compute(raw, lambda: int(label_fn(shape.x0)))
        return shape.x0, cond[0], label

    def stability_rate(tag: int) -> float:
        eval_rng = np.random.default_rng([opts.seed, 7919, tag])
        labels = [labelled_sample(eval_rng)[2] for _ in range(opts.eval_samples)]
        return float(np.mean(labels))

    trace = []
    initial_rate = stability_rate(0)
    trace.append((0, float("nan"), initial_rate))

    if opts.steps == 0:
        return DsroResult(denoiser=model, trace=trace, initial_rate=initial_rate,
                          final_rate=initial_rate, cache_hits=cache.hits,
                          labels_computed=cache.misses)

    for step in range(1, opts.steps + 1):
        xs, conds, labels = [], [], []
        for _ in range(opts.batch):
            x0, cond, label = labelled_sample(rng)
            xs.append(x0)
            conds.append(cond)
            labels.append(label)
        xs = np.array(xs)
        conds = np.array(conds)
        labels_arr = np.array(labels, dtype=float)

        # track stable-sample residuals to set the unstable clip level
        probe_seed = int(rng.integers(0, 2**31 - 1))
        t, x_t, eps = _draw_batch(xs, schedule, probe_seed)
        eps_hat = model.forward(x_t, t, conds, schedule.T)
        res_sq = ((eps - eps_hat) ** 2).sum(axis=1)
        stable_res.extend(res_sq[labels_arr == 1].tolist())
        del stable_res[:-256]
        clip = (UNSTABLE_CLIP_FACTOR * float(np.median(stable_res))
                if stable_res else None)

        value = float("nan")
        for _ in range(max(1, opts.inner_steps)):
            inner_seed = int(rng.integers(0, 2**31 - 1))
            value, grads = dsro_loss_and_grad(
                xs, labels_arr, conds, model, schedule, seed=inner_seed,
                unstable_clip=clip,
            )
            gnorm = float(np.linalg.norm(grads))
            if gnorm > opts.grad_clip:
                grads = grads * (opts.grad_clip / gnorm)
            model.set_params_vector(model.params_vector() - opts.step_size * grads)

        if step % opts.eval_every == 0 or step == opts.steps:
            rate = stability_rate(step)
            trace.append((step, value, rate))

    final_rate = trace[-1][2]
    return DsroResult(denoiser=model, trace=trace, initial_rate=initial_rate,
                      final_rate=final_rate, cache_hits=cache.hits,
                      labels_computed=cache.misses)


def gravity_label_fn(family: ChairFamily, settle_params=None):
    """Stability feedback from a gravity-only settle of the decoded shape."""
    from ..sim import SettleParams, gravity_stability

    params = settle_params or SettleParams(dt=1.0 / 120.0, max_time=6.0, dwell=0.4)

    def label(x0: np.ndarray) -> int:
        try:
            mesh, pieces = family.decode(x0)
            return int(gravity_stability(mesh, pieces=pieces, params=params))
        except Exception:
            return 0

    return label
