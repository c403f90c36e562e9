"""Graph-convolution rating generator, per-rating critic, WGAN-GP losses and training.

Everything is plain numpy in float64 with hand-written gradients. The critic acts
on one rating at a time, so its input-gradient (needed for the gradient penalty)
is carried as a forward-mode tangent next to the primal activations; the
parameter gradient of the penalty is then an ordinary reverse pass through both
chains.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import AttackThresholds, RatingsDataset
from .itemgraph import ItemItemGraph, SampledProfileItems, sample_profile_items

log = logging.getLogger(__name__)


class NumericError(ArithmeticError):
    """A non-finite value appeared; ``stage`` names where."""

    def __init__(self, stage: str, epoch: int | None = None):
        msg = f"non-finite values at {stage}"
        if epoch is not None:
            msg += f" (epoch {epoch})"
        super().__init__(msg)
        self.stage = stage
        self.epoch = epoch


@dataclass(frozen=True)
class Architecture:
    embed: tuple[int, ...] = (128, 256, 64)
    link: tuple[int, ...] = (128, 256, 32)
    readout: int = 128
    critic: tuple[int, ...] = (1024, 512, 256)
    slope: float = 0.2


# ---------------------------------------------------------------- parameters


@dataclass
class GeneratorParams:
    arch: Architecture
    conditional: bool
    og: int
    tensors: dict[str, np.ndarray]

    @property
    def input_width(self) -> int:
        return 2 if self.conditional else 1

    def copy(self) -> "GeneratorParams":
        return GeneratorParams(self.arch, self.conditional, self.og, {k: v.copy() for k, v in self.tensors.items()})


@dataclass
class DiscriminatorParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def _xavier(rng, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _layer_shapes(prefix, widths, fan_in):
    shapes = []
    for n, w in enumerate(widths):
        shapes.append((f"{prefix}{n}", fan_in, w))
        fan_in = w
    return shapes


def generator_shapes(arch: Architecture, conditional: bool):
    din = 2 if conditional else 1
    return (
        _layer_shapes("e", arch.embed, din)
        + _layer_shapes("l", arch.link, din)
        + [("r0", arch.embed[-1], arch.readout)]
    )


def critic_shapes(arch: Architecture):
    return _layer_shapes("d", tuple(arch.critic) + (1,), 1)


def _init(shapes, rng):
    t = {}
    for name, fi, fo in shapes:
        t[name + ".W"] = _xavier(rng, fi, fo)
        t[name + ".b"] = np.zeros(fo)
    return t


def init_generator(arch: Architecture, conditional: bool, og: int, rng) -> GeneratorParams:
    return GeneratorParams(arch, conditional, og, _init(generator_shapes(arch, conditional), rng))


def init_discriminator(arch: Architecture, rng) -> DiscriminatorParams:
    return DiscriminatorParams(arch, _init(critic_shapes(arch), rng))


# ---------------------------------------------------------------- primitives


def _lrelu(a, slope):
    return np.where(a > 0, a, slope * a)


def _lrelu_grad(a, slope):
    return np.where(a > 0, 1.0, slope)


def _sigmoid(a):
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def link_normalize(L: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis."""
    shifted = L - L.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _check(stage, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericError(stage)


# ---------------------------------------------------------------- generator


@dataclass
class GeneratorTrace:
    """Intermediate tensors of one generator pass (leading axis = profile)."""

    H: np.ndarray
    L_t: np.ndarray
    L: np.ndarray
    A_hat: np.ndarray
    R_t1: np.ndarray
    R_t2: np.ndarray
    R: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    def single(self) -> "GeneratorTrace":
        return GeneratorTrace(*(getattr(self, n)[0] for n in ("H", "L_t", "L", "A_hat", "R_t1", "R_t2", "R")))


def generator_input(z: np.ndarray, cond: float | None) -> np.ndarray:
    """Stack noise (B, k) and the optional vitality scalar into (B, k, din)."""
    z = np.asarray(z, dtype=np.float64)
    if cond is None:
        return z[..., None]
    return np.stack([z, np.full_like(z, cond)], axis=-1)


def _mlp_forward(t, prefix, n_layers, x, slope, cache):
    for n in range(n_layers):
        a = x @ t[f"{prefix}{n}.W"] + t[f"{prefix}{n}.b"]
        cache[f"{prefix}{n}.in"] = x
        cache[f"{prefix}{n}.pre"] = a
        x = _lrelu(a, slope)
    return x


def _mlp_backward(t, prefix, n_layers, dy, slope, cache, grads):
    for n in reversed(range(n_layers)):
        x = cache[f"{prefix}{n}.in"]
        da = dy * _lrelu_grad(cache[f"{prefix}{n}.pre"], slope)
        grads[f"{prefix}{n}.W"] = x.reshape(-1, x.shape[-1]).T @ da.reshape(-1, da.shape[-1])
        grads[f"{prefix}{n}.b"] = da.reshape(-1, da.shape[-1]).sum(axis=0)
        dy = da @ t[f"{prefix}{n}.W"].T
    return dy


def _generator_pass(params: GeneratorParams, inp: np.ndarray) -> GeneratorTrace:
    t, arch = params.tensors, params.arch
    s = arch.slope
    cache = {}
    H = _mlp_forward(t, "e", len(arch.embed), inp, s, cache)
    _check("G_e", H)
    Lt = _mlp_forward(t, "l", len(arch.link), inp, s, cache)
    _check("G_l", Lt)
    L = Lt @ np.swapaxes(Lt, -1, -2)
    _check("link weights", L)
    A = link_normalize(L)
    M = A @ H
    R1 = M + A @ M
    a_r = R1 @ t["r0.W"] + t["r0.b"]
    R2 = _lrelu(a_r, s)
    _check("G_r", R2)
    R = R2.mean(axis=-1)
    cache.update(M=M, a_r=a_r)
    return GeneratorTrace(H, Lt, L, A, R1, R2, R, cache)


def _generator_backward(params: GeneratorParams, tr: GeneratorTrace, dR: np.ndarray) -> dict:
    t, arch = params.tensors, params.arch
    s = arch.slope
    c = tr.cache
    grads = {}
    dR2 = np.repeat(dR[..., None] / tr.R_t2.shape[-1], tr.R_t2.shape[-1], axis=-1)
    da_r = dR2 * _lrelu_grad(c["a_r"], s)
    grads["r0.W"] = np.einsum("bki,bkj->ij", tr.R_t1, da_r)
    grads["r0.b"] = da_r.sum(axis=(0, 1))
    dR1 = da_r @ t["r0.W"].T
    A, H, M = tr.A_hat, tr.H, c["M"]
    At = np.swapaxes(A, -1, -2)
    # R1 = M + A M, M = A H
    dM = dR1 + At @ dR1
    dA = dR1 @ np.swapaxes(M, -1, -2) + dM @ np.swapaxes(H, -1, -2)
    dH = At @ dM
    dL = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
    dLt = (dL + np.swapaxes(dL, -1, -2)) @ tr.L_t
    _mlp_backward(t, "e", len(arch.embed), dH, s, c, grads)
    _mlp_backward(t, "l", len(arch.link), dLt, s, c, grads)
    return grads


# ---------------------------------------------------------------- critic


def _critic_pass(dp: DiscriminatorParams, x: np.ndarray, tangent: bool = True):
    """Per-rating critic outputs ``o`` and, optionally, ``do/dx`` for flat ``x``."""
    t, arch = dp.tensors, dp.arch
    n_sig = len(arch.critic)
    x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
    cache = {"x": x}
    h = x
    tan = None
    for n in range(n_sig):
        W = t[f"d{n}.W"]
        a = h @ W + t[f"d{n}.b"]
        hn = _sigmoid(a)
        sp_ = hn * (1.0 - hn)
        if tangent:
            u = np.broadcast_to(W, a.shape) if n == 0 else tan @ W
            cache[f"u{n}"] = u
            tan = sp_ * u
            cache[f"t{n}"] = tan
        cache[f"h{n}"], cache[f"s{n}"] = hn, sp_
        h = hn
    W = t[f"d{n_sig}.W"]
    a = h @ W + t[f"d{n_sig}.b"]
    cache["a_out"] = a
    o = _lrelu(a, arch.slope)[:, 0]
    g = None
    if tangent:
        g = (_lrelu_grad(a, arch.slope) * (tan @ W))[:, 0]
    return o, g, cache


def _critic_backward(dp: DiscriminatorParams, cache, do: np.ndarray, dg: np.ndarray | None):
    """Parameter gradients and input gradient given upstream ``do`` (outputs) and ``dg`` (input-gradients)."""
    t, arch = dp.tensors, dp.arch
    n_sig = len(arch.critic)
    grads = {}
    x = cache["x"]
    slope_mask = _lrelu_grad(cache["a_out"], arch.slope)  # (N, 1)
    Wout = t[f"d{n_sig}.W"]
    h_last = cache[f"h{n_sig - 1}"]
    da_out = do[:, None] * slope_mask
    grads[f"d{n_sig}.W"] = h_last.T @ da_out
    grads[f"d{n_sig}.b"] = da_out.sum(axis=0)
    dh = da_out @ Wout.T
    da = [None] * n_sig  # extra gradient on each sigmoid pre-activation from the tangent chain

    if dg is not None and np.any(dg):
        du = dg[:, None] * slope_mask
        t_last = cache[f"t{n_sig - 1}"]
        grads[f"d{n_sig}.W"] = grads[f"d{n_sig}.W"] + t_last.T @ du
        dt = du @ Wout.T
        for n in reversed(range(n_sig)):
            s, h, u = cache[f"s{n}"], cache[f"h{n}"], cache[f"u{n}"]
            du_n = dt * s
            da[n] = dt * u * s * (1.0 - 2.0 * h)
            if n == 0:
                grads["d0.W.tan"] = du_n.sum(axis=0, keepdims=True)
            else:
                grads[f"d{n}.W.tan"] = cache[f"t{n - 1}"].T @ du_n
                dt = du_n @ t[f"d{n}.W"].T

    for n in reversed(range(n_sig)):
        s = cache[f"s{n}"]
        da_n = dh * s
        if da[n] is not None:
            da_n = da_n + da[n]
        inp = x if n == 0 else cache[f"h{n - 1}"]
        gW = inp.T @ da_n
        if f"d{n}.W.tan" in grads:
            gW = gW + grads.pop(f"d{n}.W.tan")
        grads[f"d{n}.W"] = gW
        grads[f"d{n}.b"] = da_n.sum(axis=0)
        dh = da_n @ t[f"d{n}.W"].T
    return grads, dh[:, 0]


def discriminator_forward(dp: DiscriminatorParams, r) -> tuple[float, np.ndarray]:
    """Critic score ``d`` (mean of per-rating outputs) and the per-rating outputs."""
    r = np.asarray(r, dtype=np.float64)
    _check("critic input", r)
    o, _, _ = _critic_pass(dp, r, tangent=False)
    _check("D_r", o)
    return float(o.mean()), o


def critic_input_gradient(dp: DiscriminatorParams, r) -> np.ndarray:
    """``d D(r) / d r`` for one rating vector."""
    r = np.asarray(r, dtype=np.float64)
    _, g, _ = _critic_pass(dp, r)
    return g / r.size


# ---------------------------------------------------------------- batches & losses


@dataclass
class GanBatch:
    """One or more profiles sharing the rating count ``k``.

    ``z`` and ``x`` have shape (B, k) (a 1-D vector is promoted to B = 1);
    ``c`` is the vitality condition or None.
    """

    z: np.ndarray
    x: np.ndarray
    c: float | None = None

    def __post_init__(self):
        self.z = np.atleast_2d(np.asarray(self.z, dtype=np.float64))
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        if self.z.shape != self.x.shape:
            raise ValueError(f"noise shape {self.z.shape} != real shape {self.x.shape}")

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def size(self) -> int:
        return self.z.shape[0]


def generator_forward(params: GeneratorParams, batch: GanBatch) -> GeneratorTrace:
    """Generator pass; returns the full trace (single-profile batches are squeezed)."""
    tr = _generator_pass(params, generator_input(batch.z, batch.c if params.conditional else None))
    return tr.single() if batch.size == 1 else tr


def _d_loss_and_grads(gp, dp, batch: GanBatch, eps, lam, want_grads=True):
    B, k = batch.z.shape
    fake = _generator_pass(gp, generator_input(batch.z, batch.c if gp.conditional else None)).R
    eps = np.broadcast_to(np.asarray(eps, dtype=np.float64), (B,))
    xhat = eps[:, None] * batch.x + (1.0 - eps[:, None]) * fake
    N = B * k
    x_all = np.concatenate([fake.ravel(), batch.x.ravel(), xhat.ravel()])
    o, g, cache = _critic_pass(dp, x_all)
    _check("D_r", o, g)
    d_fake = o[:N].reshape(B, k).mean(axis=1)
    d_real = o[N : 2 * N].reshape(B, k).mean(axis=1)
    gx = g[2 * N :].reshape(B, k) / k
    norm = np.sqrt((gx**2).sum(axis=1))
    loss = float(np.mean(d_fake - d_real + lam * (norm - 1.0) ** 2))
    if not math.isfinite(loss):
        raise NumericError("loss_D")
    if not want_grads:
        return loss, None
    do = np.concatenate([np.full(N, 1.0 / N), np.full(N, -1.0 / N), np.zeros(N)])
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(norm > 0, 2.0 * lam * (norm - 1.0) / B / np.where(norm > 0, norm, 1.0), 0.0)
    dg = np.concatenate([np.zeros(2 * N), (scale[:, None] * gx / k).ravel()])
    grads, _ = _critic_backward(dp, cache, do, dg)
    return loss, grads


def _g_loss_and_grads(gp, dp, batch: GanBatch, psi, want_grads=True):
    B, k = batch.z.shape
    tr = _generator_pass(gp, generator_input(batch.z, batch.c if gp.conditional else None))
    R = tr.R
    o, _, cache = _critic_pass(dp, R.ravel(), tangent=False)
    _check("D_r", o)
    d_fake = o.reshape(B, k).mean(axis=1)
    diff = R - batch.x
    loss = float(np.mean(-d_fake + psi * (diff**2).sum(axis=1) / k))
    if not math.isfinite(loss):
        raise NumericError("loss_G")
    if not want_grads:
        return loss, None
    N = B * k
    _, dx = _critic_backward(dp, cache, np.full(N, -1.0 / N), None)
    dR = dx.reshape(B, k) + psi * 2.0 * diff / (k * B)
    return loss, _generator_backward(gp, tr, dR)


def loss_discriminator(gp, dp, batch: GanBatch, eps, lam: float = 10.0) -> float:
    """Critic loss: D(G(Z)) - D(X) + lam * (||grad D(x_hat)|| - 1)^2, averaged over profiles."""
    eps_arr = np.asarray(eps, dtype=np.float64)
    if np.any(eps_arr < 0) or np.any(eps_arr > 1):
        raise ValueError("eps must lie in [0, 1]")
    return _d_loss_and_grads(gp, dp, batch, eps, lam, want_grads=False)[0]


def loss_generator(gp, dp, batch: GanBatch, psi: float = 10.0) -> float:
    """Generator loss: -D(G(Z)) + psi * ||G(Z) - X||^2 / k, averaged over profiles."""
    return _g_loss_and_grads(gp, dp, batch, psi, want_grads=False)[0]


def grad_discriminator(gp, dp, batch, eps, lam=10.0):
    return _d_loss_and_grads(gp, dp, batch, eps, lam)


def grad_generator(gp, dp, batch, psi=10.0):
    return _g_loss_and_grads(gp, dp, batch, psi)


# ---------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 2000
    learning_rate: float = 0.001
    gp_weight: float = 10.0
    rating_weight: float = 10.0
    d_steps_per_g_step: int = 5
    batch_size: int = 1
    conditional: bool = False
    seed: int = 0
    thresholds: AttackThresholds = AttackThresholds()
    adam_betas: tuple[float, float] = (0.0, 0.9)
    arch: Architecture = Architecture()

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.gp_weight < 0 or self.rating_weight < 0:
            raise ValueError("penalty weights must be >= 0")
        if self.d_steps_per_g_step < 1 or self.batch_size < 1:
            raise ValueError("d_steps_per_g_step and batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def og_schedule(epoch: int, epochs: int, og: int, ou: int) -> int:
    """Effective profile-size cap for 1-based ``epoch``: half, then 70%, then the full cap."""
    if epoch <= 0.5 * epochs:
        period = 0.5
    elif epoch <= 0.7 * epochs:
        period = 0.7
    else:
        period = 1.0
    return max(ou, int(math.floor(og * period + 1e-9)))


class Adam:
    def __init__(self, tensors: dict, lr: float, betas=(0.0, 0.9), eps: float = 1e-8):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.t = 0

    def step(self, tensors: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            if self.b1:
                m *= self.b1
                m += (1.0 - self.b1) * g
            else:
                m[...] = g
            v *= self.b2
            buf = np.square(g)
            buf *= 1.0 - self.b2
            v += buf
            np.divide(v, c2, out=buf)
            np.sqrt(buf, out=buf)
            buf += self.eps
            np.divide(m, buf, out=buf)
            buf *= self.lr / c1
            tensors[k] -= buf


@dataclass
class TrainingHistory:
    loss_d: list[float] = field(default_factory=list)
    loss_g: list[float] = field(default_factory=list)
    og_effective: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.loss_d)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss_D", "loss_G", "og_effective"])
            for e, (a, b, c) in enumerate(zip(self.loss_d, self.loss_g, self.og_effective), start=1):
                w.writerow([e, repr(a), repr(b), c])


def _sample_groups(graph, data, config, og_eff, rng, batch_size):
    """Sample profiles and group them by rating count; yields (weight, GanBatch)."""
    by_k: dict[int, list] = {}
    for _ in range(batch_size):
        s = sample_profile_items(graph, data, config.thresholds, og_eff, rng)
        by_k.setdefault(s.k, []).append(s)
    og = config.thresholds.o_g
    for k in sorted(by_k):
        group = by_k[k]
        x = np.array([data.per_item_mean[list(s.items)] for s in group])
        z = rng.standard_normal((len(group), k))
        yield len(group) / batch_size, GanBatch(z, x, k / og if config.conditional else None), group


def _accumulate(total, grads, w):
    for k, g in grads.items():
        if k in total:
            total[k] += w * g
        else:
            total[k] = w * g


def train(train_data: RatingsDataset, graph: ItemItemGraph, config: TrainingConfig, progress=None):
    """Alternate critic and generator Adam updates; returns (G params, D params, history)."""
    rng = np.random.default_rng(config.seed)
    th = config.thresholds
    gp = init_generator(config.arch, config.conditional, th.o_g, rng)
    dp = init_discriminator(config.arch, rng)
    opt_g = Adam(gp.tensors, config.learning_rate, config.adam_betas)
    opt_d = Adam(dp.tensors, config.learning_rate, config.adam_betas)
    hist = TrainingHistory()
    for epoch in range(1, config.epochs + 1):
        og_eff = og_schedule(epoch, config.epochs, th.o_g, th.o_u)
        try:
            d_losses = []
            for _ in range(config.d_steps_per_g_step):
                total, step_loss = {}, 0.0
                for w, batch, _ in _sample_groups(graph, train_data, config, og_eff, rng, config.batch_size):
                    eps = rng.uniform(0.0, 1.0, size=batch.size)
                    loss, grads = _d_loss_and_grads(gp, dp, batch, eps, config.gp_weight)
                    _accumulate(total, grads, w)
                    step_loss += w * loss
                opt_d.step(dp.tensors, total)
                d_losses.append(step_loss)
            total, g_loss = {}, 0.0
            for w, batch, _ in _sample_groups(graph, train_data, config, og_eff, rng, config.batch_size):
                loss, grads = _g_loss_and_grads(gp, dp, batch, config.rating_weight)
                _accumulate(total, grads, w)
                g_loss += w * loss
            opt_g.step(gp.tensors, total)
        except NumericError as exc:
            raise NumericError(exc.stage, epoch) from exc
        if not all(np.all(np.isfinite(v)) for v in gp.tensors.values()) or not all(
            np.all(np.isfinite(v)) for v in dp.tensors.values()
        ):
            raise NumericError("parameter update", epoch)
        hist.loss_d.append(float(np.mean(d_losses)))
        hist.loss_g.append(g_loss)
        hist.og_effective.append(og_eff)
        if progress is not None:
            progress(epoch, hist)
        if epoch % 500 == 0:
            log.info("epoch %d: loss_D=%.4f loss_G=%.4f og'=%d", epoch, hist.loss_d[-1], g_loss, og_eff)
    return gp, dp, hist


def generate_ratings(
    params: GeneratorParams, sampled: SampledProfileItems, dataset: RatingsDataset | None = None, seed=0
) -> np.ndarray:
    """Continuous ratings for the sampled items (selected then filler order), from fresh noise.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = sampled.k
    z = rng.standard_normal((1, k))
    c = k / params.og if params.conditional else None
    return _generator_pass(params, generator_input(z, c)).R[0]
