"""Conditional feature transformer, pair discriminator and their adversarial training.

The transformer maps a source feature concatenated with a unit-sphere noise
vector to a synthetic target feature.  The discriminator scores a concatenated
(source, target) pair in [0, 1].  Training alternates discriminator steps that
ascend the cross-entropy objective with transformer steps that descend
``mean log(1 - D(s, T(s, z)))``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import container
from .errors import DimensionError, FormatError, NonFiniteError, ValidationError
from .nn import Adam, BatchNorm, Dense, LeakyReLU, Sequential, sigmoid

log = logging.getLogger(__name__)

CLAMP = 1e-7
CHECKPOINT_FORMAT = 1
LR_SCHEDULES = ("constant", "linear")


@dataclass
class TrainConfig:
    learning_rate: float = 0.0002
    batch_size: int = 128
    epochs: int = 50
    d_z: int = 128
    leaky_alpha: float = 0.2
    real_label: float = 0.9
    rng_seed: int = 0
    d_steps_per_t_step: int = 1
    hidden: tuple = (256, 256)
    non_saturating: bool = True
    lr_schedule: str = "linear"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.validate()

    def validate(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValidationError("batch_size must be an even number >= 2 (equal real/synthetic halves)")
        if not 0.5 < self.real_label <= 1.0:
            raise ValidationError("real_label must lie in (0.5, 1]")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValidationError("epochs must be non-negative")
        if self.d_z < 1 or self.d_steps_per_t_step < 1:
            raise ValidationError("d_z and d_steps_per_t_step must be positive")
        if not 0.0 <= self.leaky_alpha < 1.0:
            raise ValidationError("leaky_alpha must lie in [0, 1)")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValidationError(f"lr_schedule must be one of {LR_SCHEDULES}")
        if len(self.hidden) != 2 or min(self.hidden) < 1:
            raise ValidationError("hidden must hold two positive widths")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def sample_noise(rng, d_z, n=None):
    """Uniform draw(s) from the unit sphere in R^d_z (normalized Gaussians)."""
    if d_z < 1:
        raise ValueError("d_z must be at least 1")
    shape = (d_z,) if n is None else (n, d_z)
    z = rng.standard_normal(shape)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    # a zero draw has probability zero; redraw rather than divide by zero
    while np.any(norm == 0.0):
        bad = (norm == 0.0).ravel() if n is not None else slice(None)
        z[bad] = rng.standard_normal(z[bad].shape)
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / norm


def _mlp(in_dim, hidden, out_dim, alpha, rng):
    h1, h2 = hidden
    return Sequential([
        Dense(in_dim, h1, rng), BatchNorm(h1), LeakyReLU(alpha),
        Dense(h1, h2, rng), BatchNorm(h2), LeakyReLU(alpha),
        Dense(h2, out_dim, rng),
    ])


def _check_width(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != width:
        raise DimensionError(f"{what} has dimension {x.shape[-1]}, model expects {width}")
    return x


class Transformer:
    """T(s, z): [s, z] -> FC-BN-LReLU -> FC-BN-LReLU -> FC (linear output)."""

    def __init__(self, d_s, d_z, d_t, hidden=(256, 256), alpha=0.2, rng=None):
        self.d_s, self.d_z, self.d_t = d_s, d_z, d_t
        self.net = _mlp(d_s + d_z, hidden, d_t, alpha, rng)

    def _inputs(self, s, z):
        s = _check_width(s, self.d_s, "source")
        z = _check_width(z, self.d_z, "noise")
        single = s.ndim == 1 and z.ndim == 1
        s, z = np.atleast_2d(s), np.atleast_2d(z)
        if s.shape[0] != z.shape[0]:
            if s.shape[0] == 1:
                s = np.repeat(s, z.shape[0], axis=0)
            else:
                raise DimensionError(f"{s.shape[0]} sources but {z.shape[0]} noise vectors")
        return np.concatenate([s, z], axis=1), single

    def forward(self, s, z, training=True, update_stats=True):
        x, _ = self._inputs(s, z)
        return self.net.forward(x, training=training, update_stats=update_stats)

    def backward(self, grad):
        return self.net.backward(grad)

    def transform(self, s, z):
        """Inference-mode synthesis; a 1-D (s, z) gives a 1-D result."""
        x, single = self._inputs(s, z)
        out = self.net.predict(x)
        return out[0] if single else out


class Discriminator:
    """D(s, t): [s, t] -> FC-BN-LReLU -> FC-BN-LReLU -> FC -> sigmoid."""

    def __init__(self, d_s, d_t, hidden=(256, 256), alpha=0.2, rng=None):
        self.d_s, self.d_t = d_s, d_t
        self.net = _mlp(d_s + d_t, hidden, 1, alpha, rng)

    def _inputs(self, s, t):
        s = _check_width(s, self.d_s, "source")
        t = _check_width(t, self.d_t, "target")
        single = s.ndim == 1 and t.ndim == 1
        s, t = np.atleast_2d(s), np.atleast_2d(t)
        if s.shape[0] != t.shape[0]:
            if s.shape[0] == 1:
                s = np.repeat(s, t.shape[0], axis=0)
            else:
                raise DimensionError(f"{s.shape[0]} sources but {t.shape[0]} targets")
        return np.concatenate([s, t], axis=1), single

    def logits(self, s, t, training=True, update_stats=True):
        x, _ = self._inputs(s, t)
        return self.net.forward(x, training=training, update_stats=update_stats)[:, 0]

    def backward(self, grad_logits):
        """Returns the gradient with respect to the concatenated [s, t] input."""
        return self.net.backward(np.asarray(grad_logits)[:, None])

    def score(self, s, t):
        x, single = self._inputs(s, t)
        p = sigmoid(self.net.predict(x)[:, 0])
        return float(p[0]) if single else p


def transform(phi: Transformer, s, z):
    return phi.transform(s, z)


def discriminate(theta: Discriminator, s, t):
    return theta.score(s, t)


# --------------------------------------------------------------------------
# losses


def clamp_scores(p):
    return np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)


def real_term(real_scores, real_label=1.0):
    """Mean soft-label log-likelihood of real pairs; ``log D`` when the label is 1."""
    p = clamp_scores(real_scores)
    y = real_label
    per_row = y * np.log(p)
    if y < 1.0:
        per_row = per_row + (1.0 - y) * np.log1p(-p)
    return float(per_row.mean())


def fake_term(fake_scores):
    """Mean ``log(1 - D)`` over synthetic pairs."""
    return float(np.log1p(-clamp_scores(fake_scores)).mean())


def d_objective(real_scores, fake_scores, real_label=1.0):
    """Cross-entropy objective the discriminator maximizes."""
    if np.size(real_scores) == 0 or np.size(fake_scores) == 0:
        raise ValueError("both real and synthetic batches must be non-empty")
    return real_term(real_scores, real_label) + fake_term(fake_scores)


def d_loss(real_scores, fake_scores, real_label=1.0):
    """Negated objective, for minimization."""
    return -d_objective(real_scores, fake_scores, real_label)


def t_loss(fake_scores):
    """Transformer loss ``mean log(1 - D)`` on synthetic pairs (to be minimized)."""
    if np.size(fake_scores) == 0:
        raise ValueError("synthetic batch must be non-empty")
    return fake_term(fake_scores)


def t_loss_non_saturating(fake_scores):
    return float(-np.log(clamp_scores(fake_scores)).mean())


def _inside_clamp(p):
    return (p >= CLAMP) & (p <= 1.0 - CLAMP)


def d_loss_grad(real_p, fake_p, real_label):
    """Gradient of :func:`d_loss` with respect to the real and fake logits."""
    g_real = -(real_label - real_p) / real_p.size
    g_fake = fake_p / fake_p.size
    # the log argument is clamped, so saturated scores contribute no gradient
    g_real = np.where(_inside_clamp(real_p), g_real, 0.0)
    g_fake = np.where(_inside_clamp(fake_p), g_fake, 0.0)
    return g_real, g_fake


def t_loss_grad(fake_p, non_saturating=False):
    if non_saturating:
        g = -(1.0 - fake_p) / fake_p.size
    else:
        g = -fake_p / fake_p.size
    return np.where(_inside_clamp(fake_p), g, 0.0)


# --------------------------------------------------------------------------
# model + training


class CraftModel:
    def __init__(self, d_s, d_t, config: TrainConfig | None = None, rng=None):
        self.config = config or TrainConfig()
        if rng is None:
            rng = np.random.default_rng(self.config.rng_seed)
        c = self.config
        self.d_s, self.d_t, self.d_z = d_s, d_t, c.d_z
        self.transformer = Transformer(d_s, c.d_z, d_t, c.hidden, c.leaky_alpha, rng)
        self.discriminator = Discriminator(d_s, d_t, c.hidden, c.leaky_alpha, rng)


@dataclass
class StepLosses:
    d_loss: float
    t_loss: float


@dataclass
class TrainResult:
    model: CraftModel
    d_losses: list = field(default_factory=list)
    t_losses: list = field(default_factory=list)

    def history_rows(self):
        return [(i, d, t) for i, (d, t) in enumerate(zip(self.d_losses, self.t_losses))]


class Trainer:
    """Owns a model, its two optimizers and the random stream of one training session."""

    def __init__(self, model: CraftModel, source_pool, rng):
        c = model.config
        self.model = model
        self.config = c
        self.rng = rng
        self.source_pool = np.asarray(source_pool, dtype=np.float64)
        self.opt_d = Adam(c.learning_rate, c.beta1, c.beta2, c.adam_epsilon)
        self.opt_t = Adam(c.learning_rate, c.beta1, c.beta2, c.adam_epsilon)
        self.steps = 0

    def _fake(self, s, update_stats):
        z = sample_noise(self.rng, self.config.d_z, s.shape[0])
        return self.model.transformer.forward(s, z, training=True, update_stats=update_stats)

    def _pairs(self, s_real, t_real, s_fake, t_fake):
        return np.concatenate([s_real, s_fake]), np.concatenate([t_real, t_fake])

    def d_step(self, s_real, t_real, s_fake):
        """One discriminator update on a half-real, half-synthetic batch; returns the loss before it."""
        D = self.model.discriminator
        t_fake = self._fake(s_fake, update_stats=False)
        s, t = self._pairs(s_real, t_real, s_fake, t_fake)
        p = sigmoid(D.logits(s, t, training=True, update_stats=True))
        n = s_real.shape[0]
        real_p, fake_p = p[:n], p[n:]
        loss = d_loss(real_p, fake_p, self.config.real_label)
        g_real, g_fake = d_loss_grad(real_p, fake_p, self.config.real_label)
        D.backward(np.concatenate([g_real, g_fake]))
        self.opt_d.step(D.net.parameters(), D.net.gradients())
        return loss

    def t_step(self, s_real, t_real, s_fake):
        """One transformer update; the discriminator sees the same joint batch layout as in D-steps."""
        T, D = self.model.transformer, self.model.discriminator
        t_fake = self._fake(s_fake, update_stats=True)
        s, t = self._pairs(s_real, t_real, s_fake, t_fake)
        p = sigmoid(D.logits(s, t, training=True, update_stats=False))
        n = s_real.shape[0]
        fake_p = p[n:]
        ns = self.config.non_saturating
        loss = t_loss_non_saturating(fake_p) if ns else t_loss(fake_p)
        g = np.concatenate([np.zeros(n), t_loss_grad(fake_p, ns)])
        dx = D.backward(g)
        T.backward(dx[n:, self.model.d_s:])
        self.opt_t.step(T.net.parameters(), T.net.gradients())
        return loss

    def step(self, s_batch, t_batch):
        """D-step(s) then one T-step on a real minibatch of ``batch_size`` pairs."""
        b = self.config.batch_size
        if s_batch.shape[0] != b or t_batch.shape[0] != b:
            raise DimensionError(f"minibatch has {s_batch.shape[0]} rows, config expects {b}")
        half = b // 2
        s_real, t_real, s_q = s_batch[:half], t_batch[:half], s_batch[half:]
        for _ in range(self.config.d_steps_per_t_step):
            dl = self.d_step(s_real, t_real, s_q)
        # transformer-step sources are drawn afresh from the whole pool
        s_t = self.source_pool[self.rng.integers(0, self.source_pool.shape[0], size=half)]
        tl = self.t_step(s_real, t_real, s_t)
        self.steps += 1
        if not (np.isfinite(dl) and np.isfinite(tl)):
            raise NonFiniteError(f"non-finite loss at step {self.steps}: d_loss={dl}, t_loss={tl}")
        return StepLosses(dl, tl)


def train(dataset, config: TrainConfig, progress=None):
    """Train a fresh model on ``dataset`` for ``config.epochs`` epochs.

    Every epoch shuffles the pairs and visits ``N // batch_size`` minibatches.
    All randomness (initialization, shuffling, noise, resampling) comes from
    one generator seeded with ``config.rng_seed``.
    """
    n = len(dataset)
    if n < 1:
        raise ValidationError("dataset is empty")
    b = config.batch_size
    if config.epochs > 0 and n < b:
        raise ValidationError(f"dataset has {n} pairs, fewer than batch_size={b}")
    rng = np.random.default_rng(config.rng_seed)
    model = CraftModel(dataset.d_s, dataset.d_t, config, rng)
    trainer = Trainer(model, dataset.sources, rng)
    result = TrainResult(model)
    per_epoch = n // b
    for epoch in range(config.epochs):
        lr = config.learning_rate
        if config.lr_schedule == "linear":
            lr *= 1.0 - epoch / config.epochs
        trainer.opt_d.learning_rate = trainer.opt_t.learning_rate = lr
        order = rng.permutation(n)
        for i in range(per_epoch):
            rows = order[i * b : (i + 1) * b]
            losses = trainer.step(dataset.sources[rows], dataset.targets[rows])
            result.d_losses.append(losses.d_loss)
            result.t_losses.append(losses.t_loss)
        if progress is not None:
            progress(epoch, result)
        log.debug("epoch %d: d_loss %.4f t_loss %.4f", epoch, result.d_losses[-1], result.t_losses[-1])
    return result


# --------------------------------------------------------------------------
# checkpoints


def _net_arrays(prefix, net):
    arrays = {f"{prefix}.{name}": p for name, p in net.parameters()}
    for i, bn in net.batchnorms():
        arrays[f"{prefix}.{i}.running_mean"] = bn.running_mean
        arrays[f"{prefix}.{i}.running_var"] = bn.running_var
    return arrays


def _net_shapes(net):
    return {name: list(p.shape) for name, p in net.parameters()}


def save_checkpoint(model: CraftModel, path, extra=None):
    arrays = {**_net_arrays("transformer", model.transformer.net), **_net_arrays("discriminator", model.discriminator.net)}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "d_s": model.d_s,
        "d_t": model.d_t,
        "d_z": model.d_z,
        "config": model.config.to_dict(),
        "shapes": {"transformer": _net_shapes(model.transformer.net), "discriminator": _net_shapes(model.discriminator.net)},
    }
    if extra:
        meta["extra"] = extra
    container.write(path, container.Container(kind=b"CKPT", dims=(model.d_s, model.d_t, model.d_z), meta=meta, arrays=arrays))


def _restore(prefix, net, arrays):
    for name, p in net.parameters():
        key = f"{prefix}.{name}"
        if key not in arrays:
            raise FormatError(f"checkpoint lacks {key}")
        if arrays[key].shape != p.shape:
            raise FormatError(f"{key} has shape {arrays[key].shape}, expected {p.shape}")
        p[...] = arrays[key]
    for i, bn in net.batchnorms():
        for stat in ("running_mean", "running_var"):
            key = f"{prefix}.{i}.{stat}"
            if key not in arrays:
                raise FormatError(f"checkpoint lacks {key}")
            setattr(bn, stat, arrays[key].copy())


def load_checkpoint(path):
    c = container.read(path, expect_kind=b"CKPT")
    meta = c.meta
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"unsupported checkpoint format {meta.get('format')}")
    d_s, d_t, d_z = c.dims
    if (meta.get("d_s"), meta.get("d_t"), meta.get("d_z")) != (d_s, d_t, d_z):
        raise FormatError("checkpoint header dimensions disagree with its metadata")
    config = TrainConfig.from_dict(meta["config"])
    model = CraftModel(d_s, d_t, config, rng=None)
    _restore("transformer", model.transformer.net, c.arrays)
    _restore("discriminator", model.discriminator.net, c.arrays)
    return model
