"""Velocity fields: analytic oracles and a small CFM-trained network.

Every field maps ``(t, x) -> v`` for a single point ``x`` of shape ``(d,)``
or a batch of shape ``(n, d)``. Fields that can also return the input
vector-Jacobian product ``w^T dv/dx`` advertise it via ``supports_vjp``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .schedulers import Scheduler, get_scheduler

CHECKPOINT_MAGIC = b"FMPC"
CHECKPOINT_VERSION = 1


class CapabilityError(TypeError):
    """The field cannot compute input vector-Jacobian products."""


class TrainingDivergedError(FloatingPointError):
    """CFM training produced a non-finite loss."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or inconsistent with its header."""


class VelocityField:
    """Minimal interface shared by all fields."""

    supports_vjp = False

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def velocity(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, t, x) -> np.ndarray:
        return self.velocity(t, x)

    def input_vjp(self, t, x, w) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} does not expose input gradients")


def input_vjp(field: VelocityField, t, x, w) -> np.ndarray:
    """Return ``w^T dv/dx`` at ``(t, x)``; raises `CapabilityError` if unsupported."""
    if not getattr(field, "supports_vjp", False):
        raise CapabilityError(f"{type(field).__name__} does not expose input gradients")
    return field.input_vjp(t, x, w)


class ConstantField(VelocityField):
    supports_vjp = True

    def __init__(self, c):
        self.c = np.atleast_1d(np.asarray(c, dtype=float))

    @property
    def dim(self) -> int:
        return self.c.size

    def velocity(self, t, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.c, x.shape).copy()

    def input_vjp(self, t, x, w):
        return np.zeros_like(np.asarray(w, dtype=float))


class LinearField(VelocityField):
    """``v(t, x) = A x + b``, independent of time."""

    supports_vjp = True

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.zeros(self.A.shape[0]) if b is None else np.asarray(b, dtype=float)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def velocity(self, t, x):
        return np.asarray(x, dtype=float) @ self.A.T + self.b

    def input_vjp(self, t, x, w):
        return np.asarray(w, dtype=float) @ self.A


@dataclass(frozen=True)
class GaussianFieldSpec:
    """Independent isotropic Gaussian endpoints ``N(mu0, sigma0^2 I)``, ``N(mu1, sigma1^2 I)``."""

    mu0: np.ndarray
    mu1: np.ndarray
    sigma0: float = 1.0
    sigma1: float = 1.0

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=float))
        if mu0.shape != mu1.shape:
            raise ValueError("mu0 and mu1 must have the same shape")
        if not (self.sigma0 > 0 and self.sigma1 > 0):
            raise ValueError("sigma0 and sigma1 must be positive")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "mu1", mu1)


def _gaussian_terms(spec: GaussianFieldSpec, sched: Scheduler, t: float):
    a, b, ad, bd = sched.coefficients(t)
    mean_t = a * spec.mu1 + b * spec.mu0
    var_t = a * a * spec.sigma1 ** 2 + b * b * spec.sigma0 ** 2
    k1 = a * spec.sigma1 ** 2 / var_t   # gain of E[X1 | X_t]
    k0 = b * spec.sigma0 ** 2 / var_t   # gain of E[X0 | X_t]
    return a, b, ad, bd, mean_t, k1, k0


def gaussian_posterior(spec: GaussianFieldSpec, t: float, x, sched="linear"):
    """Closed-form ``(E[X1 | X_t=x], E[X0 | X_t=x])`` by joint-Gaussian conditioning."""
    sched = get_scheduler(sched)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    x = np.asarray(x, dtype=float)
    *_, mean_t, k1, k0 = _gaussian_terms(spec, sched, t)
    dx = x - mean_t
    return spec.mu1 + k1 * dx, spec.mu0 + k0 * dx


def gaussian_velocity(spec: GaussianFieldSpec, t: float, x, sched="linear") -> np.ndarray:
    """Exact marginal velocity ``alpha' E[X1|x] + beta' E[X0|x]``."""
    sched = get_scheduler(sched)
    m1, m0 = gaussian_posterior(spec, t, x, sched)
    _, _, ad, bd = sched.coefficients(t)
    return ad * m1 + bd * m0


class GaussianVelocityField(BaseEstimator, VelocityField):
    """Exact marginal velocity between two isotropic Gaussians.

    ``fit(X)`` estimates the target mean and isotropic scale from samples;
    ``fit()`` with no data simply freezes the constructor values.

    Parameters
    ----------
    mu0, mu1 : array-like or float
        Source and target means. Scalars broadcast to ``n_features``.
    sigma0, sigma1 : float
        Isotropic standard deviations.
    n_features : int or None
        Dimension used when both means are scalars.
    scheduler : str
        Name of the affine scheduler defining the probability path.
    """

    supports_vjp = True

    def __init__(self, mu0=0.0, mu1=0.0, sigma0=1.0, sigma1=1.0,
                 n_features=None, scheduler="linear"):
        self.mu0 = mu0
        self.mu1 = mu1
        self.sigma0 = sigma0
        self.sigma1 = sigma1
        self.n_features = n_features
        self.scheduler = scheduler

    def fit(self, X=None, y=None):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        mu1 = np.atleast_1d(np.asarray(self.mu1, dtype=float))
        sigma1 = float(self.sigma1)
        if X is not None:
            X = check_array(X)
            mu1 = X.mean(axis=0)
            sigma1 = float(np.sqrt(X.var(axis=0).mean()))
        d = max(mu0.size, mu1.size, int(self.n_features or 1))
        if X is not None:
            d = X.shape[1]
        mu0 = np.broadcast_to(mu0, (d,)).copy() if mu0.size == 1 else mu0
        mu1 = np.broadcast_to(mu1, (d,)).copy() if mu1.size == 1 else mu1
        self.spec_ = GaussianFieldSpec(mu0, mu1, float(self.sigma0), sigma1)
        self.scheduler_ = get_scheduler(self.scheduler)
        self.n_features_in_ = d
        return self

    @property
    def dim(self) -> int:
        check_is_fitted(self, "spec_")
        return self.n_features_in_

    def velocity(self, t, x):
        check_is_fitted(self, "spec_")
        return gaussian_velocity(self.spec_, float(t), x, self.scheduler_)

    def jacobian_scale(self, t) -> float:
        """The Jacobian ``dv/dx`` is this scalar times the identity."""
        check_is_fitted(self, "spec_")
        _, _, ad, bd, _, k1, k0 = _gaussian_terms(self.spec_, self.scheduler_, float(t))
        return ad * k1 + bd * k0

    def input_vjp(self, t, x, w):
        return self.jacobian_scale(t) * np.asarray(w, dtype=float)

    def posterior(self, t, x):
        check_is_fitted(self, "spec_")
        return gaussian_posterior(self.spec_, float(t), x, self.scheduler_)

    def sample_target(self, n, random_state=None) -> np.ndarray:
        rng = np.random.default_rng(random_state)
        return self.spec_.mu1 + self.spec_.sigma1 * rng.standard_normal((n, self.dim))

    def sample_source(self, n, random_state=None) -> np.ndarray:
        rng = np.random.default_rng(random_state)
        return self.spec_.mu0 + self.spec_.sigma0 * rng.standard_normal((n, self.dim))


# ---------------------------------------------------------------------------
# Feedforward network trained by conditional flow matching
# ---------------------------------------------------------------------------

def _sigmoid(a):
    return 1.0 / (1.0 + np.exp(-a))


def _tanh_grad(a, h):
    return 1.0 - h * h


def _silu(a):
    return a * _sigmoid(a)


def _silu_grad(a, h):
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


def _softplus(a):
    return np.logaddexp(0.0, a)


def _softplus_grad(a, h):
    return _sigmoid(a)


ACTIVATIONS = {
    "tanh": (np.tanh, _tanh_grad),
    "silu": (_silu, _silu_grad),
    "softplus": (_softplus, _softplus_grad),
}


def _act(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass
class TrainConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    steps: int = 4000
    batch_size: int = 256
    learning_rate: float = 2e-3
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != 2 or any(h <= 0 or h > 128 for h in self.hidden):
            raise ValueError("hidden must be two widths in [1, 128]")
        if self.steps < 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("steps >= 0, batch_size > 0 and learning_rate > 0 required")
        _act(self.activation)


class _MLP:
    """Two-hidden-layer network on ``[x, t]`` with explicit reverse mode."""

    def __init__(self, params: list[np.ndarray], activation: str):
        self.params = params  # [W1, b1, W2, b2, W3, b3], W of shape (in, out)
        self.activation = activation
        self._f, self._df = _act(activation)

    @classmethod
    def init(cls, dim: int, hidden, activation: str, rng) -> "_MLP":
        sizes = [dim + 1, *hidden, dim]
        params = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = np.sqrt(1.0 / n_in) if i < len(sizes) - 2 else 0.1 * np.sqrt(1.0 / n_in)
            params.append(scale * rng.standard_normal((n_in, n_out)))
            params.append(np.zeros(n_out))
        return cls(params, activation)

    @staticmethod
    def _inputs(t, x):
        x = np.atleast_2d(x)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (x.shape[0], 1))
        return np.concatenate([x, t], axis=1)

    def forward(self, t, x, keep=False):
        W1, b1, W2, b2, W3, b3 = self.params
        z = self._inputs(t, x)
        a1 = z @ W1 + b1
        h1 = self._f(a1)
        a2 = h1 @ W2 + b2
        h2 = self._f(a2)
        out = h2 @ W3 + b3
        if keep:
            return out, (z, a1, h1, a2, h2)
        return out

    def backward(self, g_out, cache):
        """Gradients of ``sum(g_out * out)`` w.r.t. parameters and inputs."""
        W1, b1, W2, b2, W3, b3 = self.params
        z, a1, h1, a2, h2 = cache
        gW3 = h2.T @ g_out
        gb3 = g_out.sum(axis=0)
        g_a2 = (g_out @ W3.T) * self._df(a2, h2)
        gW2 = h1.T @ g_a2
        gb2 = g_a2.sum(axis=0)
        g_a1 = (g_a2 @ W2.T) * self._df(a1, h1)
        gW1 = z.T @ g_a1
        gb1 = g_a1.sum(axis=0)
        g_z = g_a1 @ W1.T
        return [gW1, gb1, gW2, gb2, gW3, gb3], g_z

    def input_vjp(self, t, x, w):
        single = np.ndim(x) == 1
        out, cache = self.forward(t, x, keep=True)
        _, g_z = self.backward(np.atleast_2d(w), cache)
        g_x = g_z[:, :-1]
        return g_x[0] if single else g_x


def cfm_loss(predict: Callable, x0, x1, t, sched: Scheduler) -> float:
    """Mean squared error to the conditional target ``alpha' X1 + beta' X0``."""
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    a = np.vectorize(sched.alpha)(t)
    b = np.vectorize(sched.beta)(t)
    ad = np.vectorize(sched.alpha_dot)(t)
    bd = np.vectorize(sched.beta_dot)(t)
    xt = a * x1 + b * x0
    target = ad * x1 + bd * x0
    pred = predict(t[:, 0], xt)
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def _path_coefficients(sched: Scheduler, t: np.ndarray):
    if sched.name == "linear":
        return t, 1.0 - t, np.ones_like(t), -np.ones_like(t)
    vec = np.vectorize
    return vec(sched.alpha)(t), vec(sched.beta)(t), vec(sched.alpha_dot)(t), vec(sched.beta_dot)(t)


def cfm_train(dataset: Callable, sched, cfg: TrainConfig, dim: int,
              callback: Callable | None = None) -> "MLPVelocityField":
    """Train a fresh network by conditional flow matching.

    Parameters
    ----------
    dataset : callable
        ``dataset(rng, n) -> (x0, x1)`` returning ``n`` endpoint pairs.
    sched : str or Scheduler
    cfg : TrainConfig
    dim : int
        Data dimension.
    callback : callable, optional
        Called as ``callback(step, loss)`` after every step.
    """
    sched = get_scheduler(sched)
    rng = np.random.default_rng(cfg.seed)
    net = _MLP.init(dim, cfg.hidden, cfg.activation, rng)
    m = [np.zeros_like(p) for p in net.params]
    s = [np.zeros_like(p) for p in net.params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    losses = []
    for step in range(cfg.steps):
        x0, x1 = dataset(rng, cfg.batch_size)
        t = rng.random(cfg.batch_size)
        a, b, ad, bd = _path_coefficients(sched, t[:, None])
        xt = a * x1 + b * x0
        target = ad * x1 + bd * x0
        out, cache = net.forward(t, xt, keep=True)
        resid = out - target
        loss = float(np.mean(np.sum(resid * resid, axis=1)))
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"non-finite CFM loss at step {step} (lr={cfg.learning_rate}, "
                f"max|out|={np.nanmax(np.abs(out)):.3e})")
        grads, _ = net.backward(2.0 * resid / cfg.batch_size, cache)
        # cosine decay to 5% of the base rate
        lr = cfg.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * step / cfg.steps)))
        for k, g in enumerate(grads):
            m[k] = beta1 * m[k] + (1 - beta1) * g
            s[k] = beta2 * s[k] + (1 - beta2) * g * g
            mh = m[k] / (1 - beta1 ** (step + 1))
            sh = s[k] / (1 - beta2 ** (step + 1))
            net.params[k] = net.params[k] - lr * mh / (np.sqrt(sh) + eps)
        losses.append(loss)
        if callback is not None:
            callback(step, loss)
    # float32 round trip so the in-memory field equals its checkpoint
    net.params = [p.astype(np.float32).astype(np.float64) for p in net.params]
    est = MLPVelocityField(hidden=cfg.hidden, activation=cfg.activation, steps=cfg.steps,
                           batch_size=cfg.batch_size, learning_rate=cfg.learning_rate,
                           scheduler=sched.name, random_state=cfg.seed)
    est._set_network(net, dim, losses)
    return est


class MLPVelocityField(BaseEstimator, VelocityField):
    """Feedforward velocity field learned by conditional flow matching.

    The source distribution is standard normal unless paired source samples
    are handed to :meth:`fit`.

    Parameters
    ----------
    hidden : tuple of two ints
        Hidden layer widths (at most 128 each).
    activation : {"tanh", "silu", "softplus"}
    steps : int
        Number of Adam steps.
    batch_size : int
    learning_rate : float
        Base learning rate; decays on a cosine schedule.
    scheduler : str
    random_state : int
        Seeds initialization, minibatch draws and time draws.
    """

    supports_vjp = True

    def __init__(self, hidden=(64, 64), activation="tanh", steps=4000, batch_size=256,
                 learning_rate=2e-3, scheduler="linear", random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.scheduler = scheduler
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(hidden=tuple(self.hidden), activation=self.activation,
                           steps=int(self.steps), batch_size=int(self.batch_size),
                           learning_rate=float(self.learning_rate),
                           seed=int(self.random_state or 0))

    def fit(self, X, y=None, X0=None):
        """Fit on target samples ``X`` (and optionally paired sources ``X0``)."""
        X = check_array(X)
        if X0 is not None:
            X0 = check_array(X0)
            if X0.shape != X.shape:
                raise ValueError("X0 must have the same shape as X")
        n, d = X.shape

        def dataset(rng, batch):
            idx = rng.integers(0, n, size=batch)
            x0 = X0[idx] if X0 is not None else rng.standard_normal((batch, d))
            return x0, X[idx]

        trained = cfm_train(dataset, self.scheduler, self._config(), d)
        self._set_network(trained.net_, d, trained.loss_curve_)
        return self

    def _set_network(self, net: _MLP, dim: int, losses):
        self.net_ = net
        self.n_features_in_ = dim
        self.loss_curve_ = list(losses)
        self.scheduler_ = get_scheduler(self.scheduler)

    @property
    def dim(self) -> int:
        check_is_fitted(self, "net_")
        return self.n_features_in_

    def velocity(self, t, x):
        check_is_fitted(self, "net_")
        single = np.ndim(x) == 1
        out = self.net_.forward(t, np.asarray(x, dtype=float))
        return out[0] if single else out

    def input_vjp(self, t, x, w):
        check_is_fitted(self, "net_")
        return self.net_.input_vjp(t, np.asarray(x, dtype=float), np.asarray(w, dtype=float))

    def loss(self, x0, x1, t) -> float:
        return cfm_loss(self.velocity, x0, x1, t, self.scheduler_)

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.net_.params))


# ---------------------------------------------------------------------------
# Checkpoints: magic, uint32 header length, JSON header, float32 LE weights
# ---------------------------------------------------------------------------

def save_checkpoint(field: MLPVelocityField, path, extra: dict | None = None) -> dict:
    check_is_fitted(field, "net_")
    params = field.net_.params
    header = {
        "format": "flowmpc-checkpoint",
        "format_version": CHECKPOINT_VERSION,
        "architecture": {
            "kind": "mlp",
            "hidden": [int(h) for h in field.hidden],
            "activation": field.activation,
            "time_input": "concat",
        },
        "scheduler": field.scheduler_.name,
        "dim": int(field.n_features_in_),
        "seed": int(field.random_state or 0),
        "shapes": [list(p.shape) for p in params],
        "n_params": int(sum(p.size for p in params)),
        "train": {"steps": int(field.steps), "batch_size": int(field.batch_size),
                  "learning_rate": float(field.learning_rate)},
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    weights = np.concatenate([p.ravel() for p in params]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(weights.tobytes())
    return header


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a flowmpc checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(n).decode("utf-8"))


def load_checkpoint(path) -> MLPVelocityField:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a flowmpc checkpoint")
    (n,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    arch = header["architecture"]
    d = int(header["dim"])
    sizes = [d + 1, *arch["hidden"], d]
    expected = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        expected += [[n_in, n_out], [n_out]]
    if header["shapes"] != expected:
        raise CheckpointError(f"layer shapes {header['shapes']} do not match architecture {expected}")
    flat = np.frombuffer(data[8 + n:], dtype="<f4")
    if flat.size != header["n_params"] or flat.size != sum(int(np.prod(s)) for s in expected):
        raise CheckpointError(f"weight block has {flat.size} values, header says {header['n_params']}")
    params, k = [], 0
    for shape in expected:
        size = int(np.prod(shape))
        params.append(flat[k:k + size].astype(np.float64).reshape(shape))
        k += size
    tr = header.get("train", {})
    est = MLPVelocityField(hidden=tuple(arch["hidden"]), activation=arch["activation"],
                           steps=tr.get("steps", 0), batch_size=tr.get("batch_size", 256),
                           learning_rate=tr.get("learning_rate", 2e-3),
                           scheduler=header["scheduler"], random_state=header["seed"])
    est._set_network(_MLP(params, arch["activation"]), d, [])
    return est
