"""Desk-scale flow-matching policy.

Rectified schedule: ``z_t = (1 - t) x + t noise``; ``t = 1`` is noise and
``t = 0`` is data, and the network regresses the velocity ``noise - x``.
Sampling runs the time grid from 1 down to 0. The stochastic sampler adds the
score-corrected drift of the reverse-time SDE, with the clean sample replaced
by the one-step prediction ``x_hat = z - t u``. Each step is then an isotropic
Gaussian transition whose log-density (and its parameter gradient) is what
the policy-gradient code consumes.
"""
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from otca.exceptions import NumericalError

LOG_2PI = math.log(2.0 * math.pi)


class VelocityNet:
    """Tanh MLP ``(z, t, onehot(cond)) -> u`` with hand-written backprop.

    Parameters live in one flat float64 vector; ``layers()`` returns views.
    """

    activation = "tanh"

    def __init__(self, dim=2, n_cond=1, widths=(32, 32), seed=0, params=None):
        self.dim = int(dim)
        self.n_cond = max(int(n_cond), 1)
        self.widths = tuple(int(w) for w in widths)
        sizes = [self.dim + 1 + self.n_cond, *self.widths, self.dim]
        self.shapes = [(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1)]
        self.n_params = sum(a * b + b for a, b in self.shapes)
        if params is not None:
            params = np.array(params, dtype=np.float64)
            if params.shape != (self.n_params,):
                raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
            self.params = params
        else:
            self.params = np.zeros(self.n_params)
            rng = np.random.default_rng(seed)
            for li, (W, _) in enumerate(self.layers()):
                scale = 1.0 / math.sqrt(W.shape[0])
                if li == len(self.shapes) - 1:
                    scale *= 0.1
                W[...] = rng.normal(0.0, scale, size=W.shape)

    def layers(self, params=None):
        p = self.params if params is None else params
        out, off = [], 0
        for a, b in self.shapes:
            W = p[off:off + a * b].reshape(a, b)
            off += a * b
            out.append((W, p[off:off + b]))
            off += b
        return out

    def copy(self):
        return VelocityNet(self.dim, self.n_cond, self.widths, params=self.params.copy())

    def features(self, z, t, cond):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        n = z.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
        cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,))
        onehot = np.zeros((n, self.n_cond))
        onehot[np.arange(n), cond] = 1.0
        return np.concatenate([z, t[:, None], onehot], axis=1)

    def forward(self, z, t, cond=0, params=None):
        h = self.features(z, t, cond)
        layers = self.layers(params)
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
        W, b = layers[-1]
        return h @ W + b

    def forward_cache(self, z, t, cond=0):
        h = self.features(z, t, cond)
        acts = [h]
        layers = self.layers()
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = layers[-1]
        return h @ W + b, acts

    def backward(self, acts, grad_u):
        """Flat parameter gradient of ``sum(grad_u * u)`` over the batch."""
        grad = np.empty(self.n_params)
        layers = self.layers()
        views = self.layers(grad)
        g = grad_u
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            gW, gb = views[li]
            h = acts[li]
            gW[...] = h.T @ g
            gb[...] = g.sum(axis=0)
            if li > 0:
                g = (g @ W.T) * (1.0 - h * h)
        return grad


@dataclass
class NoiseSchedule:
    """Rectified-flow schedule plus the SDE noise level ``eps_t``.

    ``noise_form="sqrt_ratio"``: ``eps_t = eta * sqrt(t / (1 - t + delta))``
    capped at ``noise_cap``; ``"constant"``: ``eps_t = eta``. A step of size
    ``h`` has Gaussian std ``eps_t * sqrt(h)``.
    """

    eta: float = 0.3
    steps: int = 16
    noise_form: str = "sqrt_ratio"
    noise_cap: float = 1.0
    delta: float = 1e-3

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.noise_form not in ("sqrt_ratio", "constant"):
            raise ValueError(f"unknown noise_form {self.noise_form!r}")

    @staticmethod
    def alpha(t):
        return 1.0 - np.asarray(t, dtype=np.float64)

    @staticmethod
    def sigma(t):
        return np.asarray(t, dtype=np.float64)

    def grid(self, steps=None):
        return np.linspace(1.0, 0.0, (steps or self.steps) + 1)

    def noise_level(self, t):
        if self.eta == 0.0:
            return 0.0
        if self.noise_form == "constant":
            return float(self.eta)
        return float(min(self.eta * math.sqrt(t / (1.0 - t + self.delta)), self.noise_cap))


@dataclass
class SampledStep:
    state_before: np.ndarray
    state_after: np.ndarray
    action_noise: np.ndarray
    mean: np.ndarray
    std: float
    log_density: float
    t: float
    dt: float
    cond: int = 0


@dataclass
class Trajectories:
    """A batch of N sampled trajectories on a shared time grid.

    ``states`` is (N, T+1, d) in sampling order (noise first). Deterministic
    steps carry ``std == 0`` and a NaN log-density.
    """

    states: np.ndarray
    timesteps: np.ndarray
    cond: np.ndarray
    stds: np.ndarray
    means: np.ndarray
    noise: np.ndarray
    log_probs: np.ndarray

    @property
    def n(self):
        return self.states.shape[0]

    @property
    def steps(self):
        return self.states.shape[1] - 1

    @property
    def stochastic(self):
        return self.stds > 0

    @property
    def final(self):
        return self.states[:, -1]

    def step(self, i, j):
        return SampledStep(
            state_before=self.states[i, j].copy(),
            state_after=self.states[i, j + 1].copy(),
            action_noise=self.noise[i, j].copy(),
            mean=self.means[i, j].copy(),
            std=float(self.stds[j]),
            log_density=float(self.log_probs[i, j]),
            t=float(self.timesteps[j]),
            dt=float(self.timesteps[j + 1] - self.timesteps[j]),
            cond=int(self.cond[i]),
        )

    def subset(self, idx):
        return Trajectories(self.states[idx], self.timesteps, self.cond[idx], self.stds,
                            self.means[idx], self.noise[idx], self.log_probs[idx])


def _batch(z_T, cond):
    z = np.atleast_2d(np.asarray(z_T, dtype=np.float64))
    cond = np.broadcast_to(np.asarray(cond, dtype=np.int64), (z.shape[0],)).copy()
    return z, cond


def _mean(net, z, t, dt, cond, eps_t):
    u = net.forward(z, t, cond)
    mean = z + dt * u
    if eps_t > 0.0:
        mean = mean + (0.5 * eps_t * eps_t * dt / t) * (z + (1.0 - t) * u)
    return mean


def _check_finite(z, where):
    if not np.all(np.isfinite(z)):
        raise NumericalError(f"non-finite state in {where}")


def ode_sample(net, schedule, z_T, cond=0, steps=None):
    """Euler integration of ``dz = u dt`` from t=1 down to t=0."""
    ts = schedule.grid(steps)
    z, cond = _batch(z_T, cond)
    n, d = z.shape
    T = len(ts) - 1
    states = np.empty((n, T + 1, d))
    states[:, 0] = z
    for j in range(T):
        z = z + (ts[j + 1] - ts[j]) * net.forward(z, ts[j], cond)
        _check_finite(z, "ode_sample")
        states[:, j + 1] = z
    return Trajectories(states, ts, cond, np.zeros(T), states[:, 1:].copy(),
                        np.zeros((n, T, d)), np.full((n, T), np.nan))


def sde_sample(net, schedule, z_T, cond, rng, steps=None):
    """Euler-Maruyama sampling of the reverse-time SDE.

    With ``eta == 0`` every step is deterministic, no random numbers are
    drawn, and the states equal :func:`ode_sample` bit for bit.
    """
    ts = schedule.grid(steps)
    z, cond = _batch(z_T, cond)
    n, d = z.shape
    T = len(ts) - 1
    states = np.empty((n, T + 1, d))
    means = np.empty((n, T, d))
    noise = np.zeros((n, T, d))
    logp = np.full((n, T), np.nan)
    stds = np.zeros(T)
    states[:, 0] = z
    for j in range(T):
        t, dt = ts[j], ts[j + 1] - ts[j]
        eps_t = schedule.noise_level(t)
        mean = _mean(net, z, t, dt, cond, eps_t)
        std = eps_t * math.sqrt(-dt)
        means[:, j] = mean
        if std > 0.0:
            xi = rng.standard_normal((n, d))
            z = mean + std * xi
            r = z - mean
            noise[:, j] = xi
            logp[:, j] = -0.5 * np.sum(r * r, axis=1) / (std * std) - 0.5 * d * (LOG_2PI + 2.0 * math.log(std))
            stds[j] = std
        else:
            z = mean
        _check_finite(z, "sde_sample")
        states[:, j + 1] = z
    return Trajectories(states, ts, cond, stds, means, noise, logp)


def _step_rows(schedule, z, a, t, dt, cond):
    eps = np.array([schedule.noise_level(float(ti)) for ti in t])
    std = eps * np.sqrt(-dt)
    if np.any(std <= 0.0):
        raise ValueError("log-density is undefined for deterministic steps (std <= 0)")
    k = 0.5 * eps * eps * dt / t
    return eps, std, k


def _rows_log_density(net, schedule, z, a, t, dt, cond, cotangent=None):
    """Gaussian log-density of rows ``a`` given ``z`` (and optionally the VJP)."""
    _, std, k = _step_rows(schedule, z, a, t, dt, cond)
    d = z.shape[1]
    if cotangent is None:
        u = net.forward(z, t, cond)
        acts = None
    else:
        u, acts = net.forward_cache(z, t, cond)
    mean = z + dt[:, None] * u
    mean = mean + k[:, None] * (z + (1.0 - t)[:, None] * u)
    r = a - mean
    var = std * std
    logp = -0.5 * np.sum(r * r, axis=1) / var - 0.5 * d * (LOG_2PI + np.log(var))
    if cotangent is None:
        return logp, None
    dmean_du = dt + k * (1.0 - t)
    gu = (cotangent * dmean_du / var)[:, None] * r
    return logp, net.backward(acts, gu)


def _flatten(traj):
    n, T = traj.n, traj.steps
    z = traj.states[:, :-1].reshape(n * T, -1)
    a = traj.states[:, 1:].reshape(n * T, -1)
    t = np.tile(traj.timesteps[:-1], n)
    dt = np.tile(np.diff(traj.timesteps), n)
    cond = np.repeat(traj.cond, T)
    return z, a, t, dt, cond


def log_density(net, schedule, traj):
    """(N, T) per-step log-densities of the recorded actions under ``net``."""
    z, a, t, dt, cond = _flatten(traj)
    logp, _ = _rows_log_density(net, schedule, z, a, t, dt, cond)
    return logp.reshape(traj.n, traj.steps)


def log_density_grad(net, schedule, traj, cotangent):
    """Log-densities and the flat gradient of ``sum(cotangent * logp)``."""
    z, a, t, dt, cond = _flatten(traj)
    logp, grad = _rows_log_density(net, schedule, z, a, t, dt, cond,
                                   np.asarray(cotangent, dtype=np.float64).ravel())
    return logp.reshape(traj.n, traj.steps), grad


def step_log_density(step, net, schedule):
    """``(logp, grad)`` of one recorded step under the current parameters."""
    if step.std <= 0:
        raise ValueError("log-density is undefined for deterministic steps (std <= 0)")
    logp, grad = _rows_log_density(
        net, schedule,
        np.atleast_2d(step.state_before), np.atleast_2d(step.state_after),
        np.array([step.t]), np.array([step.dt]), np.array([step.cond]),
        np.ones(1),
    )
    return float(logp[0]), grad


def predict_final(net, z_t, t, cond=0):
    """One-step clean prediction ``z_t - t * u(z_t, t)``."""
    z = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (z.shape[0],))
    x = z - t[:, None] * net.forward(z, t, cond)
    return x.reshape(np.shape(z_t))


# ---------------------------------------------------------------------------
# data and pretraining


@dataclass
class MixtureSpec:
    """Per-condition Gaussian mixtures: ``centers[c]`` lists the modes of label c."""

    centers: list = field(default_factory=lambda: [[[-3.0, 0.0], [3.0, 0.0]],
                                                   [[0.0, -3.0], [0.0, 3.0]]])
    std: float = 0.3

    @property
    def n_cond(self):
        return len(self.centers)

    @property
    def dim(self):
        return len(self.centers[0][0])


def sample_mixture(spec, rng, n, cond=None):
    """Draw ``n`` points; labels uniform over conditions unless ``cond`` is given."""
    if cond is None:
        labels = rng.integers(spec.n_cond, size=n)
    else:
        labels = np.broadcast_to(np.asarray(cond, dtype=np.int64), (n,)).copy()
    x = np.empty((n, spec.dim))
    for c in range(spec.n_cond):
        idx = np.flatnonzero(labels == c)
        centers = np.asarray(spec.centers[c], dtype=np.float64)
        modes = rng.integers(len(centers), size=len(idx))
        x[idx] = centers[modes] + spec.std * rng.standard_normal((len(idx), spec.dim))
    return x, labels


class Adam:
    def __init__(self, n, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        """In-place descent step on ``params``."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def flow_matching_loss(net, x, labels, rng, grad=False):
    n = x.shape[0]
    t = rng.uniform(size=n)
    noise = rng.standard_normal(x.shape)
    z = (1.0 - t)[:, None] * x + t[:, None] * noise
    target = noise - x
    if not grad:
        r = net.forward(z, t, labels) - target
        return float(np.mean(np.sum(r * r, axis=1)))
    u, acts = net.forward_cache(z, t, labels)
    r = u - target
    return float(np.mean(np.sum(r * r, axis=1))), net.backward(acts, 2.0 * r / n)


def flow_pretrain(net, data, labels=None, steps=2000, batch_size=256, lr=3e-3, seed=0,
                  val_fraction=0.1):
    """Fit ``net`` to ``data`` by flow matching (Adam, cosine-decayed lr).

    Returns ``(net, validation_loss)``; the net is updated in place.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    labels = np.zeros(len(data), dtype=np.int64) if labels is None else np.asarray(labels)
    rng = np.random.default_rng(seed)
    n_val = int(len(data) * val_fraction) if len(data) >= 20 else 0
    perm = rng.permutation(len(data))
    val, train = perm[:n_val], perm[n_val:]
    opt = Adam(net.n_params, lr)
    for k in range(steps):
        opt.lr = lr * 0.5 * (1.0 + math.cos(math.pi * k / steps))
        idx = train[rng.integers(len(train), size=batch_size)]
        loss, g = flow_matching_loss(net, data[idx], labels[idx], rng, grad=True)
        if not (math.isfinite(loss) and np.all(np.isfinite(g))):
            raise NumericalError(f"flow-matching loss diverged at step {k}")
        opt.step(net.params, g)
    eval_idx = val if n_val else train
    vrng = np.random.default_rng([seed, 1])
    val_loss = flow_matching_loss(net, data[eval_idx], labels[eval_idx], vrng)
    if not math.isfinite(val_loss):
        raise NumericalError("validation loss is not finite")
    return net, val_loss


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: b"OTCAFLOW" | uint32 version | uint32 header bytes | JSON header
#         | n_params little-endian float64


MAGIC = b"OTCAFLOW"
VERSION = 1


def save_checkpoint(path, net, schedule):
    header = json.dumps({
        "dim": net.dim,
        "n_cond": net.n_cond,
        "widths": list(net.widths),
        "activation": net.activation,
        "n_params": net.n_params,
        "dtype": "<f8",
        "schedule": asdict(schedule),
    }, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not an OTCA flow checkpoint")
    version, hlen = struct.unpack_from("<II", blob, len(MAGIC))
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(blob[start:start + hlen])
    params = np.frombuffer(blob, dtype="<f8", offset=start + hlen)
    if params.size != header["n_params"]:
        raise ValueError(f"{path}: truncated parameter block")
    net = VelocityNet(header["dim"], header["n_cond"], header["widths"], params=params)
    return net, NoiseSchedule(**header["schedule"])
