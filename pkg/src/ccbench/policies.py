"""Neural-network policies over a flat parameter vector.

Each network owns a :class:`ParamLayout` mapping named weight blocks into a
single float64 vector. Training code differentiates with respect to that
flat vector; sampling code runs a plain numpy forward pass which also accepts
a leading population axis (``params`` of shape ``(n, P)``), one candidate per
episode.
"""

from __future__ import annotations

import json
import math
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import ConfigurationError

LOG_2PI = math.log(2.0 * math.pi)


class ParamLayout:
    """Named slices of a flat parameter vector."""

    def __init__(self, entries: Sequence[tuple[str, tuple[int, ...]]]):
        self.entries = [(name, tuple(int(s) for s in shape)) for name, shape in entries]
        self.slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self.entries:
            if name in self.slices:
                raise ValueError(f"duplicate parameter block {name!r}")
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.size = offset

    def unpack(self, flat):
        """Views of each block; Tensors are sliced on the tape."""
        if isinstance(flat, Tensor):
            if flat.shape != (self.size,):
                raise ConfigurationError(f"expected {self.size} parameters, got {flat.shape}")
            return {k: ad.reshape(flat[sl], shape) for k, (sl, shape) in self.slices.items()}
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape[-1] != self.size:
            raise ConfigurationError(f"expected {self.size} parameters, got {flat.shape[-1]}")
        lead = flat.shape[:-1]
        return {k: flat[..., sl].reshape(lead + shape) for k, (sl, shape) in self.slices.items()}

    def pack(self, blocks: dict) -> np.ndarray:
        out = np.empty(self.size)
        for k, (sl, shape) in self.slices.items():
            v = np.asarray(blocks[k], dtype=np.float64)
            if v.shape != shape:
                raise ConfigurationError(f"block {k!r} has shape {v.shape}, expected {shape}")
            out[sl] = v.reshape(-1)
        return out


def glorot_init(layout: ParamLayout, rng: np.random.Generator) -> np.ndarray:
    """Uniform(+-sqrt(6 / (fan_in + fan_out))) for matrices, zeros elsewhere."""
    blocks = {}
    for name, shape in layout.entries:
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            blocks[name] = rng.uniform(-bound, bound, size=shape)
        else:
            blocks[name] = np.zeros(shape)
    return layout.pack(blocks)


_NP_ACT = {"tanh": np.tanh, "relu": lambda x: np.maximum(x, 0.0), "linear": lambda x: x}
_AD_ACT = {"tanh": ad.tanh, "relu": ad.relu, "linear": lambda x: x}


def _np_affine(x, W, b, rowwise: bool = False):
    if W.ndim == 3:
        return np.einsum("ni,nio->no", x, W) + b
    if rowwise:
        # one product per row: results do not depend on how many rows are batched
        return (x[:, None, :] @ W)[:, 0] + b
    return x @ W + b


def _mlp_entries(sizes, prefix=""):
    return [
        e
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        for e in ((f"{prefix}W{i}", (a, b)), (f"{prefix}b{i}", (b,)))
    ]


def _mlp_numpy(w, x, activations, prefix="", rowwise=False):
    for i, act in enumerate(activations):
        x = _NP_ACT[act](_np_affine(x, w[f"{prefix}W{i}"], w[f"{prefix}b{i}"], rowwise))
    return x


def _mlp_tensor(w, x, activations, prefix=""):
    for i, act in enumerate(activations):
        x = _AD_ACT[act](ad.matmul(x, w[f"{prefix}W{i}"]) + w[f"{prefix}b{i}"])
    return x


def gaussian_log_prob(mean, log_std, actions):
    """Diagonal-Gaussian log-density per row; works on Tensors or arrays."""
    if not (isinstance(mean, Tensor) or isinstance(log_std, Tensor)):
        z = (actions - mean) / np.exp(log_std)
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std * np.ones_like(z), axis=-1) - 0.5 * z.shape[-1] * LOG_2PI
    d = np.shape(actions)[-1]
    log_std = ad.as_tensor(log_std)
    z = (actions - mean) / ad.exp(log_std)
    return -0.5 * ad.tsum(z * z, axis=-1) - ad.tsum(ad.broadcast_to(log_std, z.shape), axis=-1) - 0.5 * d * LOG_2PI


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new):
    """KL(old || new) per row for diagonal Gaussians."""
    var_old = np.exp(2.0 * np.asarray(log_std_old.value if isinstance(log_std_old, Tensor) else log_std_old))
    if isinstance(mean_new, Tensor) or isinstance(log_std_new, Tensor):
        mean_old = ad.as_tensor(mean_old)
        log_std_old = ad.as_tensor(log_std_old)
        diff = mean_old - mean_new
        terms = (log_std_new - log_std_old) + (var_old + diff * diff) / (2.0 * ad.exp(2.0 * log_std_new)) - 0.5
        return ad.tsum(terms, axis=-1)
    diff = np.asarray(mean_old) - np.asarray(mean_new)
    terms = (log_std_new - log_std_old) + (var_old + diff**2) / (2.0 * np.exp(2.0 * log_std_new)) - 0.5
    return np.sum(np.broadcast_to(terms, diff.shape), axis=-1)


class NetworkPolicy:
    """Shared parameter handling."""

    kind = "network"
    recurrent = False

    def __init__(self, layout: ParamLayout, seed: int = 0):
        self.layout = layout
        self.params = glorot_init(layout, np.random.default_rng(seed))

    @property
    def num_params(self) -> int:
        return self.layout.size

    def with_params(self, params):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.params = np.array(params, dtype=np.float64)
        return clone

    def _theta(self, theta):
        return self.params if theta is None else theta

    def descriptor(self) -> dict:
        raise NotImplementedError


class GaussianMlpPolicy(NetworkPolicy):
    """Feed-forward mean network plus a state-independent log-std vector."""

    kind = "gaussian_mlp"

    def __init__(
        self,
        observation_dim: int,
        action_dim: int,
        hidden_sizes: Sequence[int] = (100, 50, 25),
        hidden_activations: Sequence[str] = ("tanh", "tanh", "linear"),
        init_log_std: float = 0.0,
        seed: int = 0,
    ):
        if len(hidden_activations) != len(hidden_sizes):
            raise ConfigurationError("one activation per hidden layer is required")
        self.observation_dim = observation_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.activations = tuple(hidden_activations) + ("linear",)
        self.init_log_std = init_log_std
        sizes = (observation_dim, *self.hidden_sizes, action_dim)
        super().__init__(ParamLayout(_mlp_entries(sizes) + [("log_std", (action_dim,))]), seed)
        sl, _ = self.layout.slices["log_std"]
        self.params[sl] = init_log_std

    def descriptor(self):
        return {
            "type": self.kind,
            "observation_dim": self.observation_dim,
            "action_dim": self.action_dim,
            "hidden_sizes": list(self.hidden_sizes),
            "hidden_activations": list(self.activations[:-1]),
        }

    def initial_state(self, n):
        return None

    def mean_numpy(self, obs, params=None):
        w = self.layout.unpack(self._theta(params))
        return _mlp_numpy(w, np.asarray(obs, dtype=np.float64), self.activations)

    def act(self, obs, prev_actions, state, rngs, params=None, deterministic=False):
        params = self._theta(params)
        w = self.layout.unpack(params)
        mean = _mlp_numpy(w, obs, self.activations, rowwise=True)
        if deterministic:
            return mean, None
        eps = np.stack([g.standard_normal(self.action_dim) for g in rngs])
        return mean + np.exp(w["log_std"]) * eps, None

    def dist_info(self, theta, data):
        """(mean, log_std) for every timestep; ``data`` is obs or a BatchSample."""
        obs = getattr(data, "observations", data)
        obs = np.asarray(obs, dtype=np.float64)
        if not np.all(np.isfinite(obs)):
            raise ValueError("non-finite observations")
        if isinstance(theta, Tensor):
            w = self.layout.unpack(theta)
            return _mlp_tensor(w, obs, self.activations), w["log_std"]
        w = self.layout.unpack(theta)
        return _mlp_numpy(w, obs, self.activations), w["log_std"]


    def fisher_product(self, theta, obs):
        """Exact Fisher-vector product for this family, with cached activations.

        For a state-independent log-std the Hessian of the mean KL at theta is
        ``J^T diag(1/sigma^2) J / N`` on the mean-network block and ``2 I`` on
        log_std, so each product is one forward-mode and one reverse pass.
        """
        w = self.layout.unpack(np.asarray(theta, dtype=np.float64))
        obs = np.asarray(obs, dtype=np.float64)
        n = len(obs)
        inputs, derivs = [], []
        x = obs
        for i, act in enumerate(self.activations):
            inputs.append(x)
            x = _NP_ACT[act](x @ w[f"W{i}"] + w[f"b{i}"])
            derivs.append(1.0 - x * x if act == "tanh" else (x > 0).astype(np.float64) if act == "relu" else None)
        inv_var = np.exp(-2.0 * w["log_std"])
        layout = self.layout
        n_layers = len(self.activations)

        def product(v):
            dv = layout.unpack(v)
            dx = None
            for i in range(n_layers):
                dz = inputs[i] @ dv[f"W{i}"] + dv[f"b{i}"]
                if dx is not None:
                    dz += dx @ w[f"W{i}"]
                dx = dz if derivs[i] is None else dz * derivs[i]
            g = dx * (inv_var / n)
            out = {"log_std": 2.0 * dv["log_std"]}
            for i in reversed(range(n_layers)):
                if derivs[i] is not None:
                    g = g * derivs[i]
                out[f"W{i}"] = inputs[i].T @ g
                out[f"b{i}"] = g.sum(axis=0)
                if i:
                    g = g @ w[f"W{i}"].T
            return layout.pack(out)

        return product


class RecurrentGaussianPolicy(NetworkPolicy):
    """Single LSTM layer over (o_t, a_{t-1}) feeding a linear Gaussian mean."""

    kind = "gaussian_lstm"
    recurrent = True

    def __init__(self, observation_dim: int, action_dim: int, hidden_size: int = 32,
                 init_log_std: float = 0.0, seed: int = 0):
        self.observation_dim = observation_dim
        self.action_dim = action_dim
        self.hidden_size = hidden_size
        self.init_log_std = init_log_std
        H, d = hidden_size, observation_dim + action_dim
        entries = [("Wx", (d, 4 * H)), ("Wh", (H, 4 * H)), ("b", (4 * H,)),
                   ("Wout", (H, action_dim)), ("bout", (action_dim,)), ("log_std", (action_dim,))]
        super().__init__(ParamLayout(entries), seed)
        sl, _ = self.layout.slices["log_std"]
        self.params[sl] = init_log_std

    def descriptor(self):
        return {"type": self.kind, "observation_dim": self.observation_dim,
                "action_dim": self.action_dim, "hidden_size": self.hidden_size}

    def initial_state(self, n):
        H = self.hidden_size
        return np.zeros((n, H)), np.zeros((n, H))

    def _cell_numpy(self, w, x, h, c, rowwise=False):
        H = self.hidden_size
        z = _np_affine(x, w["Wx"], w["b"], rowwise) + _np_affine(h, w["Wh"], 0.0, rowwise)
        i = 0.5 * (1 + np.tanh(0.5 * z[:, :H]))
        f = 0.5 * (1 + np.tanh(0.5 * z[:, H:2 * H]))
        o = 0.5 * (1 + np.tanh(0.5 * z[:, 2 * H:3 * H]))
        g = np.tanh(z[:, 3 * H:])
        c = f * c + i * g
        h = o * np.tanh(c)
        return h, c

    def act(self, obs, prev_actions, state, rngs, params=None, deterministic=False):
        w = self.layout.unpack(self._theta(params))
        h, c = state
        h, c = self._cell_numpy(w, np.concatenate([obs, prev_actions], axis=-1), h, c, rowwise=True)
        mean = _np_affine(h, w["Wout"], w["bout"], rowwise=True)
        if deterministic:
            return mean, (h, c)
        eps = np.stack([g.standard_normal(self.action_dim) for g in rngs])
        return mean + np.exp(w["log_std"]) * eps, (h, c)

    def _unroll_tensor(self, w, inputs):
        """``inputs`` (T, N, d) -> means (T, N, a) as a Tensor."""
        T, N, d = inputs.shape
        H = self.hidden_size
        h = Tensor(np.zeros((N, H)))
        c = Tensor(np.zeros((N, H)))
        hs = []
        for t in range(T):
            z = ad.matmul(inputs[t], w["Wx"]) + w["b"] + ad.matmul(h, w["Wh"])
            i = ad.sigmoid(z[:, :H])
            f = ad.sigmoid(z[:, H:2 * H])
            o = ad.sigmoid(z[:, 2 * H:3 * H])
            g = ad.tanh(z[:, 3 * H:])
            c = f * c + i * g
            h = o * ad.tanh(c)
            hs.append(h)
        hseq = ad.reshape(ad.stack(hs, axis=0), (T * N, H))
        return ad.reshape(ad.matmul(hseq, w["Wout"]) + w["bout"], (T, N, self.action_dim))

    def _unroll_numpy(self, w, inputs):
        T, N, _ = inputs.shape
        h, c = self.initial_state(N)
        out = np.empty((T, N, self.action_dim))
        for t in range(T):
            h, c = self._cell_numpy(w, inputs[t], h, c)
            out[t] = _np_affine(h, w["Wout"], w["bout"])
        return out

    @staticmethod
    def _padded(trajectories):
        lengths = [len(o) for o, _ in trajectories]
        T, N = max(lengths), len(trajectories)
        obs_dim = trajectories[0][0].shape[-1]
        act_dim = trajectories[0][1].shape[-1]
        inputs = np.zeros((T, N, obs_dim + act_dim))
        for n, (o, a) in enumerate(trajectories):
            L = len(o)
            inputs[:L, n, :obs_dim] = o
            inputs[1:L, n, obs_dim:] = a[: L - 1]
        # flat (trajectory-major) order -> index into the (T * N) padded layout
        index = np.concatenate([np.arange(L) * N + n for n, L in enumerate(lengths)])
        return inputs, index

    def dist_info(self, theta, data):
        """Per-timestep (mean, log_std) in flattened trajectory-major order."""
        if hasattr(data, "trajectories"):
            pairs = [(t.observations, t.actions) for t in data.trajectories if t.length > 0]
        else:
            pairs = list(data)
        inputs, index = self._padded(pairs)
        T, N, _ = inputs.shape
        w = self.layout.unpack(theta)
        if isinstance(theta, Tensor):
            means = self._unroll_tensor(w, inputs)
            return ad.reshape(means, (T * N, self.action_dim))[index], w["log_std"]
        means = self._unroll_numpy(w, inputs)
        return means.reshape(T * N, self.action_dim)[index], w["log_std"]


def log_prob(policy, theta, data, actions):
    """log pi(a|s) per timestep; Tensor if ``theta`` is a Tensor."""
    actions = np.asarray(actions, dtype=np.float64)
    if not np.all(np.isfinite(actions)):
        raise ValueError("non-finite actions")
    mean, log_std = policy.dist_info(theta, data)
    if mean.shape != actions.shape:
        raise ConfigurationError(f"action shape {actions.shape} does not match policy output {mean.shape}")
    return gaussian_log_prob(mean, log_std, actions)


def recurrent_unroll(policy: RecurrentGaussianPolicy, theta, observations, actions):
    """log pi(a_t | o_{1:t}, a_{1:t-1}) for one sequence."""
    observations = np.asarray(observations, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if len(observations) != len(actions):
        raise ValueError("observation and action sequences differ in length")
    return log_prob(policy, theta, [(observations, actions)], actions)


def mean_kl(policy, theta_old, theta_new, data):
    """Average KL(pi_old || pi_new) over the timesteps in ``data``."""
    obs = getattr(data, "observations", data)
    if not hasattr(data, "trajectories") and len(obs) == 0:
        raise ValueError("mean_kl needs at least one observation")
    if hasattr(data, "trajectories") and sum(t.length for t in data.trajectories) == 0:
        raise ValueError("mean_kl needs at least one observation")
    with ad.no_grad():
        mo, lo = policy.dist_info(np.asarray(getattr(theta_old, "value", theta_old)), data)
    mn, ln = policy.dist_info(theta_new, data)
    kl = gaussian_kl(mo, lo, mn, ln)
    return ad.mean(kl) if isinstance(kl, Tensor) else float(np.mean(kl))


class FisherOperator:
    """v -> I(theta) v + damping * v, via the Hessian of the mean KL at theta.

    Policies with a closed-form product (``fisher_product``) use it. Otherwise
    the gradient of the KL is recorded once with its graph kept and each
    product is one extra reverse pass through that graph; ``exact=False``
    forces that generic path.
    """

    def __init__(self, policy, theta, data, damping: float = 1e-5, exact: bool = True):
        self.policy = policy
        self.theta = np.array(theta, dtype=np.float64)
        self.data = data
        self.damping = damping
        self._direct = None
        if exact and hasattr(policy, "fisher_product"):
            obs = np.asarray(getattr(data, "observations", data), dtype=np.float64)
            self._direct = policy.fisher_product(self.theta, obs)
            return
        with ad.no_grad():
            old = policy.dist_info(self.theta, data)
        self._th = ad.variable(self.theta)
        mn, ln = policy.dist_info(self._th, data)
        kl = ad.mean(gaussian_kl(old[0], old[1], mn, ln))
        self._kl_grad = ad.grad(kl, self._th, create_graph=True)

    def __call__(self, v):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != self.theta.shape:
            raise ConfigurationError(f"vector has shape {v.shape}, expected {self.theta.shape}")
        if self._direct is not None:
            return self._direct(v) + self.damping * v
        hv = ad.grad(ad.tsum(self._kl_grad * v), self._th)
        return hv.value + self.damping * v


def fisher_vector_product(policy, theta, data, v, damping: float = 1e-5):
    return FisherOperator(policy, theta, data, damping)(v)


# ------------------------------------------------------------------ DDPG nets


class DeterministicMlpPolicy(NetworkPolicy):
    """relu MLP whose tanh output is scaled into the action box."""

    kind = "deterministic_mlp"

    def __init__(self, observation_dim, action_dim, action_lower, action_upper,
                 hidden_sizes=(400, 300), seed: int = 0):
        self.observation_dim = observation_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.low = np.broadcast_to(np.asarray(action_lower, dtype=np.float64), (action_dim,)).copy()
        self.high = np.broadcast_to(np.asarray(action_upper, dtype=np.float64), (action_dim,)).copy()
        self.activations = ("relu",) * len(self.hidden_sizes) + ("tanh",)
        super().__init__(ParamLayout(_mlp_entries((observation_dim, *self.hidden_sizes, action_dim))), seed)

    def descriptor(self):
        return {"type": self.kind, "observation_dim": self.observation_dim,
                "action_dim": self.action_dim, "hidden_sizes": list(self.hidden_sizes),
                "action_lower": self.low.tolist(), "action_upper": self.high.tolist()}

    def _scale(self, u):
        return 0.5 * (self.high + self.low) + 0.5 * (self.high - self.low) * u

    def forward(self, theta, obs):
        w = self.layout.unpack(theta)
        if isinstance(theta, Tensor):
            return self._scale(_mlp_tensor(w, np.asarray(obs, dtype=np.float64), self.activations))
        return self._scale(_mlp_numpy(w, np.asarray(obs, dtype=np.float64), self.activations))

    def initial_state(self, n):
        return None

    def act(self, obs, prev_actions, state, rngs, params=None, deterministic=True):
        w = self.layout.unpack(self._theta(params))
        return self._scale(_mlp_numpy(w, np.asarray(obs, dtype=np.float64), self.activations, rowwise=True)), None


class QFunction(NetworkPolicy):
    """relu MLP on concat(s, a) with a scalar output."""

    kind = "q_mlp"

    def __init__(self, observation_dim, action_dim, hidden_sizes=(400, 300), seed: int = 0):
        self.observation_dim = observation_dim
        self.action_dim = action_dim
        self.hidden_sizes = tuple(hidden_sizes)
        self.activations = ("relu",) * len(self.hidden_sizes) + ("linear",)
        super().__init__(ParamLayout(_mlp_entries((observation_dim + action_dim, *self.hidden_sizes, 1))), seed)

    def descriptor(self):
        return {"type": self.kind, "observation_dim": self.observation_dim,
                "action_dim": self.action_dim, "hidden_sizes": list(self.hidden_sizes)}

    def forward(self, phi, obs, actions):
        """Q(s, a) per row; differentiable in ``phi`` and in ``actions``."""
        obs = np.asarray(obs, dtype=np.float64)
        if isinstance(phi, Tensor) or isinstance(actions, Tensor):
            phi_t = ad.as_tensor(phi)
            w = self.layout.unpack(phi_t)
            x = ad.concat([ad.as_tensor(obs), ad.as_tensor(actions)], axis=-1)
            return ad.reshape(_mlp_tensor(w, x, self.activations), (len(obs),))
        w = self.layout.unpack(phi)
        x = np.concatenate([obs, np.asarray(actions, dtype=np.float64)], axis=-1)
        return _mlp_numpy(w, x, self.activations)[:, 0]


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"CCBPOLICY"
CHECKPOINT_VERSION = 1


def save_policy(path, policy, extra: dict | None = None) -> None:
    """Write ``MAGIC | u32 version | u32 header_len | JSON header | <f8 params``."""
    header = {"architecture": policy.descriptor(), "num_params": policy.num_params}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.asarray(policy.params, dtype="<f8").tobytes())
    tmp.replace(path)


def policy_from_descriptor(desc: dict):
    kind = desc["type"]
    if kind == GaussianMlpPolicy.kind:
        return GaussianMlpPolicy(desc["observation_dim"], desc["action_dim"],
                                 desc["hidden_sizes"], desc["hidden_activations"])
    if kind == RecurrentGaussianPolicy.kind:
        return RecurrentGaussianPolicy(desc["observation_dim"], desc["action_dim"], desc["hidden_size"])
    if kind == DeterministicMlpPolicy.kind:
        return DeterministicMlpPolicy(desc["observation_dim"], desc["action_dim"],
                                      desc["action_lower"], desc["action_upper"], desc["hidden_sizes"])
    if kind == QFunction.kind:
        return QFunction(desc["observation_dim"], desc["action_dim"], desc["hidden_sizes"])
    raise ConfigurationError(f"unknown architecture {kind!r}")


def load_policy(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a policy checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off: off + hlen].decode("utf-8"))
    params = np.frombuffer(data, dtype="<f8", offset=off + hlen).astype(np.float64)
    policy = policy_from_descriptor(header["architecture"])
    if params.size != policy.num_params:
        raise ValueError("parameter count does not match the architecture header")
    return policy.with_params(params), header
