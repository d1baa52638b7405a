"""Convolutional-recurrent softmax policy with hand-written reverse mode.

Environment branch: three recurrent layers, each unrolled over the three
observation slices with

    h_t = tanh(W_d * x_t + W_f * h_{t-1} + b),   h_{-1} = 0

(`*` is a same-padded 2D cross-correlation) and a 2x2 max-pool on every step's
output. Layer l+1 reads the pooled outputs of layer l; only the last step of the
last layer leaves the branch. Vehicle branch: two tanh FC layers. Both meet in
FC1 (tanh) -> dropout -> FC2 (tanh) -> linear -> softmax.

Everything is batched over a leading N axis. Forward returns its activations so
several rollouts can share one set of weights without sharing scratch space.
"""
import logging
import math
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.data_models import ActionDistribution, ControlInput, NetworkConfig, Observation
from models.exceptions import ConfigurationError, ControlRangeError

logger = logging.getLogger(__name__)

ENV_SLICES = 3
ENV_CHANNELS = 3
VEHICLE_FEATURES = 5
RECURRENT_LAYERS = 3


# --- weights -----------------------------------------------------------------

class PolicyWeights:
    """Named parameter tensors of the policy network, in a fixed order"""

    def __init__(self, config: NetworkConfig, tensors: Dict[str, np.ndarray]):
        expected = parameter_shapes(config)
        if list(tensors) != list(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise ConfigurationError(f"weight names do not match config (missing={missing}, extra={extra})")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ConfigurationError(f"{name}: shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.tensors = {name: np.asarray(array, dtype=float) for name, array in tensors.items()}

    @classmethod
    def init(cls, config: NetworkConfig, seed: Optional[int] = None) -> "PolicyWeights":
        """Weights uniform in +-1/sqrt(fan_in), biases zero"""
        rng = np.random.default_rng(config.init_seed if seed is None else seed)
        tensors = {}
        for name, shape in parameter_shapes(config).items():
            if name.endswith(".b"):
                tensors[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
                bound = 1.0 / math.sqrt(fan_in)
                tensors[name] = rng.uniform(-bound, bound, size=shape)
        return cls(config, tensors)

    @classmethod
    def zeros(cls, config: NetworkConfig) -> "PolicyWeights":
        return cls(config, {name: np.zeros(shape) for name, shape in parameter_shapes(config).items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def copy(self) -> "PolicyWeights":
        return PolicyWeights(self.config, {name: array.copy() for name, array in self.tensors.items()})

    def add_scaled(self, grads: Dict[str, np.ndarray], scale: float) -> "PolicyWeights":
        return PolicyWeights(self.config, {name: array + scale * grads[name] for name, array in self.tensors.items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(array)) for array in self.tensors.values())

    def parameter_count(self) -> int:
        return int(sum(array.size for array in self.tensors.values()))

    def allclose(self, other: "PolicyWeights", atol: float = 0.0) -> bool:
        return list(self) == list(other) and all(
            np.allclose(self[name], other[name], rtol=0.0, atol=atol) for name in self)


def parameter_shapes(config: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
    k = config.kernel
    shapes: Dict[str, Tuple[int, ...]] = {}
    c_in = ENV_CHANNELS
    for layer, c_out in enumerate(config.channels, start=1):
        shapes[f"rec{layer}.W_d"] = (c_out, c_in, k, k)
        shapes[f"rec{layer}.W_f"] = (c_out, c_out, k, k)
        shapes[f"rec{layer}.b"] = (c_out,)
        c_in = c_out
    v_in = VEHICLE_FEATURES
    for layer, width in enumerate(config.vehicle_widths, start=1):
        shapes[f"veh{layer}.W"] = (v_in, width)
        shapes[f"veh{layer}.b"] = (width,)
        v_in = width
    pooled = config.grid_size // 2 ** RECURRENT_LAYERS
    f_in = config.channels[-1] * pooled * pooled + config.vehicle_widths[-1]
    for layer, width in enumerate(config.fc_widths, start=1):
        shapes[f"fc{layer}.W"] = (f_in, width)
        shapes[f"fc{layer}.b"] = (width,)
        f_in = width
    shapes["out.W"] = (f_in, config.n_actions)
    shapes["out.b"] = (config.n_actions,)
    return shapes


# --- primitives --------------------------------------------------------------

def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """(N, C, H, W) x (O, C, k, k) -> (N, O, H, W), zero padded"""
    k = kernel.shape[-1]
    windows = sliding_window_view(_pad(x, k // 2), (k, k), axis=(2, 3))
    return np.einsum("ncijab,ocab->noij", windows, kernel, optimize=True)


def conv_same_input_grad(dout: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gradient of conv_same w.r.t. its input: full correlation with the flipped kernel"""
    k = kernel.shape[-1]
    windows = sliding_window_view(_pad(dout, k - 1 - k // 2), (k, k), axis=(2, 3))
    return np.einsum("noijab,ocab->ncij", windows, kernel[:, :, ::-1, ::-1], optimize=True)


def conv_same_kernel_grad(x: np.ndarray, dout: np.ndarray, k: int) -> np.ndarray:
    windows = sliding_window_view(_pad(x, k // 2), (k, k), axis=(2, 3))
    return np.einsum("noij,ncijab->ocab", dout, windows, optimize=True)


def max_pool2(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """2x2 max-pool; returns the pooled map and the winning index inside each block"""
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    winners = blocks.argmax(axis=-1)
    pooled = np.take_along_axis(blocks, winners[..., None], axis=-1)[..., 0]
    return pooled, winners


def max_pool2_grad(dpooled: np.ndarray, winners: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = dpooled.shape
    dblocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(dblocks, winners[..., None], dpooled[..., None], axis=-1)
    return dblocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


# --- network -----------------------------------------------------------------

class _RecurrentCache(NamedTuple):
    inputs: List[np.ndarray]  # x_t per step
    hidden: List[np.ndarray]  # h_t per step (post tanh)
    winners: List[np.ndarray]  # pooling argmax per step


class ForwardCache(NamedTuple):
    recurrent: List[_RecurrentCache]
    flat_shape: Tuple[int, ...]
    vehicle: List[np.ndarray]  # input and both hidden activations
    joint: np.ndarray  # concatenated FC1 input
    fc1: np.ndarray
    mask: Optional[np.ndarray]  # inverted-dropout mask, None in eval mode
    fc2_in: np.ndarray
    fc2: np.ndarray
    probs: np.ndarray


class ForwardResult(NamedTuple):
    probs: np.ndarray  # (N, K)
    logits: np.ndarray  # (N, K)
    cache: ForwardCache


class PolicyNetwork:
    def __init__(self, config: NetworkConfig):
        self.config = config

    def _check_inputs(self, env: np.ndarray, vehicle: np.ndarray) -> None:
        g = self.config.grid_size
        if env.ndim != 5 or env.shape[1:] != (ENV_SLICES, ENV_CHANNELS, g, g):
            raise ConfigurationError(
                f"env batch has shape {env.shape}, expected (N, {ENV_SLICES}, {ENV_CHANNELS}, {g}, {g})")
        if vehicle.shape != (env.shape[0], VEHICLE_FEATURES):
            raise ConfigurationError(f"vehicle batch has shape {vehicle.shape}")

    def forward(self, w: PolicyWeights, env: np.ndarray, vehicle: np.ndarray, train: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardResult:
        env = np.asarray(env, dtype=float)
        vehicle = np.asarray(vehicle, dtype=float)
        self._check_inputs(env, vehicle)
        n = env.shape[0]

        steps = [env[:, t] for t in range(ENV_SLICES)]
        recurrent: List[_RecurrentCache] = []
        for layer in range(1, RECURRENT_LAYERS + 1):
            W_d, W_f, b = w[f"rec{layer}.W_d"], w[f"rec{layer}.W_f"], w[f"rec{layer}.b"]
            hidden, winners, pooled = [], [], []
            h_prev = None
            for x_t in steps:
                z = conv_same(x_t, W_d) + b[None, :, None, None]
                if h_prev is not None:
                    z += conv_same(h_prev, W_f)
                h_prev = np.tanh(z)
                p, idx = max_pool2(h_prev)
                hidden.append(h_prev)
                winners.append(idx)
                pooled.append(p)
            recurrent.append(_RecurrentCache(steps, hidden, winners))
            steps = pooled
        last = steps[-1]
        flat = last.reshape(n, -1)

        acts = [vehicle]
        for layer in range(1, len(self.config.vehicle_widths) + 1):
            acts.append(np.tanh(acts[-1] @ w[f"veh{layer}.W"] + w[f"veh{layer}.b"]))

        joint = np.concatenate([flat, acts[-1]], axis=1)
        fc1 = np.tanh(joint @ w["fc1.W"] + w["fc1.b"])
        mask = None
        fc2_in = fc1
        if train and self.config.dropout > 0.0:
            rng = rng if rng is not None else np.random.default_rng()
            keep = 1.0 - self.config.dropout
            mask = (rng.random(fc1.shape) < keep) / keep
            fc2_in = fc1 * mask
        fc2 = np.tanh(fc2_in @ w["fc2.W"] + w["fc2.b"])
        logits = fc2 @ w["out.W"] + w["out.b"]
        probs = softmax(logits)

        cache = ForwardCache(recurrent, last.shape, acts, joint, fc1, mask, fc2_in, fc2, probs)
        return ForwardResult(probs, logits, cache)

    def backward(self, w: PolicyWeights, cache: ForwardCache, actions: Sequence[int],
                 coefficients: Sequence[float]) -> Dict[str, np.ndarray]:
        """Gradient of sum_i coefficients[i] * log pi(actions[i] | obs_i) w.r.t. every tensor"""
        actions = np.asarray(actions, dtype=int)
        coefficients = np.asarray(coefficients, dtype=float)
        n, n_actions = cache.probs.shape
        grads: Dict[str, np.ndarray] = {}

        onehot = np.zeros((n, n_actions))
        onehot[np.arange(n), actions] = 1.0
        dlogits = coefficients[:, None] * (onehot - cache.probs)

        grads["out.W"] = cache.fc2.T @ dlogits
        grads["out.b"] = dlogits.sum(axis=0)
        dz = (dlogits @ w["out.W"].T) * (1.0 - cache.fc2 ** 2)
        grads["fc2.W"] = cache.fc2_in.T @ dz
        grads["fc2.b"] = dz.sum(axis=0)
        dfc1 = dz @ w["fc2.W"].T
        if cache.mask is not None:
            dfc1 = dfc1 * cache.mask
        dz = dfc1 * (1.0 - cache.fc1 ** 2)
        grads["fc1.W"] = cache.joint.T @ dz
        grads["fc1.b"] = dz.sum(axis=0)
        djoint = dz @ w["fc1.W"].T

        flat_size = int(np.prod(cache.flat_shape[1:]))
        dflat, dveh = djoint[:, :flat_size], djoint[:, flat_size:]
        acts = cache.vehicle
        for layer in range(len(acts) - 1, 0, -1):
            dz = dveh * (1.0 - acts[layer] ** 2)
            grads[f"veh{layer}.W"] = acts[layer - 1].T @ dz
            grads[f"veh{layer}.b"] = dz.sum(axis=0)
            dveh = dz @ w[f"veh{layer}.W"].T

        # only the final step of the last layer is exported
        dpooled = [np.zeros(cache.flat_shape) for _ in range(ENV_SLICES)]
        dpooled[-1] = dflat.reshape(cache.flat_shape)
        k = self.config.kernel
        for layer in range(RECURRENT_LAYERS, 0, -1):
            rc = cache.recurrent[layer - 1]
            W_d, W_f = w[f"rec{layer}.W_d"], w[f"rec{layer}.W_f"]
            dW_d = np.zeros_like(W_d)
            dW_f = np.zeros_like(W_f)
            db = np.zeros(W_d.shape[0])
            dinputs = [None] * ENV_SLICES
            dh_next = None
            for t in range(ENV_SLICES - 1, -1, -1):
                dh = max_pool2_grad(dpooled[t], rc.winners[t])
                if dh_next is not None:
                    dh = dh + dh_next
                dz = dh * (1.0 - rc.hidden[t] ** 2)
                dW_d += conv_same_kernel_grad(rc.inputs[t], dz, k)
                db += dz.sum(axis=(0, 2, 3))
                if layer > 1:
                    dinputs[t] = conv_same_input_grad(dz, W_d)
                if t > 0:
                    dW_f += conv_same_kernel_grad(rc.hidden[t - 1], dz, k)
                    dh_next = conv_same_input_grad(dz, W_f)
            grads[f"rec{layer}.W_d"] = dW_d
            grads[f"rec{layer}.W_f"] = dW_f
            grads[f"rec{layer}.b"] = db
            dpooled = dinputs

        return {name: grads[name] for name in w}


# --- single-observation helpers ---------------------------------------------

def stack_observations(observations: Sequence[Observation]) -> Tuple[np.ndarray, np.ndarray]:
    env = np.stack([obs.env for obs in observations])
    vehicle = np.stack([obs.vehicle for obs in observations])
    return env, vehicle


def forward(w: PolicyWeights, obs: Observation, train: bool = False,
            rng: Optional[np.random.Generator] = None) -> ActionDistribution:
    result = PolicyNetwork(w.config).forward(w, obs.env[None], obs.vehicle[None], train=train, rng=rng)
    return ActionDistribution(probs=result.probs[0], logits=result.logits[0])


def log_prob_gradient(w: PolicyWeights, obs: Observation, action: int,
                      coefficient: float = 1.0) -> Dict[str, np.ndarray]:
    """coefficient * grad log pi(action | obs), eval mode"""
    network = PolicyNetwork(w.config)
    result = network.forward(w, obs.env[None], obs.vehicle[None])
    return network.backward(w, result.cache, [action], [coefficient])


def gradient_norm(grads: Dict[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# --- actions -----------------------------------------------------------------

def sample_action(dist: ActionDistribution, rng: np.random.Generator) -> int:
    return int(rng.choice(dist.probs.size, p=dist.probs))


def greedy_action(dist: ActionDistribution) -> int:
    return int(np.argmax(dist.probs))


def action_to_control(index: int, n_actions: int = 9, u_max: float = math.pi / 4) -> ControlInput:
    if not 0 <= index < n_actions:
        raise ControlRangeError(f"action index {index} outside [0, {n_actions})")
    return ControlInput(u=u_max * (2.0 * index / (n_actions - 1) - 1.0))


def nearest_action(u: float, n_actions: int = 9, u_max: float = math.pi / 4) -> int:
    """Discrete action whose angular rate is closest to u"""
    position = (u / u_max + 1.0) * (n_actions - 1) / 2.0
    return int(min(max(round(position), 0), n_actions - 1))
