"""Score-function update: w <- w + lr * mean_i(Q_i * iw_i * c_i * grad log pi(a_i | s_i)).

c_i corrects replayed experiences for the policy having moved since they were
recorded: c_i = min(pi_now(a_i | s_i) / pi_then(a_i | s_i), ratio_cap), held
constant in the gradient. Experiences without a recorded probability use c_i = 1.
"""
import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import config
from models.data_models import Experience, UpdateStats
from services.policy_network import (
    PolicyNetwork, PolicyWeights, gradient_norm, log_softmax, stack_observations,
)

logger = logging.getLogger(__name__)

CHUNK_SIZE = 128


def replay_ratios(chunk: Sequence[Experience], probs_now: np.ndarray, ratio_cap: float) -> np.ndarray:
    ratios = np.ones(len(chunk))
    for i, e in enumerate(chunk):
        if e.policy_prob is not None:
            ratios[i] = min(probs_now[i] / e.policy_prob, ratio_cap) if e.policy_prob > 0 else ratio_cap
    return ratios


def batch_gradient(weights: PolicyWeights, batch: Sequence[Experience],
                   rng: Optional[np.random.Generator] = None, train: bool = True,
                   ratio_cap: float = config.IMPORTANCE_CAP) -> Tuple[Dict[str, np.ndarray], float]:
    """Mean weighted score over the batch and the matching surrogate loss -mean(coefficient * log pi)"""
    network = PolicyNetwork(weights.config)
    total = {name: np.zeros_like(array) for name, array in weights.items()}
    weighted_logp = 0.0
    for start in range(0, len(batch), CHUNK_SIZE):
        chunk = batch[start:start + CHUNK_SIZE]
        env, vehicle = stack_observations([e.obs for e in chunk])
        actions = np.array([e.action for e in chunk], dtype=int)
        rows = np.arange(len(chunk))
        result = network.forward(weights, env, vehicle, train=train, rng=rng)
        probs_now = result.probs
        if train and result.cache.mask is not None and any(e.policy_prob is not None for e in chunk):
            probs_now = network.forward(weights, env, vehicle).probs
        coefficients = np.array([e.reward * e.importance_weight for e in chunk])
        coefficients = coefficients * replay_ratios(chunk, probs_now[rows, actions], ratio_cap)
        grads = network.backward(weights, result.cache, actions, coefficients)
        for name in total:
            total[name] += grads[name]
        weighted_logp += float(np.sum(coefficients * log_softmax(result.logits)[rows, actions]))
    n = len(batch)
    return {name: g / n for name, g in total.items()}, -weighted_logp / n


def update(weights: PolicyWeights, batch: Sequence[Experience], learning_rate: float,
           rng: Optional[np.random.Generator] = None,
           ratio_cap: float = config.IMPORTANCE_CAP) -> Tuple[PolicyWeights, UpdateStats]:
    if len(batch) == 0:
        raise ValueError("update needs a non-empty batch")
    grads, loss = batch_gradient(weights, batch, rng, ratio_cap=ratio_cap)
    norm = gradient_norm(grads)
    updated = weights.add_scaled(grads, learning_rate) if math.isfinite(norm) else weights
    if not (math.isfinite(norm) and updated.is_finite()):
        logger.warning("non-finite gradient on a batch of %d; update skipped", len(batch))
        return weights, UpdateStats(loss=loss, grad_norm=norm, batch_size=len(batch), skipped=True)
    return updated, UpdateStats(loss=loss, grad_norm=norm, batch_size=len(batch))
