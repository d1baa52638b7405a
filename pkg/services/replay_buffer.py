import logging
from collections import deque
from pathlib import Path
from typing import Deque, Iterable, List, NamedTuple, Sequence, Union

import numpy as np

from models.data_models import Experience, Observation
from models.exceptions import CheckpointFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Batch(NamedTuple):
    experiences: List[Experience]
    small: bool  # fewer than batch_size experiences were available


class ReplayBuffer:
    """Bounded FIFO of experiences; every push is tagged with a running sequence number"""

    def __init__(self, capacity: int = 10000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: Deque[Experience] = deque(maxlen=capacity)
        self._next_tag = 0

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def next_tag(self) -> int:
        return self._next_tag

    def push(self, experiences: Iterable[Experience]) -> None:
        for experience in experiences:
            self._items.append(experience.model_copy(update={"tag": self._next_tag}))
            self._next_tag += 1

    def sample(self, count: int, rng: np.random.Generator) -> List[Experience]:
        """Uniform draw without replacement of min(count, len) experiences"""
        count = min(count, len(self._items))
        if count <= 0:
            return []
        picks = rng.choice(len(self._items), size=count, replace=False)
        return [self._items[i] for i in picks]

    def tags(self) -> List[int]:
        return [item.tag for item in self._items]

    # persistence ----------------------------------------------------------

    def save(self, path: PathLike) -> None:
        items = list(self._items)
        if items:
            env = np.stack([e.obs.env for e in items])
            vehicle = np.stack([e.obs.vehicle for e in items])
        else:
            env = np.zeros((0,))
            vehicle = np.zeros((0,))
        np.savez(
            path, env=env, vehicle=vehicle,
            action=np.array([e.action for e in items], dtype=np.int64),
            reward=np.array([e.reward for e in items], dtype=float),
            step_index=np.array([e.step_index for e in items], dtype=np.int64),
            episode_length=np.array([e.episode_length for e in items], dtype=np.int64),
            importance_weight=np.array([e.importance_weight for e in items], dtype=float),
            policy_prob=np.array([np.nan if e.policy_prob is None else e.policy_prob for e in items], dtype=float),
            tag=np.array([e.tag for e in items], dtype=np.int64),
            meta=np.array([self.capacity, self._next_tag], dtype=np.int64),
        )
        logger.info("saved %d replay experiences to %s", len(items), path)

    @classmethod
    def load(cls, path: PathLike) -> "ReplayBuffer":
        try:
            with np.load(path) as data:
                capacity, next_tag = (int(v) for v in data["meta"])
                buffer = cls(capacity)
                probs = data["policy_prob"]
                for i in range(len(data["action"])):
                    buffer._items.append(Experience(
                        obs=Observation(env=data["env"][i], vehicle=data["vehicle"][i]),
                        action=int(data["action"][i]), reward=float(data["reward"][i]),
                        step_index=int(data["step_index"][i]),
                        episode_length=int(data["episode_length"][i]),
                        importance_weight=float(data["importance_weight"][i]),
                        policy_prob=None if np.isnan(probs[i]) else float(probs[i]),
                        tag=int(data["tag"][i]),
                    ))
        except (KeyError, ValueError) as exc:
            raise CheckpointFormatError(f"{path} is not a replay buffer archive: {exc}") from exc
        buffer._next_tag = next_tag
        return buffer


def push(buffer: ReplayBuffer, experiences: Sequence[Experience]) -> None:
    buffer.push(experiences)


def make_batch(buffer: ReplayBuffer, latest: Sequence[Experience], batch_size: int,
               rng: np.random.Generator) -> Batch:
    """Latest episode first, padded from the buffer up to batch_size, then shuffled.

    A latest episode longer than batch_size keeps only its most recent steps.
    """
    latest = list(latest)
    if len(latest) >= batch_size:
        chosen = latest[-batch_size:]
    else:
        chosen = latest + buffer.sample(batch_size - len(latest), rng)
    order = rng.permutation(len(chosen))
    batch = [chosen[i] for i in order]
    return Batch(batch, small=len(batch) < batch_size)
