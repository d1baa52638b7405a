import logging
from abc import ABC, abstractmethod
from typing import Tuple, Union

import numpy as np

from models.data_models import ControlInput, Method, VehicleState


class BaseAgent(ABC):
    def __init__(self, agent_id: str):
        self.agent_id = agent_id
        self.logger = logging.getLogger(f"agents.{agent_id}")

    def log(self, message: str, level: int = logging.INFO):
        """Log agent activity"""
        self.logger.log(level, "[%s] %s", self.agent_id, message)


class BaseController(BaseAgent):
    """Something that picks an angular rate every simulator tick"""
    method: Method

    @abstractmethod
    def reset(self, env, start: VehicleState, goal: Tuple[float, float],
              rng: np.random.Generator) -> None:
        """Prepare for a new episode - must be implemented by subclasses"""
        pass

    @abstractmethod
    def act(self, state: VehicleState, t: float) -> Union[ControlInput, float]:
        """Control for the current tick - must be implemented by subclasses"""
        pass
