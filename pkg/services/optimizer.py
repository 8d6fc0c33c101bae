import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from exceptions import GradientError
from services.autodiff import Tensor

logger = logging.getLogger(__name__)


class SgdState(BaseModel):
    """Stochastic gradient descent with classic momentum."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    learning_rate: float = Field(gt=0)
    momentum: float = Field(default=0.0, ge=0, lt=1)
    velocity: dict[str, np.ndarray] = Field(default_factory=dict)


def sgd_step(params: dict[str, Tensor], state: SgdState) -> SgdState:
    """
    v <- momentum * v + g ; p <- p - lr * v, then clear the gradients.
    Every parameter must carry a gradient.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise GradientError(f"no gradient for parameter(s): {', '.join(missing)}")

    for name, p in params.items():
        velocity = state.velocity.get(name)
        if velocity is None:
            velocity = np.zeros_like(p.data)
        elif velocity.shape != p.shape:
            raise GradientError(f"velocity shape {velocity.shape} does not match parameter {name} {p.shape}")
        velocity = state.momentum * velocity + p.grad
        state.velocity[name] = velocity
        p.data = p.data - state.learning_rate * velocity
        p.grad = None
    return state
