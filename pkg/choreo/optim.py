"""
Optimiseurs : Adam (générateur, classifieurs) et SGD simple (discriminateur).

Les moments d'Adam et le compteur de pas sont exportables sous forme de
tableaux nommés pour être stockés dans les checkpoints.
"""

import logging
from collections import OrderedDict
from typing import Dict, List, Optional

import numpy as np

from .exceptions import ConfigError, NumericalError, ShapeError
from .tensor import Parameter

logger = logging.getLogger(__name__)


def _check_grad(param: Parameter):
    if param.grad is None:
        return np.zeros_like(param.data)
    if not np.all(np.isfinite(param.grad)):
        raise NumericalError(
            f"Gradient non fini pour {param.name or param.shape}",
            {'parameter': param.name, 'grad_norm': float(np.linalg.norm(np.nan_to_num(param.grad)))},
        )
    return param.grad


def sgd_update(param: Parameter, lr: float):
    """p <- p - lr * g"""
    grad = _check_grad(param)
    param.data -= lr * grad


def adam_update(param: Parameter, state: dict, lr: float, step: int,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Pas d'Adam avec correction de biais ; step commence à 1"""
    grad = _check_grad(param)
    m = state.setdefault('m', np.zeros_like(param.data))
    v = state.setdefault('v', np.zeros_like(param.data))
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad ** 2
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Optimizer:
    def __init__(self, params: List[Parameter], lr: float):
        if lr <= 0:
            raise ConfigError(f"Taux d'apprentissage invalide : {lr}")
        self.params = list(params)
        self.lr = lr
        self.step_count = 0

    def zero_grad(self):
        for param in self.params:
            param.zero_grad()

    def step(self):
        raise NotImplementedError

    def _key(self, index: int, param: Parameter) -> str:
        return param.name or f"param{index}"

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        return OrderedDict({f"{prefix}.step": np.array(float(self.step_count))})

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str):
        key = f"{prefix}.step"
        if key in state:
            self.step_count = int(state[key])


class SGD(Optimizer):
    def step(self):
        for param in self.params:
            _check_grad(param)
        self.step_count += 1
        for param in self.params:
            sgd_update(param, self.lr)


class Adam(Optimizer):
    def __init__(self, params: List[Parameter], lr: float, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"Coefficients d'Adam invalides : {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.moments: List[dict] = [{} for _ in self.params]

    def step(self):
        # Vérifie tous les gradients avant de modifier le moindre paramètre
        for param in self.params:
            _check_grad(param)
        self.step_count += 1
        for param, state in zip(self.params, self.moments):
            adam_update(param, state, self.lr, self.step_count, self.beta1, self.beta2, self.eps)

    def state_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        state = super().state_dict(prefix)
        for index, (param, moments) in enumerate(zip(self.params, self.moments)):
            key = self._key(index, param)
            state[f"{prefix}.m.{key}"] = moments.get('m', np.zeros_like(param.data))
            state[f"{prefix}.v.{key}"] = moments.get('v', np.zeros_like(param.data))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str):
        super().load_state_dict(state, prefix)
        for index, (param, moments) in enumerate(zip(self.params, self.moments)):
            key = self._key(index, param)
            for slot in ('m', 'v'):
                stored: Optional[np.ndarray] = state.get(f"{prefix}.{slot}.{key}")
                if stored is None:
                    continue
                if stored.shape != param.shape:
                    raise ShapeError(f"Moment {slot} de {key} : forme {stored.shape} au lieu de {param.shape}")
                moments[slot] = np.array(stored, dtype=np.float64)
