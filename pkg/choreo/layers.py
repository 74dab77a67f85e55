"""
Couches entraînables construites sur le moteur de tenseurs.

Module découvre ses paramètres, ses tampons et ses sous-modules dans l'ordre
de déclaration des attributs ; les noms sont des chemins pointés
('gen.blocks.0.temporal.weight').
"""

import contextlib
import logging
import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .exceptions import ConfigError, ShapeError
from .tensor import Parameter, Tensor

logger = logging.getLogger(__name__)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Initialisation uniforme dans ±sqrt(1/fan_in)"""
    bound = math.sqrt(1.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Classe de base des réseaux"""

    training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for index, item in enumerate(value):
                    yield f"{name}.{index}", item

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        for name, value in self._children():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            else:
                yield from value.named_parameters(prefix=f"{path}.")

    def named_buffers(self, prefix: str = '') -> Iterator[Tuple[str, np.ndarray]]:
        for name in getattr(self, '_buffer_names', ()):
            yield f"{prefix}{name}", getattr(self, name)
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix=f"{prefix}{name}.")

    def modules(self) -> Iterator['Module']:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def register_buffer(self, name: str, value: np.ndarray):
        names = list(getattr(self, '_buffer_names', ()))
        if name not in names:
            names.append(name)
        self._buffer_names = tuple(names)
        setattr(self, name, value)

    def train(self, mode: bool = True) -> 'Module':
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> 'Module':
        return self.train(False)

    @contextlib.contextmanager
    def evaluating(self):
        """Mode inférence temporaire ; restaure le mode de chaque sous-module"""
        modes = [(module, module.training) for module in self.modules()]
        self.eval()
        try:
            yield self
        finally:
            for module, mode in modes:
                module.training = mode

    def zero_grad(self):
        for param in self.parameters():
            param.zero_grad()

    def assign_names(self, root: str):
        """Fixe le nom complet de chaque paramètre et vérifie leur unicité"""
        seen = set()
        for name, param in self.named_parameters(prefix=f"{root}."):
            if name in seen:
                raise ConfigError(f"Nom de paramètre dupliqué : {name}")
            seen.add(name)
            param.name = name
        return self

    def state_dict(self, prefix: str = '') -> Dict[str, np.ndarray]:
        state = OrderedDict()
        for name, param in self.named_parameters(prefix=prefix):
            state[name] = param.data
        for name, buffer in self.named_buffers(prefix=prefix):
            state[name] = buffer
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], prefix: str = ''):
        expected = self.state_dict(prefix=prefix)
        missing = [name for name in expected if name not in state]
        if missing:
            raise ShapeError(f"Paramètres absents du checkpoint : {missing[:5]}")
        for name, target in expected.items():
            source = np.asarray(state[name], dtype=np.float64)
            if source.shape != target.shape:
                raise ShapeError(f"{name} : forme {source.shape} au lieu de {target.shape}")
            target[...] = source

    def num_parameters(self) -> int:
        return sum(param.size for param in self.parameters())


class Conv2d(Module):
    """Convolution temporelle (noyau k_t x 1)"""

    def __init__(self, in_channels: int, out_channels: int, kernel_t: int = 1, stride_t: int = 1,
                 pad_t: int = 0, bias: bool = True, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel_t
        self.stride_t = stride_t
        self.pad_t = pad_t
        self.weight = Parameter(uniform_init(rng, (out_channels, in_channels, kernel_t, 1), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride_t=self.stride_t, pad_t=self.pad_t)


class ConvTranspose2d(Module):
    """Convolution transposée qui double exactement la dimension temporelle"""

    def __init__(self, in_channels: int, out_channels: int, kernel_t: int = 4, stride_t: int = 2,
                 pad_t: int = 1, bias: bool = True, rng: Optional[np.random.Generator] = None):
        # (T-1)*s - 2p + k == 2T pour tout T  <=>  s == 2 et k - 2p == 2
        if stride_t != 2 or kernel_t - 2 * pad_t != 2:
            raise ConfigError(
                f"Convolution transposée (k={kernel_t}, stride={stride_t}, pad={pad_t}) "
                f"ne double pas la dimension temporelle"
            )
        rng = rng or np.random.default_rng()
        fan_in = in_channels * kernel_t
        self.stride_t = stride_t
        self.pad_t = pad_t
        self.weight = Parameter(uniform_init(rng, (in_channels, out_channels, kernel_t, 1), fan_in))
        self.bias = Parameter(uniform_init(rng, (out_channels,), fan_in)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.transposed_conv2d(x, self.weight, self.bias, stride_t=self.stride_t, pad_t=self.pad_t)


class BatchNorm(Module):
    """Normalisation par lot sur (B, T, V), momentum 0.9, eps 1e-5"""

    def __init__(self, channels: int, momentum: float = 0.9, eps: float = 1e-5):
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


class Dropout(Module):
    """Actif en entraînement uniquement"""

    def __init__(self, p: float, rng: Optional[np.random.Generator] = None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"Probabilité de dropout invalide : {p}")
        self.p = p
        self.rng = rng or np.random.default_rng()

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.p, training=self.training, rng=self.rng)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: Optional[np.random.Generator] = None):
        rng = rng or np.random.default_rng()
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(uniform_init(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.add(T.tensordot(x, self.weight, axes=([x.ndim - 1], [0])), self.bias)
