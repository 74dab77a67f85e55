"""
Moteur de tenseurs différentiables (différentiation automatique en mode inverse).

Chaque opération produit un nouveau Tensor qui garde une référence vers ses
parents et une fonction de rétropropagation. backward() parcourt ce graphe
dans l'ordre topologique inverse et accumule les gradients dans les feuilles.
Toutes les données sont en float64.
"""

import contextlib
import itertools
import logging
import threading
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from .exceptions import NumericalError, ShapeError

logger = logging.getLogger(__name__)

_node_ids = itertools.count()
_state = threading.local()

Scalar = Union[int, float]


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextlib.contextmanager
def no_grad():
    """Désactive l'enregistrement du graphe (inférence, différences finies)"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Tableau multidimensionnel float64 avec historique de calcul"""

    __slots__ = ('data', 'grad', 'requires_grad', 'node_id', 'name', '_parents', '_backward')

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: Tuple['Tensor', ...] = ()
        self._backward: Optional[Callable] = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        backward(self)

    # Opérateurs arithmétiques
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """Feuille entraînable ; le nom est attribué par le Module propriétaire"""

    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=False)
    if track:
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"Formes incompatibles : {a.shape} et {b.shape}") from None


# ============================================================================
# OPÉRATIONS ÉLÉMENT PAR ÉLÉMENT
# ============================================================================

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _result(a.data + b.data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward_fn(grad):
        return _unbroadcast(grad, a.shape), -_unbroadcast(grad, b.shape)

    return _result(a.data - b.data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward_fn(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda grad: (-grad,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda grad: (grad * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, slope)
    return _result(a.data * factor, (a,), lambda grad: (grad * factor,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda grad: (grad * (1.0 - out ** 2),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _result(out, (a,), lambda grad: (grad * out * (1.0 - out),))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda grad: (grad * np.sign(a.data),))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda grad: (grad / a.data,))


def clip(a, low: float, high: float) -> Tensor:
    """Écrêtage ; le gradient ne passe qu'à l'intérieur de [low, high]"""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda grad: (grad * inside,))


_ELEMENTWISE = {
    'add': add,
    'sub': sub,
    'mul': mul,
    'relu': relu,
    'leaky_relu': leaky_relu,
    'tanh': tanh,
    'sigmoid': sigmoid,
    'abs': tabs,
}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Point d'entrée générique : elementwise('relu', x), elementwise('add', x, y)"""
    try:
        op = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"Opération inconnue : {op_kind}") from None
    if op_kind in ('add', 'sub', 'mul'):
        if b is None:
            raise ValueError(f"L'opération {op_kind} attend deux opérandes")
        return op(a, b)
    return op(a)


# ============================================================================
# RÉDUCTIONS ET MANIPULATION DE FORMES
# ============================================================================

def _normalize_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward_fn(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, a.shape).copy(),)

    return _result(out, (a,), backward_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda grad: (grad.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda grad: (np.transpose(grad, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"Concaténation impossible : {[t.shape for t in tensors]}") from None
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(grad):
        return tuple(np.split(grad, splits, axis=axis))

    return _result(out, tensors, backward_fn)


def take(a, indices, axis: int = 0) -> Tensor:
    """Sélection de lignes (table d'embedding) ; les indices peuvent se répéter"""
    a = as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, indices, axis=axis)

    def backward_fn(grad):
        full = np.zeros(np.moveaxis(a.data, axis, 0).shape)
        moved = np.moveaxis(grad, axis, 0).reshape((indices.size,) + full.shape[1:])
        np.add.at(full, indices.reshape(-1), moved)
        return (np.moveaxis(full, 0, axis),)

    return _result(out, (a,), backward_fn)


# ============================================================================
# PRODUITS ET CONVOLUTIONS
# ============================================================================

def _contraction_axes(a: Tensor, b: Tensor, axes) -> Tuple[List[int], List[int]]:
    if isinstance(axes, int):
        axes_a = list(range(a.ndim - axes, a.ndim))
        axes_b = list(range(axes))
    else:
        axes_a, axes_b = axes
        axes_a = [ax % a.ndim for ax in np.atleast_1d(axes_a)]
        axes_b = [ax % b.ndim for ax in np.atleast_1d(axes_b)]
    if len(axes_a) != len(axes_b):
        raise ShapeError(f"Nombre d'axes contractés différent : {a.shape} et {b.shape}")
    for ax_a, ax_b in zip(axes_a, axes_b):
        if a.shape[ax_a] != b.shape[ax_b]:
            raise ShapeError(
                f"Axes contractés de longueurs différentes : {a.shape}[{ax_a}] et {b.shape}[{ax_b}]"
            )
    return axes_a, axes_b


def tensordot(a, b, axes=2) -> Tensor:
    """Produit matriciel généralisé (np.tensordot) avec gradients vers les deux opérandes"""
    a, b = as_tensor(a), as_tensor(b)
    axes_a, axes_b = _contraction_axes(a, b, axes)
    free_a = [ax for ax in range(a.ndim) if ax not in axes_a]
    free_b = [ax for ax in range(b.ndim) if ax not in axes_b]
    out = np.tensordot(a.data, b.data, axes=(axes_a, axes_b))

    def backward_fn(grad):
        n_free_a = len(free_a)
        # d/da : contracte grad avec b sur les axes libres de b
        partial_a = np.tensordot(grad, b.data, axes=(list(range(n_free_a, grad.ndim)), free_b))
        source_a = free_a + [axes_a[axes_b.index(ax)] for ax in sorted(axes_b)]
        grad_a = np.transpose(partial_a, np.argsort(source_a))
        # d/db : contracte a avec grad sur les axes libres de a
        partial_b = np.tensordot(a.data, grad, axes=(free_a, list(range(n_free_a))))
        source_b = [axes_b[axes_a.index(ax)] for ax in sorted(axes_a)] + free_b
        grad_b = np.transpose(partial_b, np.argsort(source_b))
        return grad_a, grad_b

    return _result(out, (a, b), backward_fn)


def _temporal_kernel(w: Tensor, name: str) -> np.ndarray:
    if w.ndim == 4:
        if w.shape[3] != 1:
            raise ShapeError(f"{name} : l'extension spatiale du noyau doit valoir 1, reçu {w.shape}")
        return w.data[..., 0]
    if w.ndim == 3:
        return w.data
    raise ShapeError(f"{name} : noyau de forme inattendue {w.shape}")


def _batched(x: Tensor, fn: Callable[[Tensor], Tensor]) -> Tensor:
    if x.ndim == 3:
        out = fn(reshape(x, (1,) + x.shape))
        return reshape(out, out.shape[1:])
    if x.ndim != 4:
        raise ShapeError(f"Entrée (C,T,V) ou (B,C,T,V) attendue, reçu {x.shape}")
    return fn(x)


def conv2d(x, w, bias=None, stride_t: int = 1, pad_t: int = 0) -> Tensor:
    """
    Convolution temporelle (noyau k_t x 1) sur x de forme (C_in,T,V) ou (B,C_in,T,V).

    w : (C_out, C_in, k_t[, 1]) ; T_out = floor((T + 2*pad_t - k_t)/stride_t) + 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = as_tensor(bias) if bias is not None else None
    return _batched(x, lambda xb: _conv2d(xb, w, bias, stride_t, pad_t))


def _conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor], stride: int, pad: int) -> Tensor:
    kernel = _temporal_kernel(w, 'conv2d')
    c_out, c_in, k_t = kernel.shape
    batch, channels, length, vertices = x.shape
    if channels != c_in:
        raise ShapeError(f"conv2d : {c_in} canaux attendus, entrée {x.shape}, noyau {w.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"conv2d : stride={stride} et pad={pad} invalides")
    padded_length = length + 2 * pad
    if k_t > padded_length:
        raise ShapeError(f"conv2d : noyau {k_t} plus long que l'entrée remplie ({padded_length})")
    t_out = (padded_length - k_t) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    span = stride * (t_out - 1) + 1

    out = np.zeros((batch, c_out, t_out, vertices))
    for k in range(k_t):
        out += np.einsum('bctv,oc->botv', xp[:, :, k:k + span:stride, :], kernel[:, :, k])
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1)

    def backward_fn(grad):
        grad_xp = np.zeros_like(xp)
        grad_kernel = np.zeros_like(kernel)
        for k in range(k_t):
            window = xp[:, :, k:k + span:stride, :]
            grad_kernel[:, :, k] = np.einsum('botv,bctv->oc', grad, window)
            grad_xp[:, :, k:k + span:stride, :] += np.einsum('botv,oc->bctv', grad, kernel[:, :, k])
        grad_x = grad_xp[:, :, pad:pad + length, :]
        grads = [grad_x, grad_kernel.reshape(w.shape)]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, backward_fn)


def transposed_conv2d(x, w, bias=None, stride_t: int = 2, pad_t: int = 1) -> Tensor:
    """
    Convolution transposée temporelle ; w : (C_in, C_out, k_t[, 1]).

    T_out = (T - 1)*stride_t - 2*pad_t + k_t, soit 2T pour k_t=4, stride 2, pad 1.
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = as_tensor(bias) if bias is not None else None
    return _batched(x, lambda xb: _transposed_conv2d(xb, w, bias, stride_t, pad_t))


def _transposed_conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor], stride: int, pad: int) -> Tensor:
    kernel = _temporal_kernel(w, 'transposed_conv2d')
    c_in, c_out, k_t = kernel.shape
    batch, channels, length, vertices = x.shape
    if channels != c_in:
        raise ShapeError(f"transposed_conv2d : {c_in} canaux attendus, entrée {x.shape}, noyau {w.shape}")
    full_length = (length - 1) * stride + k_t
    t_out = full_length - 2 * pad
    if t_out < 1:
        raise ShapeError(f"transposed_conv2d : sortie vide pour T={length}")
    span = stride * (length - 1) + 1

    full = np.zeros((batch, c_out, full_length, vertices))
    for k in range(k_t):
        full[:, :, k:k + span:stride, :] += np.einsum('bctv,co->botv', x.data, kernel[:, :, k])
    out = full[:, :, pad:pad + t_out, :].copy()
    if bias is not None:
        out += bias.data.reshape(1, c_out, 1, 1)

    def backward_fn(grad):
        grad_full = np.zeros((batch, c_out, full_length, vertices))
        grad_full[:, :, pad:pad + t_out, :] = grad
        grad_x = np.zeros_like(x.data)
        grad_kernel = np.zeros_like(kernel)
        for k in range(k_t):
            window = grad_full[:, :, k:k + span:stride, :]
            grad_x += np.einsum('botv,co->bctv', window, kernel[:, :, k])
            grad_kernel[:, :, k] = np.einsum('bctv,botv->co', x.data, window)
        grads = [grad_x, grad_kernel.reshape(w.shape)]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, backward_fn)


# ============================================================================
# NORMALISATION, DROPOUT, PERTES
# ============================================================================

def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """
    Normalisation par lot sur les axes (B, T, V) d'une entrée (B,C,T,V).

    En entraînement, les statistiques courantes sont mises à jour en place :
    running = momentum*running + (1-momentum)*batch.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4 or x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batch_norm : entrée {x.shape} et gamma {gamma.shape} incompatibles")
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    count = x.shape[0] * x.shape[2] * x.shape[3]

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * unbiased
    else:
        mu, var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = x_hat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward_fn(grad):
        grad_gamma = (grad * x_hat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        grad_x_hat = grad * gamma.data.reshape(shape)
        if training:
            grad_x = (inv_std.reshape(shape) / count) * (
                count * grad_x_hat
                - grad_x_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_x_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_x_hat * inv_std.reshape(shape)
        return grad_x, grad_gamma, grad_beta

    return _result(out, (x, gamma, beta), backward_fn)


def dropout(x, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    x = as_tensor(x)
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout actif sans générateur aléatoire")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * mask, (x,), lambda grad: (grad * mask,))


def cross_entropy(logits, labels) -> Tensor:
    """Entropie croisée moyenne ; logits (B, K), labels entiers (B,)"""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy : logits {logits.shape} et labels {labels.shape}")
    log_probs = special.log_softmax(logits.data, axis=1)
    rows = np.arange(labels.size)
    loss = -log_probs[rows, labels].mean()

    def backward_fn(grad):
        probs = np.exp(log_probs)
        probs[rows, labels] -= 1.0
        return (grad * probs / labels.size,)

    return _result(np.array(loss), (logits,), backward_fn)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    return special.softmax(np.asarray(logits, dtype=np.float64), axis=axis)


# ============================================================================
# RÉTROPROPAGATION
# ============================================================================

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.node_id not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor):
    """Calcule d(loss)/d(feuille) pour toutes les feuilles atteignables"""
    if loss.size != 1:
        raise ShapeError(f"backward attend une perte scalaire, reçu {loss.shape}")
    if not loss.requires_grad:
        return
    loss.grad = np.ones_like(loss.data)
    for node in reversed(_topological_order(loss)):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, grad in zip(node._parents, grads):
            if grad is not None and parent.requires_grad:
                parent._accumulate(grad)


def gradcheck(fn: Callable[[], Tensor], inputs: Iterable[Tensor], h: float = 1e-5) -> float:
    """
    Compare les gradients analytiques aux différences finies centrées.

    Retourne l'erreur relative maximale (norme infinie de l'écart rapportée à
    la norme infinie du gradient) sur l'ensemble des entrées.
    """
    inputs = list(inputs)
    for tensor in inputs:
        tensor.zero_grad()
    loss = fn()
    backward(loss)
    worst = 0.0
    for tensor in inputs:
        analytic = tensor.grad.copy()
        numeric = np.zeros_like(tensor.data)
        with no_grad():
            for index in np.ndindex(tensor.shape):
                original = tensor.data[index]
                tensor.data[index] = original + h
                plus = fn().item()
                tensor.data[index] = original - h
                minus = fn().item()
                tensor.data[index] = original
                numeric[index] = (plus - minus) / (2.0 * h)
        scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-10)
        error = np.abs(analytic - numeric).max(initial=0.0) / scale
        logger.debug(f"gradcheck {tensor.name or tensor.shape}: erreur relative {error:.2e}")
        worst = max(worst, error)
    return worst


def check_finite(value: float, what: str, diagnostics: Optional[dict] = None) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"Valeur non finie pour {what} : {value}", diagnostics)
    return value
