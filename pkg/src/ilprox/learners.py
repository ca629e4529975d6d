"""One-iteration training steps for every supported algorithm.

Each learner maps (params, x, y) to updated params plus a TrainRecord.
The family tree:

* bp_sgd / bp_adam -- explicit gradient steps; targets computed by the
  backward local-target recursion, pre-synaptic factor f(h_n).
* il_sgd / il_adam -- relax activities against the free energy (full
  output clamp, post-activation predictions, 25 sweeps), then take the
  local error-gradient (LMS) step with pre-synaptic factor f(hhat_n).
* il_prox / il_prox_fast / il_prox_adam -- relax with a soft output
  clamp and pre-activation predictions, then apply the normalized
  (NLMS) step; the learning rate only sets how far the output target
  moves toward y.
* bp_prox -- control: soft clamp plus NLMS like il_prox, but targets and
  pre-synaptic factors come from feedforward activities.

Mini-batches larger than 1 average the raw gradients over the batch;
normalized rules additionally scale by the batch-average normalized
step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .energy import (
    Clamp,
    GammaConfig,
    PredictionMode,
    run_inference,
)
from .linalg import DimensionError
from .nn import (
    Activation,
    LossKind,
    NetworkParams,
    activation_deriv,
    feedforward,
    loss_grad,
    loss_value,
    presynaptic,
)


class AlgorithmKind(Enum):
    BP_SGD = "bp_sgd"
    BP_ADAM = "bp_adam"
    IL_SGD = "il_sgd"
    IL_ADAM = "il_adam"
    IL_PROX = "il_prox"
    IL_PROX_FAST = "il_prox_fast"
    IL_PROX_ADAM = "il_prox_adam"
    BP_PROX = "bp_prox"


PROX_ALGOS = {AlgorithmKind.IL_PROX, AlgorithmKind.IL_PROX_FAST,
              AlgorithmKind.IL_PROX_ADAM, AlgorithmKind.BP_PROX}
ADAM_ALGOS = {AlgorithmKind.BP_ADAM, AlgorithmKind.IL_ADAM,
              AlgorithmKind.IL_PROX_ADAM}


@dataclass
class AdamState:
    """Per-matrix first/second moments with bias correction."""

    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams) -> "AdamState":
        return cls(m=[np.zeros_like(w) for w in params.layers],
                   v=[np.zeros_like(w) for w in params.layers])


@dataclass
class TrainRecord:
    iteration: int
    loss: float
    correct: bool
    update_norm: float
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.update_norm < 0:
            raise ValueError("update_norm must be >= 0")


@dataclass
class TrainConfig:
    """Hyper-parameters shared by the learners."""

    algo: AlgorithmKind
    lr: float
    loss: LossKind = LossKind.SOFTMAX_CE
    activation: Activation = Activation.RELU
    epsilon: float = 0.0
    gamma_bot: float = 0.015
    gamma_top: float = 0.015
    beta: float = 1.0
    steps: int | None = None

    def inference_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return 12 if self.algo is AlgorithmKind.IL_PROX_FAST else 25


def bp_local_targets(params: NetworkParams, act: Activation, h: list,
                     loss: LossKind, y: np.ndarray) -> list:
    """Backward local targets hhat_n = h_n - dL/dh_n.

    The recursion carries e_n = -dL/dh_n: e_N comes from the loss
    gradient and e_n = f'(h_n) * (W_n^T e_{n+1}).
    """
    n_layers = params.n_layers
    hhat = [None] * (n_layers + 1)
    e_next = -loss_grad(loss, h[n_layers], y)
    hhat[n_layers] = h[n_layers] + e_next
    for n in range(n_layers - 1, 0, -1):
        w = params.layers[n]
        w_main = w[:, :-1] if params.use_bias else w
        e_next = activation_deriv(act, h[n]) * (w_main.T @ e_next)
        hhat[n] = h[n] + e_next
    hhat[0] = h[0]
    return hhat


def lms_update(w: np.ndarray, e_next: np.ndarray, pre: np.ndarray,
               alpha: float) -> np.ndarray:
    """W + alpha * outer(e_{n+1}, pre)."""
    if w.shape != (e_next.shape[0], pre.shape[0]):
        raise DimensionError(f"lms_update: W {w.shape} vs outer "
                             f"({e_next.shape[0]}, {pre.shape[0]})")
    return w + alpha * np.outer(e_next, pre)


def nlms_update(w: np.ndarray, e_next: np.ndarray, pre: np.ndarray,
                epsilon: float = 0.0) -> np.ndarray:
    """W + outer(e_{n+1}, pre) / (||pre||^2 + epsilon).

    With epsilon = 0 this is the minimum-norm matrix satisfying
    W' pre = W pre + e_{n+1} (exact interpolation at mini-batch 1).
    """
    if w.shape != (e_next.shape[0], pre.shape[0]):
        raise DimensionError(f"nlms_update: W {w.shape} vs outer "
                             f"({e_next.shape[0]}, {pre.shape[0]})")
    return w + np.outer(e_next, pre) / (float(pre @ pre) + epsilon)


def adam_step(adam: AdamState, grads: list, lr: float) -> list:
    """Standard bias-corrected Adam deltas for the supplied raw gradients.

    Mutates the moment state and returns the per-matrix parameter deltas
    (-lr * mhat / (sqrt(vhat) + eps)).
    """
    if len(grads) != len(adam.m):
        raise DimensionError("adam_step: gradient count mismatch")
    adam.t += 1
    deltas = []
    for i, g in enumerate(grads):
        if g.shape != adam.m[i].shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} vs "
                                 f"moment {adam.m[i].shape}")
        adam.m[i] = adam.beta1 * adam.m[i] + (1 - adam.beta1) * g
        adam.v[i] = adam.beta2 * adam.v[i] + (1 - adam.beta2) * g * g
        m_hat = adam.m[i] / (1 - adam.beta1 ** adam.t)
        v_hat = adam.v[i] / (1 - adam.beta2 ** adam.t)
        deltas.append(-lr * m_hat / (np.sqrt(v_hat) + adam.eps))
    return deltas


def _raw_gradients(algo: AlgorithmKind, params: NetworkParams,
                   config: TrainConfig, x: np.ndarray, y: np.ndarray):
    """Per-matrix loss gradients (negated update directions) plus the
    feedforward output used for metrics."""
    act = config.activation
    n_layers = params.n_layers
    if algo in (AlgorithmKind.BP_SGD, AlgorithmKind.BP_ADAM):
        h = feedforward(params, act, x)
        hhat = bp_local_targets(params, act, h, config.loss, y)
        grads = []
        for n in range(n_layers):
            e_next = hhat[n + 1] - h[n + 1]
            pre = presynaptic(params, act, n, h[n])
            grads.append(-np.outer(e_next, pre))
        return grads, h[n_layers], None

    if algo in (AlgorithmKind.IL_SGD, AlgorithmKind.IL_ADAM):
        gammas = GammaConfig.practical(config.gamma_bot, config.gamma_top,
                                       beta=config.beta,
                                       steps=config.inference_steps(),
                                       clamp=Clamp.full())
        state = run_inference(params, act, gammas, config.loss, x, y,
                              mode=PredictionMode.POST_ACTIVATION)
        grads = []
        for n in range(n_layers):
            e_next = state.hhat[n + 1] - state.p[n + 1]
            pre = presynaptic(params, act, n, state.hhat[n])
            grads.append(-np.outer(e_next, pre))
        return grads, state.h[n_layers], state

    if algo in (AlgorithmKind.IL_PROX, AlgorithmKind.IL_PROX_FAST,
                AlgorithmKind.IL_PROX_ADAM):
        gammas = GammaConfig.practical(config.gamma_bot, config.gamma_top,
                                       beta=config.beta,
                                       steps=config.inference_steps(),
                                       clamp=Clamp.soft(config.lr))
        state = run_inference(params, act, gammas, config.loss, x, y,
                              mode=PredictionMode.PRE_ACTIVATION)
        grads = []
        for n in range(n_layers):
            pre = presynaptic(params, act, n, state.hhat[n])
            e_next = state.hhat[n + 1] - params.layers[n] @ pre
            scale = 1.0 / (float(pre @ pre) + config.epsilon)
            grads.append(-scale * np.outer(e_next, pre))
        return grads, state.h[n_layers], state

    if algo is AlgorithmKind.BP_PROX:
        h = feedforward(params, act, x)
        pre_out = presynaptic(params, act, n_layers - 1, h[n_layers - 1])
        s = float(pre_out @ pre_out)
        w_y = s * config.lr / (1.0 + s * config.lr)
        hhat_out = w_y * y + (1.0 - w_y) * h[n_layers]
        # backward targets seeded by the clamped output error
        hhat = [None] * (n_layers + 1)
        hhat[n_layers] = hhat_out
        e_next = hhat_out - h[n_layers]
        for n in range(n_layers - 1, 0, -1):
            w = params.layers[n]
            w_main = w[:, :-1] if params.use_bias else w
            e_next = activation_deriv(act, h[n]) * (w_main.T @ e_next)
            hhat[n] = h[n] + e_next
        hhat[0] = h[0]
        grads = []
        for n in range(n_layers):
            e_n1 = hhat[n + 1] - h[n + 1]
            pre = presynaptic(params, act, n, h[n])
            scale = 1.0 / (float(pre @ pre) + config.epsilon)
            grads.append(-scale * np.outer(e_n1, pre))
        return grads, h[n_layers], None

    raise ValueError(f"unsupported algorithm {algo}")


def _classification_correct(output: np.ndarray, y: np.ndarray) -> bool:
    return bool(np.argmax(output) == np.argmax(y))


def train_step(algo: AlgorithmKind, params: NetworkParams,
               adam: AdamState | None, config: TrainConfig,
               x: np.ndarray, y: np.ndarray,
               iteration: int = 0) -> tuple[NetworkParams, TrainRecord]:
    """One mini-batch-1 training step; returns new params and diagnostics.

    The recorded loss and correctness are measured on the feedforward
    output before the update.
    """
    if algo in ADAM_ALGOS and adam is None:
        raise ValueError(f"{algo.value} requires an AdamState")
    grads, output, _state = _raw_gradients(algo, params, config, x, y)
    if algo in ADAM_ALGOS:
        deltas = adam_step(adam, grads, config.lr)
    elif algo in PROX_ALGOS:
        deltas = [-g for g in grads]  # normalized rules embed their step size
    else:
        deltas = [-config.lr * g for g in grads]
    new_layers = [w + d for w, d in zip(params.layers, deltas)]
    update_norm = float(np.sqrt(sum(float(np.sum(d * d)) for d in deltas)))
    rec = TrainRecord(
        iteration=iteration,
        loss=loss_value(config.loss, output, y),
        correct=_classification_correct(output, y),
        update_norm=update_norm,
    )
    return NetworkParams(new_layers, params.use_bias), rec


def train_batch(algo: AlgorithmKind, params: NetworkParams,
                adam: AdamState | None, config: TrainConfig,
                xs: np.ndarray, ys: np.ndarray,
                iteration: int = 0) -> tuple[NetworkParams, TrainRecord]:
    """Mini-batch step: average raw gradients across the batch.

    Normalized rules carry their step size inside the per-sample
    gradients, so averaging the gradients also averages the normalized
    learning rates.
    """
    if xs.ndim == 1:
        return train_step(algo, params, adam, config, xs, ys, iteration)
    if len(xs) == 1:
        return train_step(algo, params, adam, config, xs[0], ys[0], iteration)
    if algo in ADAM_ALGOS and adam is None:
        raise ValueError(f"{algo.value} requires an AdamState")
    acc = None
    losses = []
    n_correct = 0
    for x, y in zip(xs, ys):
        grads, output, _ = _raw_gradients(algo, params, config, x, y)
        acc = grads if acc is None else [a + g for a, g in zip(acc, grads)]
        losses.append(loss_value(config.loss, output, y))
        n_correct += _classification_correct(output, y)
    grads = [a / len(xs) for a in acc]
    if algo in ADAM_ALGOS:
        deltas = adam_step(adam, grads, config.lr)
    elif algo in PROX_ALGOS:
        deltas = [-g for g in grads]
    else:
        deltas = [-config.lr * g for g in grads]
    new_layers = [w + d for w, d in zip(params.layers, deltas)]
    update_norm = float(np.sqrt(sum(float(np.sum(d * d)) for d in deltas)))
    rec = TrainRecord(iteration=iteration, loss=float(np.mean(losses)),
                      correct=n_correct > len(xs) / 2,
                      update_norm=update_norm,
                      extras={"batch_accuracy": n_correct / len(xs)})
    return NetworkParams(new_layers, params.use_bias), rec


def bp_prox_step(params: NetworkParams, act: Activation, config: TrainConfig,
                 x: np.ndarray, y: np.ndarray,
                 iteration: int = 0) -> tuple[NetworkParams, TrainRecord]:
    """Convenience wrapper running one BP_PROX step with the given activation."""
    cfg = TrainConfig(algo=AlgorithmKind.BP_PROX, lr=config.lr, loss=config.loss,
                      activation=act, epsilon=config.epsilon)
    return train_step(AlgorithmKind.BP_PROX, params, None, cfg, x, y, iteration)
