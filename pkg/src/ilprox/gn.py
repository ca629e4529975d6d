"""Closed-form target computation for bias-free linear networks.

Targets here come from pseudo-inverse (Gauss-Newton style) updates on
activities instead of iterative relaxation:

* the ridge-form single-layer target, the fixed point of relaxing one
  hidden layer between a fixed upstream prediction and a fixed
  downstream target;
* the backward pseudo-inverse recursions that propagate an output-layer
  correction to every hidden layer -- one flavour chains each layer's
  target into the next local problem, the other keeps feedforward
  activities as the reference point;
* the rank-one weight steps that consume those targets.

Everything in this module operates on plain lists of weight matrices
(no bias columns): the supporting identities, e.g. that post-target
predictions land at (1 - gamma) h_n + gamma hhat_n, rely on W W^+ acting
as the identity, which bias augmentation would break.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .linalg import as_matrix, as_vector, pinv


class GnRule(Enum):
    IL_GN_LMS = "il_gn"  # pre-synaptic target activities
    BP_GN_LMS = "bp_gn"  # pre-synaptic feedforward activities


@dataclass(frozen=True)
class GnConfig:
    gamma: float = 0.9
    lam: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.lam < 0.0:
            raise ValueError("lam must be >= 0")


def linear_forward(weights: list, x: np.ndarray) -> list:
    """[h_0 .. h_N] for a bias-free linear chain."""
    h = [as_vector(x)]
    for w in weights:
        h.append(as_matrix(w) @ h[-1])
    return h


def il_closed_form_target(w: np.ndarray, hhat_next: np.ndarray, p_n: np.ndarray,
                          lam: float) -> np.ndarray:
    """Ridge-form hidden target:
    (W^T W + lam I)^-1 W^T hhat_{n+1} + lam (W^T W + lam I)^-1 p_n.

    This is the stationary point of 0.5||hhat_{n+1} - W u||^2 +
    (lam/2)||u - p_n||^2.  At lam = 0 it reduces to the pure
    pseudo-inverse target and requires full column rank.
    """
    w = as_matrix(w)
    hhat_next = as_vector(hhat_next)
    p_n = as_vector(p_n)
    if lam < 0:
        raise ValueError("lam must be >= 0")
    gram = w.T @ w + lam * np.eye(w.shape[1])
    if lam == 0.0 and np.linalg.matrix_rank(w) < w.shape[1]:
        raise np.linalg.LinAlgError("rank-deficient W at lam = 0")
    return np.linalg.solve(gram, w.T @ hhat_next + lam * p_n)


def il_gn_targets(weights: list, h: list, loss_grad_out: np.ndarray,
                  gamma: float) -> list:
    """Backward recursion hhat_n = h_n + Delta_n with Delta_N = -dL/dh_N
    and Delta_n = gamma W_n^+ Delta_{n+1}; hhat_0 = h_0."""
    n_layers = len(weights)
    delta = -as_vector(loss_grad_out)
    hhat = [None] * (n_layers + 1)
    hhat[n_layers] = h[n_layers] + delta
    for n in range(n_layers - 1, 0, -1):
        delta = gamma * (pinv(weights[n]) @ delta)
        hhat[n] = h[n] + delta
    hhat[0] = h[0]
    return hhat


def il_gn_errors(weights: list, hhat: list) -> list:
    """Local errors e_n = hhat_n - W_{n-1} hhat_{n-1}, n = 1..N (index 0
    is None).  After il_gn_targets on a non-expanding network these equal
    (1 - gamma)(hhat_n - h_n)."""
    return [None] + [hhat[n] - weights[n - 1] @ hhat[n - 1]
                     for n in range(1, len(hhat))]


def bp_gn_targets(weights: list, h: list, loss_grad_out: np.ndarray) -> list:
    """Backward recursion with feedforward-referenced errors:
    hhat_N = h_N - dL/dh_N, hhat_n = h_n + W_n^+ (hhat_{n+1} - h_{n+1})."""
    n_layers = len(weights)
    hhat = [None] * (n_layers + 1)
    hhat[n_layers] = h[n_layers] - as_vector(loss_grad_out)
    for n in range(n_layers - 1, 0, -1):
        hhat[n] = h[n] + pinv(weights[n]) @ (hhat[n + 1] - h[n + 1])
    hhat[0] = h[0]
    return hhat


def apply_gn_step(weights: list, h: list, hhat: list, rule: GnRule,
                  alpha: float) -> list:
    """Rank-one updates W_n + alpha * e_{n+1} pre_n^T.

    The two rules differ in the error convention and the pre-synaptic
    factor: target-chained updates use e_{n+1} = hhat_{n+1} - W_n hhat_n
    with pre = hhat_n; feedforward-referenced updates use
    e_{n+1} = hhat_{n+1} - h_{n+1} with pre = h_n.
    """
    out = []
    for n, w in enumerate(weights):
        if rule is GnRule.IL_GN_LMS:
            e_next = hhat[n + 1] - w @ hhat[n]
            pre = hhat[n]
        else:
            e_next = hhat[n + 1] - h[n + 1]
            pre = h[n]
        out.append(w + alpha * np.outer(e_next, pre))
    return out
