"""Oracles and verification procedures for the analysis suites.

Includes the finite-difference gradient oracle, descent-direction checks
for the closed-form linear-network updates, the compatibility-score
interference analysis, minimum-norm-path cosine diagnostics, and update
norm statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import Clamp, GammaConfig, PredictionMode, run_inference
from .gn import GnRule, apply_gn_step, bp_gn_targets, il_gn_targets, linear_forward
from .linalg import cosine_similarity
from .nn import Activation, LossKind, NetworkParams, feedforward, loss_grad


def finite_diff(scalar_fn, point: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, per coordinate."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    for i in range(point.shape[0]):
        plus = point.copy()
        minus = point.copy()
        plus[i] += step
        minus[i] -= step
        grad[i] = (scalar_fn(plus) - scalar_fn(minus)) / (2.0 * step)
    return grad


@dataclass
class DescentReport:
    alpha: float
    cosine: float = float("nan")
    j_sign: str = "positive"  # "positive" | "nonpositive"
    assumptions_hold: bool = False
    skipped: bool = False
    assumption_flags: dict = field(default_factory=dict)


def _gn_assumptions(weights: list, h: list, hhat: list, gamma: float) -> dict:
    """Angle conditions on targets vs predictions/activities, layers 1..N-1.

    Predictions after targeting sit at p_n = (1 - gamma) h_n + gamma hhat_n.
    """
    flags = {"hp_pos": True, "hh_pos": True, "hh_gt_hp": True}
    for n in range(1, len(weights)):
        p_n = (1.0 - gamma) * h[n] + gamma * hhat[n]
        if float(hhat[n] @ p_n) <= 0:
            flags["hp_pos"] = False
        if float(hhat[n] @ h[n]) <= 0:
            flags["hh_pos"] = False
        if float(hhat[n] @ hhat[n]) <= float(hhat[n] @ p_n):
            flags["hh_gt_hp"] = False
    return flags


def verify_descent(weights: list, x: np.ndarray, y: np.ndarray, rule: GnRule,
                   alpha: float, gamma: float = 0.9) -> DescentReport:
    """Apply one closed-form target + weight step to a bias-free linear
    net and report how the output moved relative to -dL/dh_N (MSE loss).

    The target-chained rule is expected to move the output exactly along
    the negative loss gradient whenever the angle assumptions hold; the
    feedforward-referenced rule loses the direction guarantee at large
    step sizes.
    """
    h = linear_forward(weights, x)
    g_out = loss_grad(LossKind.MSE, h[-1], y)
    if float(np.linalg.norm(g_out)) < 1e-12:
        return DescentReport(alpha=alpha, skipped=True)
    if rule is GnRule.IL_GN_LMS:
        hhat = il_gn_targets(weights, h, g_out, gamma)
    else:
        hhat = bp_gn_targets(weights, h, g_out)
    flags = _gn_assumptions(weights, h, hhat, gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        new_weights = apply_gn_step(weights, h, hhat, rule, alpha)
        h_new = linear_forward(new_weights, x)
    delta = h_new[-1] - h[-1]
    if not np.all(np.isfinite(delta)) or float(np.linalg.norm(delta)) < 1e-12:
        return DescentReport(alpha=alpha, skipped=True,
                             assumption_flags=flags)
    cos = cosine_similarity(delta, -g_out)
    return DescentReport(
        alpha=alpha,
        cosine=cos,
        j_sign="positive" if cos > 0 else "nonpositive",
        assumptions_hold=all(flags.values()),
        assumption_flags=flags,
    )


@dataclass
class CompatReport:
    score: float
    compatible: int
    total: int


def _toy_bp_deltas(weights: list, x: np.ndarray, y: np.ndarray,
                   alpha: float) -> list:
    """Per-layer explicit-gradient updates for a bias-free linear net."""
    h = linear_forward(weights, x)
    e_next = y - h[-1]  # -dL/dh_N for MSE
    errors = [None] * len(h)
    errors[len(weights)] = e_next
    for n in range(len(weights) - 1, 0, -1):
        errors[n] = weights[n].T @ errors[n + 1]
    return [alpha * np.outer(errors[n + 1], h[n]) for n in range(len(weights))]


def _toy_il_deltas(weights: list, x: np.ndarray, y: np.ndarray, alpha: float,
                   steps: int = 25, beta: float = 0.2) -> list:
    """Per-layer error-gradient updates after full-clamp relaxation."""
    params = NetworkParams([w.copy() for w in weights], use_bias=False)
    gammas = GammaConfig(gamma=1.0, beta=beta, steps=steps, clamp=Clamp.full())
    state = run_inference(params, Activation.LINEAR, gammas, LossKind.MSE, x, y,
                          mode=PredictionMode.PRE_ACTIVATION)
    deltas = []
    for n in range(len(weights)):
        e_next = state.hhat[n + 1] - state.p[n + 1]
        deltas.append(alpha * np.outer(e_next, state.hhat[n]))
    return deltas


def compatibility_score(weights: list, x: np.ndarray, y: np.ndarray,
                        algo: str, alpha: float) -> CompatReport:
    """Fraction of weight updates whose effect on the output layer is at
    least as large applied jointly as applied alone.

    For each layer n the joint effect is ||h_N(all) - h_N(all but n)||
    and the solo effect is ||h_N(only n) - h_N(base)||; an update counts
    as compatible when joint >= solo.  ``algo`` selects how the updates
    are produced: "il_sgd" or "bp_sgd".
    """
    if algo == "il_sgd":
        deltas = _toy_il_deltas(weights, x, y, alpha)
    elif algo == "bp_sgd":
        deltas = _toy_bp_deltas(weights, x, y, alpha)
    else:
        raise ValueError(f"unknown toy algorithm {algo!r}")
    base = linear_forward(weights, x)[-1]
    all_out = linear_forward([w + d for w, d in zip(weights, deltas)], x)[-1]
    compatible = 0
    for n in range(len(weights)):
        without_n = [w + (d if i != n else 0.0)
                     for i, (w, d) in enumerate(zip(weights, deltas))]
        only_n = [w + (d if i == n else 0.0)
                  for i, (w, d) in enumerate(zip(weights, deltas))]
        joint = float(np.linalg.norm(all_out - linear_forward(without_n, x)[-1]))
        solo = float(np.linalg.norm(linear_forward(only_n, x)[-1] - base))
        if joint >= solo:
            compatible += 1
    return CompatReport(score=compatible / len(weights),
                        compatible=compatible, total=len(weights))


def min_norm_cosine(h_out_before: np.ndarray, h_out_after: np.ndarray,
                    y: np.ndarray) -> float:
    """Cosine between the realized output change and the straight path to y."""
    return cosine_similarity(h_out_after - h_out_before, y - h_out_before)


def update_norm_stats(records: list) -> tuple[float, float]:
    """Sample mean and population standard deviation of ||dtheta||."""
    if not records:
        raise ValueError("update_norm_stats needs at least one record")
    norms = np.array([r.update_norm for r in records], dtype=np.float64)
    return float(norms.mean()), float(norms.std())


@dataclass
class InterferenceReport:
    joint_vs_without_first: float   # ||h_2(both) - h_2(only W_1)||
    solo_last: float                # ||h_2(only W_1) - h_2(base)||
    joint_vs_without_last: float    # ||h_2(both) - h_2(only W_0)||
    solo_first: float               # ||h_2(only W_0) - h_2(base)||
    c1: float
    c2: float
    g1: float
    e_out_norm: float


def interference_effect_pair(weights: list, x: np.ndarray, y: np.ndarray,
                             rule: GnRule, alpha: float,
                             gamma: float = 0.9) -> InterferenceReport:
    """Effect magnitudes of the two updates of a single-hidden-layer
    linear net applied alone vs together, plus the scalars that gate the
    interference propositions.

    For the target-chained rule c1 = alpha x.x, c2 = alpha hhat_1.h_1 and
    g1 = gamma + alpha (hhat_1.hhat_1 - hhat_1.p_1); the
    feedforward-referenced rule has c2 = alpha h_1.h_1 and
    g1 = 1 + alpha (h_1.hhat_1 - h_1.h_1).
    """
    if len(weights) != 2:
        raise ValueError("interference analysis needs exactly two weight matrices")
    h = linear_forward(weights, x)
    g_out = loss_grad(LossKind.MSE, h[-1], y)
    if rule is GnRule.IL_GN_LMS:
        hhat = il_gn_targets(weights, h, g_out, gamma)
        p1 = (1.0 - gamma) * h[1] + gamma * hhat[1]
        c1 = alpha * float(x @ x)
        c2 = alpha * float(hhat[1] @ h[1])
        g1 = gamma + alpha * (float(hhat[1] @ hhat[1]) - float(hhat[1] @ p1))
    else:
        hhat = bp_gn_targets(weights, h, g_out)
        c1 = alpha * float(x @ x)
        c2 = alpha * float(h[1] @ h[1])
        g1 = 1.0 + alpha * (float(h[1] @ hhat[1]) - float(h[1] @ h[1]))
    deltas = [nw - w for nw, w in
              zip(apply_gn_step(weights, h, hhat, rule, alpha), weights)]
    base = h[-1]
    both = linear_forward([w + d for w, d in zip(weights, deltas)], x)[-1]
    only_first = linear_forward([weights[0] + deltas[0], weights[1]], x)[-1]
    only_last = linear_forward([weights[0], weights[1] + deltas[1]], x)[-1]
    e_out = hhat[2] - (1.0 - gamma) * h[2] - gamma * hhat[2] \
        if rule is GnRule.IL_GN_LMS else hhat[2] - h[2]
    return InterferenceReport(
        joint_vs_without_first=float(np.linalg.norm(both - only_last)),
        solo_last=float(np.linalg.norm(only_last - base)),
        joint_vs_without_last=float(np.linalg.norm(both - only_first)),
        solo_first=float(np.linalg.norm(only_first - base)),
        c1=c1, c2=c2, g1=g1,
        e_out_norm=float(np.linalg.norm(e_out)),
    )
