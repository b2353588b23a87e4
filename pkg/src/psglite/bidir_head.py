"""Gated bidirectional relation head.

One neck pass yields a single class-token feature x for the ordered mask
pair (S0, S1). A sigmoid gate splits it into a forward and a backward
intermediate,

    g = sigmoid(gate_mlp(x)),   t_fwd = g * x,   t_bwd = (1 - g) * x,

so t_fwd + t_bwd = x identically, and one shared MLP classifies both
directions. Training adds a swapped pass on embed(F, S1, S0) and ties the
two passes together: the forward intermediate of each ordering should match
the backward intermediate of the other, enforced with an MSE consistency
term on top of the four BCE terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, bce_with_logits, gelu, matmul, mse, mul,
                       one_minus, reshape, sigmoid)
from .counters import COUNTERS


@dataclass
class GateParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str = "gate") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class RelHeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str = "relhead") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": getattr(self, k) for k in self.__dataclass_fields__}


def init_gate(dim: int, rng: np.random.Generator) -> GateParams:
    return GateParams(
        w1=Tensor(rng.normal(0.0, dim ** -0.5, size=(dim, dim)), requires_grad=True),
        b1=Tensor(np.zeros(dim), requires_grad=True),
        w2=Tensor(rng.normal(0.0, dim ** -0.5, size=(dim, dim)), requires_grad=True),
        b2=Tensor(np.zeros(dim), requires_grad=True),
    )


def init_relhead(dim: int, n_predicates: int, rng: np.random.Generator) -> RelHeadParams:
    return RelHeadParams(
        w1=Tensor(rng.normal(0.0, dim ** -0.5, size=(dim, dim)), requires_grad=True),
        b1=Tensor(np.zeros(dim), requires_grad=True),
        w2=Tensor(rng.normal(0.0, dim ** -0.5, size=(dim, n_predicates)), requires_grad=True),
        b2=Tensor(np.zeros(n_predicates), requires_grad=True),
    )


def _mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    row = reshape(x, (1, x.shape[0]))
    h = gelu(matmul(row, w1) + b1)
    out = matmul(h, w2) + b2
    return reshape(out, (out.shape[1],))


def gate_split(x: Tensor, gate: GateParams) -> tuple[Tensor, Tensor]:
    g = sigmoid(_mlp2(x, gate.w1, gate.b1, gate.w2, gate.b2))
    t_fwd = mul(g, x)
    t_bwd = mul(one_minus(g), x)
    return t_fwd, t_bwd


def predict_bidirectional(x: Tensor, gate: GateParams,
                          head: RelHeadParams) -> tuple[Tensor, Tensor]:
    """Both direction logits from one class-token feature; one head pass."""
    COUNTERS.head_passes += 1
    t_fwd, t_bwd = gate_split(x, gate)
    z_fwd = _mlp2(t_fwd, head.w1, head.b1, head.w2, head.b2)
    z_bwd = _mlp2(t_bwd, head.w1, head.b1, head.w2, head.b2)
    return z_fwd, z_bwd


def predict_forward_only(x: Tensor, gate: GateParams,
                         head: RelHeadParams) -> Tensor:
    """Unidirectional ablation: same pass, only the forward logits are used,
    so covering all ordered pairs costs twice the passes."""
    COUNTERS.head_passes += 1
    t_fwd, _ = gate_split(x, gate)
    return _mlp2(t_fwd, head.w1, head.b1, head.w2, head.b2)


def consistency_loss(t_fwd: Tensor, t_bwd: Tensor,
                     t2_fwd: Tensor, t2_bwd: Tensor) -> Tensor:
    """Mean squared mismatch between each pass's forward intermediate and the
    swapped pass's backward intermediate (both directions)."""
    return mse(t_fwd, t2_bwd) + mse(t_bwd, t2_fwd)


def training_losses(x: Tensor, x_swapped: Tensor, y_fwd: np.ndarray,
                    y_bwd: np.ndarray, gate: GateParams, head: RelHeadParams,
                    lambda_cons: float = 1.0) -> tuple[Tensor, Tensor, Tensor]:
    """All loss pieces for one training pair.

    The first pass sees embed(F, S0, S1) and is scored against (y_fwd,
    y_bwd); the swapped pass sees embed(F, S1, S0), whose forward direction
    is S1 -> S0, so its targets swap roles. Returns (bce_total,
    consistency, combined).
    """
    COUNTERS.head_passes += 2
    t_fwd, t_bwd = gate_split(x, gate)
    t2_fwd, t2_bwd = gate_split(x_swapped, gate)
    z_fwd = _mlp2(t_fwd, head.w1, head.b1, head.w2, head.b2)
    z_bwd = _mlp2(t_bwd, head.w1, head.b1, head.w2, head.b2)
    z2_fwd = _mlp2(t2_fwd, head.w1, head.b1, head.w2, head.b2)
    z2_bwd = _mlp2(t2_bwd, head.w1, head.b1, head.w2, head.b2)
    bce_total = (bce_with_logits(z_fwd, y_fwd) + bce_with_logits(z_bwd, y_bwd)
                 + bce_with_logits(z2_fwd, y_bwd) + bce_with_logits(z2_bwd, y_fwd))
    cons = consistency_loss(t_fwd, t_bwd, t2_fwd, t2_bwd)
    combined = bce_total + mul(Tensor(lambda_cons), cons)
    return bce_total, cons, combined
