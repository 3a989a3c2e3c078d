"""Gated recurrent unit cell built from the kernel vocabulary."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .errors import ShapeError
from .instrument import current_meter
from .kernels import Tensor


@dataclass
class GruParams:
    """One GRU cell: input-to-hidden (hid, in), hidden-to-hidden (hid, hid), biases (hid,)."""

    w_r: Tensor
    w_z: Tensor
    w_h: Tensor
    u_r: Tensor
    u_z: Tensor
    u_h: Tensor
    b_r: Tensor
    b_z: Tensor
    b_h: Tensor

    @property
    def input_dim(self) -> int:
        return self.w_r.data.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_r.data.shape[0]

    def validate(self) -> None:
        hid, inp = self.hidden_dim, self.input_dim
        for name in ("w_r", "w_z", "w_h"):
            if getattr(self, name).data.shape != (hid, inp):
                raise ShapeError(f"GruParams.{name}: expected {(hid, inp)}, got {getattr(self, name).data.shape}")
        for name in ("u_r", "u_z", "u_h"):
            if getattr(self, name).data.shape != (hid, hid):
                raise ShapeError(f"GruParams.{name}: expected {(hid, hid)}, got {getattr(self, name).data.shape}")
        for name in ("b_r", "b_z", "b_h"):
            if getattr(self, name).data.shape != (hid,):
                raise ShapeError(f"GruParams.{name}: expected {(hid,)}, got {getattr(self, name).data.shape}")


def init_gru(input_dim: int, hidden_dim: int, rng: np.random.Generator, prefix: str,
             update_bias: float = 1.0) -> GruParams:
    """Glorot-uniform weights, zero reset/candidate biases.

    The update-gate bias starts positive so fresh inputs pass into the
    state from the first step; with a zero bias the cell halves its state
    each call and new information enters too slowly to train quickly.
    """

    def mat(rows, cols, name):
        bound = np.sqrt(6.0 / (rows + cols))
        return K.parameter(rng.uniform(-bound, bound, size=(rows, cols)), f"{prefix}.{name}")

    return GruParams(
        w_r=mat(hidden_dim, input_dim, "w_r"),
        w_z=mat(hidden_dim, input_dim, "w_z"),
        w_h=mat(hidden_dim, input_dim, "w_h"),
        u_r=mat(hidden_dim, hidden_dim, "u_r"),
        u_z=mat(hidden_dim, hidden_dim, "u_z"),
        u_h=mat(hidden_dim, hidden_dim, "u_h"),
        b_r=K.parameter(np.zeros(hidden_dim), f"{prefix}.b_r"),
        b_z=K.parameter(np.full(hidden_dim, float(update_bias)), f"{prefix}.b_z"),
        b_h=K.parameter(np.zeros(hidden_dim), f"{prefix}.b_h"),
    )


def gru_step(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """One recurrent update, reset-before-candidate convention:

        r  = sigmoid(W_r x + U_r h + b_r)
        z  = sigmoid(W_z x + U_z h + b_z)
        hc = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * hc

    Accepts a single step ``x: (in,), h: (hid,)`` or a batch of rows
    ``x: (B, in), h: (B, hid)``. Each call counts as one sequential
    operation on the active meter.
    """
    if x.data.shape[-1] != p.input_dim:
        raise ShapeError(f"gru_step: input width {x.data.shape[-1]} != {p.input_dim}")
    if h.data.shape[-1] != p.hidden_dim:
        raise ShapeError(f"gru_step: hidden width {h.data.shape[-1]} != {p.hidden_dim}")
    meter = current_meter()
    if meter is not None:
        meter.count_gru_step()
    return K.gru_cell(x, h, p.w_r, p.w_z, p.w_h, p.u_r, p.u_z, p.u_h, p.b_r, p.b_z, p.b_h)
