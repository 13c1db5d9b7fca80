"""Saddle-point problem container: dual blocks, proxes, convexity constants."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import BlockRow, LinOp
from .proximal import ProxFn
from .spaces import ProductSpace, Space


@dataclass
class DualBlock:
    """One dual coordinate: its operator, conjugate prox and convexity."""

    op: LinOp
    prox: ProxFn
    mu: float | None = None

    def __post_init__(self):
        if self.mu is None:
            self.mu = self.prox.mu


class SaddleProblem:
    """Instance of ``min_x sum_i f_i(A_i x) + g(x)`` in saddle form.

    Holds the n dual blocks (operator, prox of the conjugate f_i*, its
    strong convexity mu_i) and the primal prox for g with mu_g.
    """

    def __init__(self, primal: Space, blocks: list[DualBlock], g: ProxFn, mu_g: float | None = None):
        if not blocks:
            raise ValueError("need at least one dual block")
        for blk in blocks:
            if blk.op.domain != primal:
                raise ValueError("all block operators must share the primal space as domain")
        self.primal = primal
        self.blocks = list(blocks)
        self.g = g
        self.mu_g = g.mu if mu_g is None else float(mu_g)

    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def dual(self) -> ProductSpace:
        return ProductSpace(tuple(b.op.codomain for b in self.blocks))

    @property
    def mus(self) -> tuple[float, ...]:
        return tuple(float(b.mu) for b in self.blocks)

    def ops(self) -> list[LinOp]:
        return [b.op for b in self.blocks]

    def block_row(self) -> BlockRow:
        """The stacked forward operator A with (A x)_i = A_i x."""
        return BlockRow(self.ops())

    def adjoint_sum(self, y) -> np.ndarray:
        """``A* y = sum_i A_i* y_i`` without building the block operator."""
        out = self.blocks[0].op.adjoint_apply(y[0])
        for blk, yi in zip(self.blocks[1:], y[1:]):
            out += blk.op.adjoint_apply(yi)
        return out
