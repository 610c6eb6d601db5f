"""Symmetric truncated grids on [-T, T] with quadrature weights.

The solvers rely on the mesh being *exactly* reflection-symmetric in floating
point: ``nodes[i] == -nodes[M-1-i]`` bit for bit, with t = 0 a node.  The
uniform constructor guarantees this by building nodes as integer multiples of
the spacing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError

__all__ = ["Mesh"]


@dataclass(frozen=True)
class Mesh:
    """Strictly increasing symmetric nodes t_0 = -T ... t_{M-1} = +T plus
    trapezoid quadrature weights."""

    T: float
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or weights.shape != nodes.shape:
            raise MeshError("nodes and weights must be 1-d arrays of equal length")
        m = nodes.size
        if m < 9:
            raise MeshError(f"mesh needs at least 9 nodes, got {m}")
        if m % 2 == 0:
            raise MeshError(f"node count must be odd so that t=0 is a node, got {m}")
        if not np.all(np.diff(nodes) > 0):
            raise MeshError("nodes must be strictly increasing")
        if not np.all(weights > 0):
            raise MeshError("quadrature weights must be positive")
        if nodes[m // 2] != 0.0:
            raise MeshError("t = 0 must be the middle node (exactly)")
        if not np.array_equal(nodes, -nodes[::-1]):
            raise MeshError("nodes must be exactly symmetric under t -> -t")
        if not (self.T > 0.0) or nodes[-1] != self.T or nodes[0] != -self.T:
            raise MeshError("endpoint nodes must be exactly -T and +T")
        total = float(np.sum(weights))
        if abs(total - 2.0 * self.T) > 16.0 * np.finfo(float).eps * (1.0 + 2.0 * self.T):
            raise MeshError(
                f"quadrature of 1 over [-T, T] must equal 2T; got {total!r}"
            )
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, T: float, count: int) -> "Mesh":
        """Uniform mesh with ``count`` (odd) nodes on [-T, T].

        Nodes are built as (integer offset) * spacing so the grid is exactly
        antisymmetric in floating point; the stored ``T`` is the value the
        endpoint actually lands on.
        """
        count = int(count)
        if count % 2 == 0 or count < 9:
            raise MeshError(f"count must be odd and >= 9, got {count}")
        if not (T > 0.0):
            raise MeshError(f"T must be positive, got {T}")
        half = count // 2
        h = float(T) / half
        offsets = np.arange(count) - half          # exact integers
        nodes = offsets * h                        # (-m)*h == -(m*h): symmetric
        weights = np.full(count, h)
        weights[0] = 0.5 * h
        weights[-1] = 0.5 * h
        return cls(T=float(nodes[-1]), nodes=nodes, weights=weights)

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def spacing(self) -> float:
        """Node spacing (uniform meshes; undefined semantics otherwise)."""
        return float(self.nodes[1] - self.nodes[0])

    @property
    def center_index(self) -> int:
        return self.nodes.size // 2

    def trapz(self, values) -> float:
        """Quadrature of nodal values with the mesh weights."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.nodes.shape:
            raise MeshError("values must be nodal (same length as the mesh)")
        return float(self.weights @ values)

    def require_inside(self, t) -> None:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.nodes[0]) or np.any(t > self.nodes[-1]):
            from .errors import ExtrapolationError

            raise ExtrapolationError(
                f"t outside the mesh interval [{self.nodes[0]}, {self.nodes[-1]}]"
            )
