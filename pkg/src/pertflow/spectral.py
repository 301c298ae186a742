"""Coefficient-space representation of the Hilbert space H and its graph-norm scale.

Two bases are supported:

* ``fourier``: real trigonometric basis on the circle, ordered as
  ``[c0, c1, s1, c2, s2, ..., cK, sK]`` (mode 0, then cosine/sine pairs), so the
  dimension is ``2K + 1``.
* ``euclidean``: the standard basis of R^d.

Both are orthonormal, so all inner products are plain dot products of the
coefficient arrays.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

__all__ = [
    "BasisError",
    "BasisSpec",
    "SpectralElement",
    "inner_product",
    "norm",
    "graph_norm",
    "graph_norm_array",
    "mode_index",
    "mode_element",
    "elements_to_csv",
    "elements_from_csv",
]


class BasisError(ValueError):
    """Raised for mismatched or malformed bases."""


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    size: int  # K for fourier, d for euclidean

    def __post_init__(self):
        if self.kind not in ("fourier", "euclidean"):
            raise BasisError(f"unknown basis kind {self.kind!r}")
        if self.kind == "fourier" and self.size < 0:
            raise BasisError("fourier basis needs K >= 0")
        if self.kind == "euclidean" and self.size < 1:
            raise BasisError("euclidean basis needs d >= 1")

    @classmethod
    def fourier(cls, K: int) -> "BasisSpec":
        return cls("fourier", int(K))

    @classmethod
    def euclidean(cls, d: int) -> "BasisSpec":
        return cls("euclidean", int(d))

    @property
    def dim(self) -> int:
        return 2 * self.size + 1 if self.kind == "fourier" else self.size

    def wavenumbers(self) -> np.ndarray:
        """Integer wavenumber of every coefficient slot (fourier only)."""
        if self.kind != "fourier":
            raise BasisError("wavenumbers are only defined for the fourier basis")
        ks = np.zeros(self.dim, dtype=int)
        ks[1::2] = np.arange(1, self.size + 1)
        ks[2::2] = np.arange(1, self.size + 1)
        return ks

    def descriptor(self) -> str:
        return f"{self.kind}:{self.size}"

    @classmethod
    def from_descriptor(cls, text: str) -> "BasisSpec":
        kind, _, size = text.partition(":")
        try:
            return cls(kind.strip(), int(size))
        except ValueError as exc:
            raise BasisError(f"bad basis descriptor {text!r}") from exc


@dataclass(frozen=True, eq=False)
class SpectralElement:
    """An element of H stored by its coefficients in an orthonormal basis."""

    basis: BasisSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.shape != (self.basis.dim,):
            raise BasisError(
                f"expected {self.basis.dim} coefficients for {self.basis.descriptor()}, got shape {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, basis: BasisSpec) -> "SpectralElement":
        return cls(basis, np.zeros(basis.dim))

    def _check(self, other: "SpectralElement"):
        if self.basis != other.basis:
            raise BasisError(f"basis mismatch: {self.basis.descriptor()} vs {other.basis.descriptor()}")

    def __add__(self, other: "SpectralElement") -> "SpectralElement":
        self._check(other)
        return SpectralElement(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralElement") -> "SpectralElement":
        self._check(other)
        return SpectralElement(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralElement":
        return SpectralElement(self.basis, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralElement":
        return SpectralElement(self.basis, -self.coeffs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpectralElement):
            return NotImplemented
        return self.basis == other.basis and np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash((self.basis, self.coeffs.tobytes()))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def inner_product(phi: SpectralElement, psi: SpectralElement) -> float:
    phi._check(psi)
    return float(np.dot(phi.coeffs, psi.coeffs))


def norm(phi: SpectralElement) -> float:
    return phi.norm()


GraphHandle = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]


def _as_apply(G) -> tuple[Callable[[np.ndarray], np.ndarray], int | None]:
    """Normalise an operator handle to ``(apply, max_order)``."""
    if hasattr(G, "apply_G"):
        return G.apply_G, getattr(G, "m", None)
    if callable(G):
        return G, None
    mat = np.asarray(G, dtype=float)
    if mat.ndim == 1:
        return (lambda x: mat * x), None
    return (lambda x: x @ mat.T), None


def graph_norm_array(x: np.ndarray, G: GraphHandle, k: int) -> np.ndarray:
    """Graph norm of ``D(G^k)`` for raw coefficient arrays (last axis = basis).

    ``G`` may be an :class:`~pertflow.operators.OperatorPair` (anything with
    ``apply_G``), a callable acting on coefficient arrays, a square matrix, or a
    1-d array of diagonal symbols.
    """
    apply, m = _as_apply(G)
    if k < 0:
        raise ValueError("graph norm order must be non-negative")
    if m is not None and k > m + 1:
        raise ValueError(f"graph norm order {k} exceeds m+1 = {m + 1}")
    x = np.asarray(x, dtype=float)
    total = np.sum(x * x, axis=-1)
    y = x
    for _ in range(k):
        y = apply(y)
        total = total + np.sum(y * y, axis=-1)
    return np.sqrt(total)


def graph_norm(phi: SpectralElement, G: GraphHandle, k: int) -> float:
    """sqrt(|phi|^2 + |G phi|^2 + ... + |G^k phi|^2)."""
    return float(graph_norm_array(phi.coeffs, G, k))


def mode_index(basis: BasisSpec, mode: int, part: str = "cos") -> int:
    """Coefficient slot of a fourier mode (``part`` is ``"cos"`` or ``"sin"``)."""
    if basis.kind != "fourier":
        if part not in ("cos", "e"):
            raise BasisError("euclidean basis only has plain unit vectors")
        if not 0 <= mode < basis.dim:
            raise BasisError(f"index {mode} out of range")
        return mode
    if not 0 <= mode <= basis.size:
        raise BasisError(f"mode {mode} outside 0..{basis.size}")
    if mode == 0:
        if part != "cos":
            raise BasisError("mode 0 has no sine part")
        return 0
    if part == "cos":
        return 2 * mode - 1
    if part == "sin":
        return 2 * mode
    raise BasisError(f"unknown part {part!r}")


def mode_element(basis: BasisSpec, mode: int, part: str = "cos", amplitude: float = 1.0) -> SpectralElement:
    c = np.zeros(basis.dim)
    c[mode_index(basis, mode, part)] = amplitude
    return SpectralElement(basis, c)


def elements_to_csv(elements: list[SpectralElement], extra: dict[str, list] | None = None) -> str:
    """Serialise elements as flat CSV rows; the basis descriptor goes in the header."""
    if not elements:
        raise ValueError("nothing to serialise")
    basis = elements[0].basis
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow([f"basis={basis.descriptor()}", *extra.keys(), *(f"c{i}" for i in range(basis.dim))])
    for i, el in enumerate(elements):
        if el.basis != basis:
            raise BasisError("all rows must share one basis")
        w.writerow([i, *(v[i] for v in extra.values()), *(repr(float(c)) for c in el.coeffs)])
    return buf.getvalue()


def elements_from_csv(text: str) -> list[SpectralElement]:
    rows = list(csv.reader(io.StringIO(text)))
    head = rows[0]
    if not head or not head[0].startswith("basis="):
        raise BasisError("missing basis descriptor in CSV header")
    basis = BasisSpec.from_descriptor(head[0][len("basis="):])
    n_extra = len(head) - 1 - basis.dim
    return [SpectralElement(basis, np.array([float(v) for v in row[1 + n_extra:]])) for row in rows[1:]]
