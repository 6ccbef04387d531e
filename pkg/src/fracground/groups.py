"""Stratified-group primitives: group law, dilations, gauge, distance.

Two groups are supported: Euclidean R^N (abelian, trivial dilations) and
the first Heisenberg group H1 in its polarized real-coordinate model
(x, y, t) with dilation exponents (1, 1, 2).  All operations are pure
functions of immutable inputs and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EUCLIDEAN = "euclidean"
HEISENBERG1 = "heisenberg1"


@dataclass(frozen=True)
class GroupSpec:
    """A stratified group with its anisotropic dilation structure.

    Attributes
    ----------
    kind : str
        ``"euclidean"`` or ``"heisenberg1"``.
    dilation_exponents : tuple of int
        Per-coordinate weights r_i of the dilation
        D_lam(x) = (lam**r_1 x_1, ..., lam**r_N x_N).
    homogeneous_dim : int
        Q = sum of the dilation exponents; governs the scaling of the
        Haar (= Lebesgue) measure under dilations.
    """

    kind: str
    dilation_exponents: tuple = field(default=())
    homogeneous_dim: int = 0

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, HEISENBERG1):
            raise ValueError(f"unknown group kind {self.kind!r}")
        if self.kind == HEISENBERG1:
            exps = (1, 1, 2)
        else:
            if not self.dilation_exponents:
                raise ValueError("euclidean group needs a dimension")
            exps = tuple(1 for _ in self.dilation_exponents)
        object.__setattr__(self, "dilation_exponents", exps)
        object.__setattr__(self, "homogeneous_dim", sum(exps))

    @property
    def dim(self) -> int:
        """Topological dimension (length of a coordinate vector)."""
        return len(self.dilation_exponents)

    @property
    def Q(self) -> int:
        return self.homogeneous_dim

    def identity(self) -> np.ndarray:
        return np.zeros(self.dim)


def euclidean(n: int) -> GroupSpec:
    """The abelian group R^n with isotropic dilations, Q = n."""
    if n < 1:
        raise ValueError("dimension must be positive")
    return GroupSpec(EUCLIDEAN, tuple([1] * n))


def heisenberg1() -> GroupSpec:
    """The first Heisenberg group, coordinates (x, y, t), Q = 4."""
    return GroupSpec(HEISENBERG1, (1, 1, 2))


def _check_point(spec: GroupSpec, a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.shape != (spec.dim,):
        raise ValueError(f"point of shape {a.shape} does not match group dimension {spec.dim}")
    return a


def compose(spec: GroupSpec, a, b) -> np.ndarray:
    """Group product a o b.

    Euclidean: vector addition.  Heisenberg:
    (x, y, t) o (x', y', t') = (x + x', y + y', t + t' + (x y' - y x') / 2).
    """
    a = _check_point(spec, a)
    b = _check_point(spec, b)
    if spec.kind == EUCLIDEAN:
        return a + b
    x, y, t = a
    xp, yp, tp = b
    return np.array([x + xp, y + yp, t + tp + 0.5 * (x * yp - y * xp)])


def inverse(spec: GroupSpec, a) -> np.ndarray:
    """Group inverse; coordinate negation for both supported groups."""
    return -_check_point(spec, a)


def dilate(spec: GroupSpec, lam: float, a) -> np.ndarray:
    """Anisotropic dilation D_lam(a), coordinate i scaled by lam**r_i."""
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    a = _check_point(spec, a)
    scales = np.array([lam ** r for r in spec.dilation_exponents])
    return a * scales


def qnorm(spec: GroupSpec, a) -> float:
    """Homogeneous gauge |a|.

    Euclidean norm on R^N; the Koranyi-Cygan gauge
    ((x^2 + y^2)^2 + 16 t^2)^(1/4) on H1.  Satisfies |a^-1| = |a| and
    |D_lam a| = lam |a|.
    """
    a = _check_point(spec, a)
    if spec.kind == EUCLIDEAN:
        return float(np.sqrt(np.dot(a, a)))
    x, y, t = a
    rho2 = x * x + y * y
    return float((rho2 * rho2 + 16.0 * t * t) ** 0.25)


def dist(spec: GroupSpec, a, b) -> float:
    """Left-invariant homogeneous distance |b^-1 o a|."""
    return qnorm(spec, compose(spec, inverse(spec, b), a))


def qnorm_grid(spec: GroupSpec, coords: np.ndarray) -> np.ndarray:
    """Vectorized gauge of an (n, dim) array of points."""
    coords = np.asarray(coords, dtype=float)
    if spec.kind == EUCLIDEAN:
        return np.sqrt(np.sum(coords * coords, axis=-1))
    x, y, t = coords[..., 0], coords[..., 1], coords[..., 2]
    rho2 = x * x + y * y
    return (rho2 * rho2 + 16.0 * t * t) ** 0.25


def group_code(spec: GroupSpec) -> int:
    """Integer tag consumed by the compiled kernels (0 euclid, 1 heis)."""
    return 0 if spec.kind == EUCLIDEAN else 1


def ball_volume_estimate(spec: GroupSpec, radius: float, cells_per_axis: int = 160) -> float:
    """Grid estimate of the gauge-ball volume mu(B(0, radius)).

    Counts cell-centered midpoints with gauge < radius inside a bounding
    box shaped by the dilation exponents.  Used by the property suite to
    verify the r**Q volume scaling.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    halfw = [1.05 * radius ** r for r in spec.dilation_exponents]
    axes = [
        (-w + (np.arange(cells_per_axis) + 0.5) * (2 * w / cells_per_axis))
        for w in halfw
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    gauge = qnorm_grid(spec, pts)
    cell_vol = float(np.prod([2 * w / cells_per_axis for w in halfw]))
    return float(np.count_nonzero(gauge < radius)) * cell_vol
