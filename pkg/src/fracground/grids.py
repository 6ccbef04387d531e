"""Cell-centered grids on truncated boxes with zero extension.

A :class:`GridFunction` samples a function on the midpoints of a tensor
grid over a box ``[-L_1, L_1] x ... x [-L_d, L_d]`` and represents the
function that equals those samples inside the box and 0 outside (the
zero-extension convention for compactly supported functions).  Midpoint
quadrature makes the grid a genuine finite measure space, so Lp norms,
entropies and Holder interpolation are exact discrete objects.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .groups import EUCLIDEAN, HEISENBERG1, GroupSpec, euclidean, heisenberg1

NSGF_MAGIC = b"NSGF"
NSGF_VERSION = 1


class FormatError(RuntimeError):
    """Raised when an NSGF file is truncated, corrupt or mismatched."""


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box with a cell-centered midpoint grid.

    ``points_per_axis`` entries must be even and at least 8 so that no
    node sits on a coordinate hyperplane through the origin.
    """

    group: GroupSpec
    half_widths: tuple
    points_per_axis: tuple

    def __post_init__(self):
        hw = tuple(float(w) for w in np.atleast_1d(self.half_widths))
        mm = tuple(int(m) for m in np.atleast_1d(self.points_per_axis))
        if len(hw) == 1 and self.group.dim > 1:
            hw = hw * self.group.dim
        if len(mm) == 1 and self.group.dim > 1:
            mm = mm * self.group.dim
        if len(hw) != self.group.dim or len(mm) != self.group.dim:
            raise ValueError("half_widths / points_per_axis must match the group dimension")
        if any(w <= 0 for w in hw):
            raise ValueError("half widths must be positive")
        if any(m < 8 or m % 2 for m in mm):
            raise ValueError("points_per_axis must be even and >= 8")
        object.__setattr__(self, "half_widths", hw)
        object.__setattr__(self, "points_per_axis", mm)

    @property
    def dim(self) -> int:
        return self.group.dim

    @property
    def spacings(self) -> tuple:
        return tuple(2 * w / m for w, m in zip(self.half_widths, self.points_per_axis))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def size(self) -> int:
        return int(np.prod(self.points_per_axis))

    @property
    def volume(self) -> float:
        return float(np.prod([2 * w for w in self.half_widths]))

    def axis_nodes(self, axis: int) -> np.ndarray:
        w = self.half_widths[axis]
        h = self.spacings[axis]
        return -w + (np.arange(self.points_per_axis[axis]) + 0.5) * h

    def nodes(self) -> np.ndarray:
        """All node coordinates as an (size, dim) array, row-major order."""
        mesh = np.meshgrid(*[self.axis_nodes(a) for a in range(self.dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self) -> "BoxDomain":
        return BoxDomain(self.group, self.half_widths, tuple(2 * m for m in self.points_per_axis))

    def same_grid(self, other: "BoxDomain") -> bool:
        return (
            self.group == other.group
            and self.half_widths == other.half_widths
            and self.points_per_axis == other.points_per_axis
        )


def box_for_group(group: GroupSpec, half_width: float, points: int,
                  t_half_width: float | None = None) -> BoxDomain:
    """Convenience constructor with the default anisotropic aspect.

    For H1, the t half-width defaults to ``half_width**2`` to respect the
    (lam, lam, lam^2) dilation; pass ``t_half_width`` to override.
    """
    if group.kind == HEISENBERG1:
        lt = half_width ** 2 if t_half_width is None else t_half_width
        return BoxDomain(group, (half_width, half_width, lt), (points,) * 3)
    return BoxDomain(group, (half_width,) * group.dim, (points,) * group.dim)


@dataclass(frozen=True)
class GridFunction:
    """Finite samples on a box grid, implicitly zero outside the box."""

    domain: BoxDomain
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float).ravel()
        if vals.size != self.domain.size:
            raise ValueError(f"expected {self.domain.size} values, got {vals.size}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function contains non-finite values")
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.domain, values)

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.domain.points_per_axis)


def sample(domain: BoxDomain, f) -> GridFunction:
    """Sample a pointwise function of the group coordinates on the grid."""
    nodes = domain.nodes()
    vals = np.array([f(x) for x in nodes], dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("sampled function produced non-finite values")
    return GridFunction(domain, vals)


def lp_norm_pow(u: GridFunction, p: float) -> float:
    """The integral  int |u|^p dx  under midpoint quadrature."""
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(np.abs(u.values) ** p) * u.domain.cell_volume)


def lp_norm(u: GridFunction, p: float) -> float:
    return lp_norm_pow(u, p) ** (1.0 / p)


def entropy_density_integral(u: GridFunction, p: float) -> float:
    """int (|u|^p/||u||_p^p) log(|u|^p/||u||_p^p) dx with 0 log 0 := 0."""
    norm_pp = lp_norm_pow(u, p)
    if norm_pp == 0.0:
        raise ValueError("entropy is undefined for the zero function")
    dens = np.abs(u.values) ** p / norm_pp
    mask = dens > 0
    return float(np.sum(dens[mask] * np.log(dens[mask])) * u.domain.cell_volume)


def _interp_axis(nodes: np.ndarray, h: float, y: float):
    """Clamped node pair and weight for 1d linear interpolation at y.

    The pair index is clamped to the node range, so evaluation inside the
    boundary half-cells extrapolates the last interior slope; this
    reproduces linear functions everywhere inside the box.
    """
    i0 = int(np.floor((y - nodes[0]) / h))
    i0 = min(max(i0, 0), len(nodes) - 2)
    t = (y - nodes[i0]) / h
    return i0, t


def interpolate(u: GridFunction, point: np.ndarray) -> float:
    """Multilinear interpolation of u at a point; 0 outside the box."""
    dom = u.domain
    for a in range(dom.dim):
        if abs(point[a]) > dom.half_widths[a]:
            return 0.0
    idx = []
    wts = []
    for a in range(dom.dim):
        i0, t = _interp_axis(dom.axis_nodes(a), dom.spacings[a], point[a])
        idx.append((i0, i0 + 1))
        wts.append((1.0 - t, t))
    vals = u.reshaped()
    acc = 0.0
    for corner in range(1 << dom.dim):
        w = 1.0
        sel = []
        for a in range(dom.dim):
            bit = (corner >> a) & 1
            w *= wts[a][bit]
            sel.append(idx[a][bit])
        acc += w * vals[tuple(sel)]
    return acc


def interpolate_many(u: GridFunction, points: np.ndarray) -> np.ndarray:
    """Vectorized multilinear interpolation at an (n, dim) array of points."""
    dom = u.domain
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    inside = np.ones(n, dtype=bool)
    for a in range(dom.dim):
        inside &= np.abs(points[:, a]) <= dom.half_widths[a]
    out = np.zeros(n)
    if not np.any(inside):
        return out
    pts = points[inside]
    idx0 = []
    frac = []
    for a in range(dom.dim):
        nodes = dom.axis_nodes(a)
        h = dom.spacings[a]
        i0 = np.floor((pts[:, a] - nodes[0]) / h).astype(np.int64)
        np.clip(i0, 0, len(nodes) - 2, out=i0)
        idx0.append(i0)
        frac.append((pts[:, a] - nodes[i0]) / h)
    vals = u.reshaped()
    acc = np.zeros(pts.shape[0])
    for corner in range(1 << dom.dim):
        w = np.ones(pts.shape[0])
        sel = []
        for a in range(dom.dim):
            bit = (corner >> a) & 1
            w = w * (frac[a] if bit else 1.0 - frac[a])
            sel.append(idx0[a] + bit)
        acc += w * vals[tuple(sel)]
    out[inside] = acc
    return out


def dilate_resample(u: GridFunction, lam: float, amplitude_exponent: float) -> GridFunction:
    """Return  x -> lam**a * u(D_lam x)  resampled on u's own grid."""
    if lam <= 0:
        raise ValueError("dilation factor must be positive")
    dom = u.domain
    scales = np.array([lam ** r for r in dom.group.dilation_exponents])
    pts = dom.nodes() * scales
    vals = (lam ** amplitude_exponent) * interpolate_many(u, pts)
    return GridFunction(dom, vals)


def regrid(u: GridFunction, target: BoxDomain) -> GridFunction:
    """Resample u onto another grid of the same group (0 outside u's box)."""
    if target.group != u.domain.group:
        raise ValueError("regrid requires the same group")
    return GridFunction(target, interpolate_many(u, target.nodes()))


def refine(u: GridFunction) -> GridFunction:
    """Double every axis resolution, multilinear interpolation of values."""
    return regrid(u, u.domain.refined())


# ---------------------------------------------------------------------------
# NSGF container: magic, version u32, length-prefixed JSON header,
# little-endian f64 payload, CRC32 of the payload.
# ---------------------------------------------------------------------------

def _group_to_header(group: GroupSpec) -> dict:
    return {"kind": group.kind, "dim": group.dim}


def _group_from_header(h: dict) -> GroupSpec:
    if h["kind"] == EUCLIDEAN:
        return euclidean(int(h["dim"]))
    if h["kind"] == HEISENBERG1:
        return heisenberg1()
    raise FormatError(f"unknown group kind {h['kind']!r} in file header")


def save(u: GridFunction, path, meta: dict | None = None) -> None:
    """Write a GridFunction to an NSGF file; round trip is bit exact."""
    header = {
        "group": _group_to_header(u.domain.group),
        "half_widths": list(u.domain.half_widths),
        "points_per_axis": list(u.domain.points_per_axis),
    }
    if meta:
        header["meta"] = meta
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(u.values, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(NSGF_MAGIC)
        fh.write(struct.pack("<I", NSGF_VERSION))
        fh.write(struct.pack("<I", len(hjson)))
        fh.write(hjson)
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def load(path) -> GridFunction:
    """Read an NSGF file, validating magic, version, shape and checksum."""
    u, _ = load_with_meta(path)
    return u


def load_with_meta(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != NSGF_MAGIC:
        raise FormatError("not an NSGF file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != NSGF_VERSION:
        raise FormatError(f"unsupported NSGF version {version}")
    if len(raw) < 12 + hlen + 4:
        raise FormatError("truncated NSGF file")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
        group = _group_from_header(header["group"])
        domain = BoxDomain(group, tuple(header["half_widths"]), tuple(header["points_per_axis"]))
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"bad NSGF header: {exc}") from exc
    body = raw[12 + hlen:-4]
    (crc_stored,) = struct.unpack("<I", raw[-4:])
    if len(body) != 8 * domain.size:
        raise FormatError(
            f"payload holds {len(body) // 8} values but the grid needs {domain.size}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise FormatError("payload checksum mismatch")
    values = np.frombuffer(body, dtype="<f8").astype(float)
    return GridFunction(domain, values), header.get("meta")


def to_csv(u: GridFunction, path) -> None:
    """Dump node coordinates and values as CSV."""
    nodes = u.domain.nodes()
    header = ",".join(f"x{a}" for a in range(u.domain.dim)) + ",value"
    data = np.column_stack([nodes, u.values])
    np.savetxt(path, data, delimiter=",", header=header, comments="")
