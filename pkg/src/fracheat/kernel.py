"""Lattice convolution kernels and their convolution powers.

A kernel ``a(x)`` proportional to ``exp(-b|x|^p)`` is sampled on the cube
``[-R, R]^d`` with spacing ``h`` and renormalised so that ``h^d * sum(a) = 1``.
The discrete object is then an honest probability mass function (divided by
``h^d``), which keeps mass and moment identities exact on the lattice.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sp_fft
from scipy.special import gammaincc, logsumexp

from . import errors

#: complex cells allowed in one FFT buffer (~512 MiB)
MEMORY_BUDGET = 2**25

_MAGIC = b"FHDG"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class KernelSpec:
    """Parameters of the kernel family ``exp(-b |x|^p)`` on a symmetric lattice."""

    d: int = 1
    p: float = 2.0
    b: float = 1.0
    R: float = 8.0
    h: float = 1.0 / 16.0
    shape: str = "stretched_exp"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise errors.ParameterOutOfRange(f"dimension must be a positive integer, got {self.d}")
        if not self.p > 1:
            raise errors.ParameterOutOfRange(f"tail exponent p must exceed 1, got {self.p}")
        if not self.b > 0:
            raise errors.ParameterOutOfRange(f"tail rate b must be positive, got {self.b}")
        if not (self.R > 0 and self.h > 0):
            raise errors.ParameterOutOfRange("R and h must be positive")
        ratio = self.R / self.h
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise errors.ParameterOutOfRange(f"R/h must be a positive integer, got {ratio}")
        if self.shape != "stretched_exp":
            raise errors.ParameterOutOfRange(f"unknown kernel shape {self.shape!r}")

    @property
    def half_nodes(self) -> int:
        return int(round(self.R / self.h))

    def to_dict(self) -> dict:
        return {"d": self.d, "p": self.p, "b": self.b, "R": self.R, "h": self.h, "shape": self.shape}


@dataclass(frozen=True)
class DensityGrid:
    """Nonnegative function sampled on a centred lattice.

    ``values`` has shape ``(2*n_1+1, ..., 2*n_d+1)``; index ``n_i`` on each axis
    is the origin. In log domain ``values`` holds natural logs and ``mass``
    is carried as metadata only.
    """

    values: np.ndarray
    h: float
    mass: float
    log_domain: bool = False
    discarded_mass: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if any(s % 2 == 0 for s in v.shape):
            raise errors.ValidationError(f"grid axes must have odd length, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.log_domain:
            if np.any(np.isnan(v)) or np.any(v == np.inf):
                raise errors.ValidationError("log-domain grid must be finite or -inf")
            return
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise errors.ValidationError("density grid values must be finite and nonnegative")
        actual = self.h**self.d * float(v.sum())
        if abs(actual - self.mass) > 1e-12 * max(1.0, abs(self.mass)):
            raise errors.ValidationError(f"stored mass {self.mass} differs from grid mass {actual}")

    @classmethod
    def from_values(cls, values, h, **kw) -> DensityGrid:
        v = np.asarray(values, dtype=float)
        return cls(v, h, h**v.ndim * float(v.sum()), **kw)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def half_extent(self) -> tuple[int, ...]:
        return tuple((s - 1) // 2 for s in self.values.shape)

    def axis_coords(self, axis: int = 0) -> np.ndarray:
        n = self.half_extent[axis]
        return self.h * np.arange(-n, n + 1)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays, one per axis."""
        out = []
        for i in range(self.d):
            shape = [1] * self.d
            shape[i] = -1
            out.append(self.axis_coords(i).reshape(shape))
        return out

    def index_of(self, x) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        idx = []
        for i, xi in enumerate(x):
            j = xi / self.h
            if abs(j - round(j)) > 1e-6:
                raise errors.ValidationError(f"point {x} is not on the lattice with spacing {self.h}")
            j = int(round(j)) + self.half_extent[i]
            if not 0 <= j < self.values.shape[i]:
                raise errors.GridExtentInsufficient(f"point {x} lies outside the grid")
            idx.append(j)
        return tuple(idx)

    def value_at(self, x) -> float:
        return float(self.values[self.index_of(x)])

    def is_symmetric(self, rtol: float = 0.0) -> bool:
        flipped = self.values[(slice(None, None, -1),) * self.d]
        if rtol == 0.0:
            return bool(np.array_equal(self.values, flipped))
        return bool(np.allclose(self.values, flipped, rtol=rtol, atol=0.0))

    def axis_factors(self, rtol: float = 1e-13) -> list[np.ndarray] | None:
        """One-dimensional pmfs whose tensor product is this grid, else ``None``.

        Each factor is a pmf on its axis (sums to 1); the grid equals
        ``mass * prod(factor_i) / h^d``.
        """
        if self.log_domain:
            return None
        pmf = self.values * self.h**self.d
        total = pmf.sum()
        factors = []
        for i in range(self.d):
            other = tuple(j for j in range(self.d) if j != i)
            factors.append(pmf.sum(axis=other) / total if other else pmf / total)
        if self.d == 1:
            return factors
        prod = total * factors[0]
        for f in factors[1:]:
            prod = np.multiply.outer(prod, f)
        if np.max(np.abs(prod - pmf)) > rtol * pmf.max():
            return None
        return factors

    def to_log(self) -> DensityGrid:
        if self.log_domain:
            return self
        with np.errstate(divide="ignore"):
            lv = np.log(self.values)
        return DensityGrid(lv, self.h, self.mass, True, self.discarded_mass, dict(self.meta))

    # -- serialization -------------------------------------------------

    def metadata(self) -> dict:
        return {
            "format": "fracheat-density-grid",
            "version": _FORMAT_VERSION,
            "d": self.d,
            "h": self.h,
            "half_extent": list(self.half_extent),
            "mass": self.mass,
            "log_domain": self.log_domain,
            "discarded_mass": self.discarded_mass,
            "byte_order": "little",
            "layout": "row-major float64",
        }

    def save(self, path) -> tuple[Path, Path]:
        """Write the binary grid plus a ``.json`` sidecar; returns both paths."""
        path = Path(path)
        header = _MAGIC + struct.pack(
            f"<III dd d{self.d}I", _FORMAT_VERSION, self.d, int(self.log_domain),
            self.h, self.mass, self.discarded_mass, *self.half_extent,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(json.dumps(self.metadata(), indent=2))
        return path, sidecar

    @classmethod
    def load(cls, path) -> DensityGrid:
        raw = Path(path).read_bytes()
        if raw[:4] != _MAGIC:
            raise errors.ValidationError(f"{path} is not a density-grid file")
        version, d, log_flag = struct.unpack_from("<III", raw, 4)
        if version != _FORMAT_VERSION:
            raise errors.ValidationError(f"unsupported grid format version {version}")
        fmt = f"<III dd d{d}I"
        h, mass, discarded, *half = struct.unpack_from(fmt, raw, 4)[3:]
        offset = 4 + struct.calcsize(fmt)
        shape = tuple(2 * n + 1 for n in half)
        values = np.frombuffer(raw, dtype="<f8", offset=offset, count=int(np.prod(shape))).reshape(shape)
        return cls(values.astype(float), h, mass, bool(log_flag), discarded)

    def to_csv(self, path) -> None:
        if self.d != 1:
            raise errors.ValidationError("CSV export is only defined for d=1 grids")
        data = np.column_stack([self.axis_coords(0), self.values])
        np.savetxt(path, data, delimiter=",", header="x,value", comments="", fmt="%.17g")


@dataclass(frozen=True)
class KernelMoments:
    sigma: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if not np.allclose(s, s.T, rtol=1e-12, atol=0):
            raise errors.ValidationError("covariance must be symmetric")
        if np.any(np.linalg.eigvalsh(s) <= 0):
            raise errors.ValidationError("covariance must be positive definite")
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))


def build_kernel(spec: KernelSpec) -> DensityGrid:
    n = spec.half_nodes
    if 2 * n + 1 < 16:
        raise errors.SpacingTooCoarse(f"only {2 * n + 1} nodes per axis; need at least 16")
    # continuum tail mass outside the ball of radius R (the cube contains the ball)
    tail = float(gammaincc(spec.d / spec.p, spec.b * spec.R**spec.p))
    if tail > 1e-10 or np.exp(-spec.b * spec.R**spec.p) >= 1e-14:
        raise errors.CutoffTooSmall(
            f"tail mass {tail:.3e} beyond R={spec.R} is not negligible; increase R"
        )
    x = spec.h * np.arange(-n, n + 1)
    r2 = np.zeros((2 * n + 1,) * spec.d)
    for i in range(spec.d):
        shape = [1] * spec.d
        shape[i] = -1
        r2 = r2 + (x**2).reshape(shape)
    vals = np.exp(-spec.b * r2 ** (spec.p / 2))
    vals = vals / (spec.h**spec.d * vals.sum())
    return DensityGrid.from_values(vals, spec.h, meta={"spec": spec.to_dict()})


def covariance(a: DensityGrid) -> KernelMoments:
    if a.log_domain:
        raise errors.ValidationError("covariance needs a linear-domain grid")
    w = a.values * a.h**a.d
    w = w / w.sum()
    xs = a.coords()
    mean = np.array([float((w * xi).sum()) for xi in xs])
    if np.max(np.abs(mean)) > 1e-10:
        raise errors.AsymmetricInput(f"kernel mean {mean} is not zero")
    sig = np.empty((a.d, a.d))
    for i in range(a.d):
        for j in range(i, a.d):
            sig[i, j] = sig[j, i] = float((w * xs[i] * xs[j]).sum())
    return KernelMoments(sig, mean)


def log_mgf(a: DensityGrid, gamma) -> float:
    """``L(gamma) = log(h^d * sum exp(gamma.x) a(x))``."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    expo = sum(g * xi for g, xi in zip(gamma, a.coords()))
    with np.errstate(divide="ignore"):
        la = np.log(a.values)
    return float(logsumexp(la + expo) + a.d * np.log(a.h))


# -- convolution -----------------------------------------------------


def _linear_convolve(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    shape = tuple(s1 + s2 - 1 for s1, s2 in zip(u.shape, v.shape))
    if np.prod(shape) > MEMORY_BUDGET:
        raise errors.ExtentOverflow(f"convolution of shape {shape} exceeds the memory budget")
    fshape = [sp_fft.next_fast_len(s, real=True) for s in shape]
    out = sp_fft.irfftn(sp_fft.rfftn(u, fshape) * sp_fft.rfftn(v, fshape), fshape)
    return out[tuple(slice(0, s) for s in shape)]


def _crop(arr: np.ndarray, half: tuple[int, ...]) -> tuple[np.ndarray, float]:
    """Centre-crop ``arr`` to half-extents ``half``; returns kept array and dropped sum."""
    sl = []
    for s, n in zip(arr.shape, half):
        c = (s - 1) // 2
        n = min(n, c)
        sl.append(slice(c - n, c + n + 1))
    kept = arr[tuple(sl)]
    return kept, float(arr.sum() - kept.sum())


def _clean(arr: np.ndarray, symmetric: bool) -> np.ndarray:
    if symmetric:
        arr = 0.5 * (arr + arr[(slice(None, None, -1),) * arr.ndim])
    return np.clip(arr, 0.0, None)


def convolve(a: DensityGrid, b: DensityGrid) -> DensityGrid:
    if a.h != b.h or a.d != b.d:
        raise errors.ValidationError("grids must share spacing and dimension")
    sym = a.is_symmetric() and b.is_symmetric()
    out = _clean(_linear_convolve(a.values, b.values) * a.h**a.d, sym)
    return DensityGrid.from_values(out, a.h)


def convolution_power(
    a: DensityGrid,
    k: int,
    extent: int | tuple[int, ...] | None = None,
    max_discard: float = 1e-8,
) -> DensityGrid:
    """``a^{*k}`` by repeated squaring of linear (zero-padded) convolutions.

    With ``extent`` (half-width in lattice steps) every intermediate product is
    re-windowed to that extent; the discarded mass is accumulated and must stay
    below ``max_discard``.
    """
    if a.log_domain:
        raise errors.ValidationError("convolution_power needs a linear-domain grid")
    if int(k) != k or k < 1:
        raise errors.ValidationError(f"k must be a positive integer, got {k}")
    if abs(a.mass - 1.0) > 1e-9:
        raise errors.ValidationError(f"kernel mass is {a.mass}, expected 1")
    k = int(k)
    if k == 1:
        return a
    if extent is not None and np.isscalar(extent):
        extent = (int(extent),) * a.d
    if extent is None:
        full = tuple(k * n for n in a.half_extent)
        if np.prod([2 * n + 1 for n in full]) > MEMORY_BUDGET:
            raise errors.ExtentOverflow(f"a^*{k} needs half-extent {full}; pass a smaller extent")
    sym = a.is_symmetric()
    scale = a.h**a.d
    pmf = a.values * scale
    acc = None
    power = pmf
    discarded = 0.0
    kk = k
    while True:
        if kk & 1:
            acc = power if acc is None else _clean(_linear_convolve(acc, power), sym)
            if extent is not None:
                acc, lost = _crop(acc, extent)
                discarded += lost
        kk >>= 1
        if not kk:
            break
        power = _clean(_linear_convolve(power, power), sym)
        if extent is not None:
            power, lost = _crop(power, extent)
            discarded += lost
        if discarded > max_discard:
            raise errors.GridExtentInsufficient(
                f"re-windowing discarded mass {discarded:.3e} > {max_discard:.1e}"
            )
    if extent is None and abs(acc.sum() - 1.0) > 1e-9:
        raise errors.ComputationError(f"mass drifted to {acc.sum()} in a^*{k}")
    return DensityGrid.from_values(acc / scale, a.h, discarded_mass=discarded)


def tilt(a: DensityGrid, gamma) -> tuple[DensityGrid, float]:
    """Exponentially tilted kernel ``a(x) exp(gamma.x - L(gamma))`` and ``L(gamma)``."""
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    L = log_mgf(a, gamma)
    expo = sum(g * xi for g, xi in zip(gamma, a.coords())) - L
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(a.values > 0, np.exp(np.log(a.values) + expo), 0.0)
    vals = vals / (a.h**a.d * vals.sum())
    return DensityGrid.from_values(vals, a.h), L


def tilted_convolution_power(
    a: DensityGrid,
    k: int,
    gamma,
    cumulant=None,
    extent: int | tuple[int, ...] | None = None,
    floor: float = 1e-8,
) -> DensityGrid:
    """``log a^{*k}`` computed through the tilted kernel.

    ``log a^{*k}(x) = k L(gamma) - gamma.x + log (a_gamma)^{*k}(x)``. Entries
    whose tilted value is below ``floor`` times the tilted maximum cannot be
    resolved at this tilt and are returned as ``-inf``; FFT roundoff near the
    floor is about ``1e-16 / floor`` relative.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    at, L = tilt(a, gamma)
    if cumulant is not None:
        L = float(cumulant(gamma))
    try:
        pk = convolution_power(at, k, extent=extent, max_discard=1e-8)
    except errors.GridExtentInsufficient as exc:
        raise errors.TiltOutOfRange(f"tilt {gamma} moves the mass of a_gamma^*{k} off the grid") from exc
    v = pk.values
    keep = v > floor * v.max()
    expo = sum(g * xi for g, xi in zip(gamma, pk.coords()))
    with np.errstate(divide="ignore"):
        lv = np.where(keep, k * L - expo + np.log(np.where(keep, v, 1.0)), -np.inf)
    return DensityGrid(lv, a.h, 1.0 - pk.discarded_mass, True, pk.discarded_mass,
                       {"gamma": gamma.tolist(), "k": k})
