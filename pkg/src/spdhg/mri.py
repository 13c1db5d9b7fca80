"""Synthetic parallel-MRI problem generation.

Builds a piecewise-smooth complex phantom, analytic coil-sensitivity
maps on a circle, a row-subsampling k-space mask with a guaranteed
low-frequency band, noisy per-coil data, and assembles everything into a
regularized least-squares saddle-point problem with forward operators
``A_i = subsample o DFT o diag(c_i)``.
"""

from __future__ import annotations

import ast
import math
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from .operators import Compose, Dft2, Diagonal, Subsample
from .problem import DualBlock, SaddleProblem
from .proximal import DataFitConjugate, TvPlusL2
from .spaces import COMPLEX, Space


class InstanceError(ValueError):
    """Invalid or ill-posed synthetic instance request."""


# ---------------------------------------------------------------------------
# phantom
# ---------------------------------------------------------------------------

def make_phantom(shape, kind: str = "blobs", seed: int = 0) -> np.ndarray:
    """Seed-deterministic piecewise-smooth complex image.

    Magnitude lies in [0, 1]; the phase is a smooth low-order surface so
    the image is genuinely complex without oscillating wildly.
    """
    h, w = (int(s) for s in shape)
    if h < 8 or w < 8:
        raise InstanceError(f"phantom needs at least 8x8 pixels, got {shape}")
    rng = np.random.default_rng(seed)
    rows = (np.arange(h) - (h - 1) / 2) / ((h - 1) / 2)
    cols = (np.arange(w) - (w - 1) / 2) / ((w - 1) / 2)
    u, v = np.meshgrid(rows, cols, indexing="ij")
    r2 = u * u + v * v

    if kind == "blobs":
        mag = 0.35 * (r2 < 0.85)
        for _ in range(6):
            c0 = rng.uniform(-0.45, 0.45, size=2)
            axes = rng.uniform(0.12, 0.4, size=2)
            amp = rng.uniform(-0.45, 0.65)
            ang = rng.uniform(0.0, math.pi)
            du = (u - c0[0]) * math.cos(ang) + (v - c0[1]) * math.sin(ang)
            dv = -(u - c0[0]) * math.sin(ang) + (v - c0[1]) * math.cos(ang)
            inside = (du / axes[0]) ** 2 + (dv / axes[1]) ** 2 < 1.0
            mag = mag + amp * inside
    elif kind == "rings":
        radii = np.sort(rng.uniform(0.15, 0.95, size=4))
        mag = np.zeros_like(r2)
        amp = 0.9
        for rad in radii[::-1]:
            mag = np.where(r2 < rad * rad, amp, mag)
            amp = max(0.15, amp - rng.uniform(0.15, 0.3))
    else:
        raise InstanceError(f"unknown phantom kind {kind!r}")

    mag = np.clip(mag, 0.0, 1.0)
    coeff = rng.uniform(-0.4, 0.4, size=3)
    phase = coeff[0] * np.sin(math.pi * u) + coeff[1] * np.cos(math.pi * v) + coeff[2] * u * v
    return (mag * np.exp(1j * phase)).astype(np.complex128)


# ---------------------------------------------------------------------------
# coil maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoilArray:
    """Coil-sensitivity maps with their generating circle geometry."""

    maps: np.ndarray          # (n, H, W) complex
    centers: np.ndarray       # (n, 2) coil positions in pixel coordinates
    decay: float
    phase_coeff: float

    @property
    def n(self) -> int:
        return self.maps.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1:]

    def min_sos(self) -> float:
        return float(np.min(np.sum(np.abs(self.maps) ** 2, axis=0)))


def coil_value(shape, n: int, decay: float, j: int, rows, cols,
               phase_coeff: float = 0.5) -> np.ndarray:
    """Analytic coil-j sensitivity at arbitrary (row, col) coordinates.

    Coil j sits at angle 2*pi*j/n on the circle circumscribing the grid;
    the magnitude decays as a Gaussian in the distance to the coil and
    the phase is a linear ramp along the coil direction, so the whole
    family is covariant under rotation by 2*pi/n.
    """
    h, w = (int(s) for s in shape)
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    radius = math.hypot(cr, cc)
    scale = float(max(h, w))
    ang = 2.0 * math.pi * j / n
    pr = cr + radius * math.sin(ang)
    pc = cc + radius * math.cos(ang)
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    dist2 = ((rows - pr) ** 2 + (cols - pc) ** 2) / (scale * scale)
    ramp = ((rows - cr) * math.sin(ang) + (cols - cc) * math.cos(ang)) / scale
    return np.exp(-decay * dist2) * np.exp(1j * phase_coeff * ramp)


def make_coil_maps(shape, n: int, decay: float = 1.0, phase_coeff: float = 0.5) -> CoilArray:
    if n < 1:
        raise InstanceError("need at least one coil")
    if decay < 0:
        raise InstanceError("decay must be nonnegative")
    h, w = (int(s) for s in shape)
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    maps = np.stack([coil_value(shape, n, decay, j, rr, cc, phase_coeff) for j in range(n)])
    cr, ccen = (h - 1) / 2.0, (w - 1) / 2.0
    radius = math.hypot(cr, ccen)
    angles = 2.0 * math.pi * np.arange(n) / n
    centers = np.stack([cr + radius * np.sin(angles), ccen + radius * np.cos(angles)], axis=1)
    return CoilArray(maps=maps, centers=centers, decay=float(decay), phase_coeff=float(phase_coeff))


# ---------------------------------------------------------------------------
# k-space mask
# ---------------------------------------------------------------------------

CENTER_BAND_ROWS = 2


def make_mask(shape, kind: str = "uniform_rows", fraction: float = 0.5, seed: int = 0) -> np.ndarray:
    """Boolean k-space pattern keeping whole rows, center rows always.

    Row selection happens in fftshift (low frequencies centered) layout
    and is stored unshifted, aligned with the DFT operator's output.
    """
    h, w = (int(s) for s in shape)
    if not 0 < fraction <= 1:
        raise InstanceError(f"fraction must lie in (0, 1], got {fraction}")
    if kind == "full":
        return np.ones((h, w), dtype=bool)
    if kind not in ("uniform_rows", "random"):
        raise InstanceError(f"unknown mask kind {kind!r}")

    kept = int(round(fraction * h))
    band = min(CENTER_BAND_ROWS, h)
    if kept < band:
        raise InstanceError(
            f"fraction {fraction} keeps {kept} rows, fewer than the {band}-row center band")
    center = h // 2
    band_rows = [center - k for k in range(1, band // 2 + 1)] + [center + k for k in range((band + 1) // 2)]
    band_rows = sorted(set(band_rows))
    candidates = [r for r in range(h) if r not in band_rows]
    extra = kept - len(band_rows)
    if extra > 0:
        if kind == "uniform_rows":
            picks = np.round(np.linspace(0, len(candidates) - 1, extra)).astype(int)
        else:
            rng = np.random.default_rng(seed)
            picks = rng.choice(len(candidates), size=extra, replace=False)
        chosen = sorted(band_rows + [candidates[p] for p in picks])
    else:
        chosen = band_rows
    storage_rows = np.fft.fftshift(np.arange(h))[chosen]
    mask = np.zeros((h, w), dtype=bool)
    mask[np.sort(storage_rows), :] = True
    return mask


# ---------------------------------------------------------------------------
# instance assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceSpec:
    """Reproducible recipe for a synthetic instance."""

    shape: tuple[int, int] = (32, 32)
    coils: int = 12
    phantom: str = "blobs"
    mask_kind: str = "uniform_rows"
    mask_fraction: float = 0.5
    coil_decay: float = 1.0
    noise_snr_db: float | None = 30.0
    noise_sigma: float | None = None
    lambda1: float | None = None       # None: auto-calibrated
    lambda2: float | None = None
    lambda1_fraction: float = 0.02
    lambda2_fraction: float = 0.05
    tv_isotropic: bool = False
    seed: int = 1234

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shape"] = list(self.shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceSpec":
        d = dict(d)
        if "shape" in d:
            d["shape"] = tuple(int(s) for s in d["shape"])
        return cls(**d)


@dataclass
class MriInstance:
    """Generated instance: ground truth, acquisition model and data."""

    spec: InstanceSpec
    x_true: np.ndarray
    coils: CoilArray
    mask: np.ndarray
    data: list[np.ndarray]
    lambda1: float
    lambda2: float
    noise_sigma: float

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def primal_space(self) -> Space:
        return Space(self.x_true.shape, COMPLEX)

    def forward_ops(self):
        """The per-coil operators ``subsample o DFT o diag(c_i)``."""
        space = self.primal_space
        dft = Dft2(space)
        sub = Subsample(self.mask)
        return [Compose(sub, Compose(dft, Diagonal(self.coils.maps[i], space)))
                for i in range(self.coils.n)]


MIN_SOS = 1e-3


def build_instance(spec: InstanceSpec) -> MriInstance:
    """Generate phantom, coils, mask and noisy data from a spec."""
    x_true = make_phantom(spec.shape, spec.phantom, spec.seed)
    coils = make_coil_maps(spec.shape, spec.coils, spec.coil_decay)
    if coils.min_sos() < MIN_SOS:
        raise InstanceError(
            f"coil sum-of-squares floor {coils.min_sos():.2e} below {MIN_SOS}; "
            "instance would be ill posed")
    mask = make_mask(spec.shape, spec.mask_kind, spec.mask_fraction, spec.seed + 1)

    space = Space(spec.shape, COMPLEX)
    dft = Dft2(space)
    sub = Subsample(mask)
    clean = [sub(dft(coils.maps[i] * x_true)) for i in range(spec.coils)]

    sigma = spec.noise_sigma
    if sigma is None:
        if spec.noise_snr_db is None:
            sigma = 0.0
        else:
            signal_power = sum(float(np.sum(np.abs(c) ** 2)) for c in clean)
            entries = sum(c.size for c in clean)
            sigma = math.sqrt((signal_power / entries) * 10.0 ** (-spec.noise_snr_db / 10.0))
    rng = np.random.default_rng(spec.seed + 2)
    data = []
    for c in clean:
        noise = sigma / math.sqrt(2.0) * (rng.standard_normal(c.shape) + 1j * rng.standard_normal(c.shape))
        data.append(c + noise)

    lam1, lam2 = spec.lambda1, spec.lambda2
    if lam1 is None or lam2 is None:
        auto1, auto2 = _auto_lambdas(spec, x_true, clean, data)
        lam1 = auto1 if lam1 is None else lam1
        lam2 = auto2 if lam2 is None else lam2

    return MriInstance(spec=spec, x_true=x_true, coils=coils, mask=mask, data=data,
                       lambda1=float(lam1), lambda2=float(lam2), noise_sigma=float(sigma))


def _auto_lambdas(spec, x_true, clean, data):
    """Scale the weights to small fractions of the data term at x_true."""
    data_term = 0.5 * sum(float(np.linalg.norm(c - b) ** 2) for c, b in zip(clean, data))
    if data_term <= 0:
        data_term = 1e-3 * 0.5 * sum(float(np.linalg.norm(b) ** 2) for b in data)
    h, w = x_true.shape
    grad_v = np.abs(np.diff(x_true, axis=0)).sum()
    grad_h = np.abs(np.diff(x_true, axis=1)).sum()
    tv = float(grad_v + grad_h)
    sq = float(np.linalg.norm(x_true) ** 2)
    lam1 = spec.lambda1_fraction * data_term / max(tv, 1e-12)
    lam2 = 2.0 * spec.lambda2_fraction * data_term / max(sq, 1e-12)
    return lam1, lam2


def saddle_problem(inst: MriInstance, inner_iters: int = 20) -> SaddleProblem:
    """Assemble the saddle-point problem for an instance.

    Data terms are ``1/2 ||A_i x - b_i||^2`` (conjugate prox in closed
    form, strong convexity 1); the primal regularizer is the TV+L2
    composite with strong convexity lambda2.
    """
    ops = inst.forward_ops()
    blocks = [DualBlock(op=op, prox=DataFitConjugate(b), mu=1.0)
              for op, b in zip(ops, inst.data)]
    g = TvPlusL2(inst.x_true.shape, inst.lambda1, inst.lambda2,
                 inner_iters=inner_iters, isotropic=inst.spec.tv_isotropic)
    return SaddleProblem(primal=inst.primal_space, blocks=blocks, g=g, mu_g=inst.lambda2)


def build_problem(spec: InstanceSpec, inner_iters: int = 20) -> tuple[MriInstance, SaddleProblem]:
    inst = build_instance(spec)
    return inst, saddle_problem(inst, inner_iters=inner_iters)


# ---------------------------------------------------------------------------
# instance directory format
# ---------------------------------------------------------------------------

_HEADER_TAG = "complex128 little-endian interleaved-float64"


def write_complex_array(prefix: str, arr: np.ndarray):
    """Raw interleaved re/im float64 pairs plus a plain-text header."""
    arr = np.ascontiguousarray(arr, dtype="<c16")
    with open(prefix + ".bin", "wb") as fh:
        fh.write(arr.tobytes())
    with open(prefix + ".hdr", "w") as fh:
        fh.write(" ".join(str(s) for s in arr.shape) + "\n")
        fh.write(_HEADER_TAG + "\n")


def read_complex_array(prefix: str) -> np.ndarray:
    with open(prefix + ".hdr") as fh:
        dims = tuple(int(tok) for tok in fh.readline().split())
        tag = fh.readline().strip()
    if tag != _HEADER_TAG:
        raise InstanceError(f"unsupported array layout {tag!r}")
    with open(prefix + ".bin", "rb") as fh:
        raw = fh.read()
    return np.frombuffer(raw, dtype="<c16").reshape(dims).astype(np.complex128)


def save_instance(inst: MriInstance, dirpath: str):
    os.makedirs(dirpath, exist_ok=True)
    write_complex_array(os.path.join(dirpath, "x_true"), inst.x_true)
    write_complex_array(os.path.join(dirpath, "coils"), inst.coils.maps)
    write_complex_array(os.path.join(dirpath, "data"), np.stack(inst.data))
    with open(os.path.join(dirpath, "mask.txt"), "w") as fh:
        for row in inst.mask.astype(int):
            fh.write(" ".join(str(v) for v in row) + "\n")
    with open(os.path.join(dirpath, "meta.txt"), "w") as fh:
        for key, val in sorted(_meta_dict(inst).items()):
            fh.write(f"{key}={val}\n")


def _meta_dict(inst: MriInstance) -> dict[str, str]:
    meta = {f"spec.{k}": repr(v) for k, v in inst.spec.to_dict().items()}
    meta["lambda1"] = repr(inst.lambda1)
    meta["lambda2"] = repr(inst.lambda2)
    meta["noise_sigma"] = repr(inst.noise_sigma)
    meta["min_sos"] = repr(inst.coils.min_sos())
    return meta


def load_instance(dirpath: str) -> MriInstance:
    meta = {}
    with open(os.path.join(dirpath, "meta.txt")) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.rstrip("\n").split("=", 1)
                meta[key] = val
    spec_dict = {k[len("spec."):]: ast.literal_eval(v)
                 for k, v in meta.items() if k.startswith("spec.")}
    spec = InstanceSpec.from_dict(spec_dict)
    x_true = read_complex_array(os.path.join(dirpath, "x_true"))
    maps = read_complex_array(os.path.join(dirpath, "coils"))
    data = list(read_complex_array(os.path.join(dirpath, "data")))
    mask = np.loadtxt(os.path.join(dirpath, "mask.txt"), dtype=int).astype(bool)
    coils = make_coil_maps(spec.shape, spec.coils, spec.coil_decay)
    coils = replace(coils, maps=maps)
    return MriInstance(spec=spec, x_true=x_true, coils=coils, mask=mask, data=data,
                       lambda1=float(meta["lambda1"]), lambda2=float(meta["lambda2"]),
                       noise_sigma=float(meta["noise_sigma"]))
