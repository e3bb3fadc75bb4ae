"""Synthetic geography, pathloss radio maps and on-disk datasets."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter

from .pgm import decode_mask_pgm, decode_pgm16, encode_mask_pgm, encode_pgm16
from .rng import Rng64, derive_seed
from .tensor import Tensor, default_dtype

DBM_FLOOR = -254.0
DEFAULT_CELL_SIZE_M = 0.86
FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


@dataclass
class GeoMap:
    roi_mask: np.ndarray  # (H, W) bool, True = free space
    tx: tuple
    cell_size_m: float = DEFAULT_CELL_SIZE_M

    def __post_init__(self):
        self.roi_mask = np.asarray(self.roi_mask, dtype=bool)
        if self.roi_mask.ndim != 2:
            raise ValueError("roi_mask must be 2-D")
        self.tx = (int(self.tx[0]), int(self.tx[1]))
        r, c = self.tx
        if not (0 <= r < self.height and 0 <= c < self.width):
            raise ValueError(f"tx {self.tx} outside {self.height}x{self.width} map")
        if not self.roi_mask[r, c]:
            raise ValueError("tx must stand on a free (RoI) cell")

    @property
    def height(self) -> int:
        return self.roi_mask.shape[0]

    @property
    def width(self) -> int:
        return self.roi_mask.shape[1]

    def building_fraction(self) -> float:
        return float(1.0 - self.roi_mask.mean())


@dataclass
class SynthChannelParams:
    alpha: float = 3.0
    beta: float = 32.4
    sigma_sf: float = 6.0
    wall_loss_db: float = 10.0
    d0_m: float = 1.0
    sf_smooth: int = 2
    tx_power_dbm: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.sigma_sf < 0 or self.wall_loss_db < 0:
            raise ValueError("sigma_sf and wall_loss_db must be >= 0")
        if self.d0_m <= 0:
            raise ValueError("d0_m must be > 0")
        if self.sf_smooth < 0:
            raise ValueError("sf_smooth must be >= 0")


@dataclass
class LayoutParams:
    n_rects: int = 6
    size_min: int = 6
    size_max: int = 16

    @classmethod
    def for_size(cls, size: int) -> "LayoutParams":
        """Defaults scaled from the 64x64 layout (6 rectangles of 6..16 cells)."""
        scale = size / 64
        return cls(
            n_rects=max(1, round(6 * scale * scale)),
            size_min=max(1, round(6 * scale)),
            size_max=max(1, round(16 * scale)),
        )


# normalisation --------------------------------------------------------------

def normalize_dbm(p_rx):
    """Received power in dBm -> [0, 1] with -254 dBm at 0 and 0 dBm at 1."""
    return np.clip((np.asarray(p_rx, dtype=np.float64) - DBM_FLOOR) / -DBM_FLOOR, 0.0, 1.0)


def denormalize_dbm(v):
    return 254.0 * np.asarray(v, dtype=np.float64) - 254.0


# layout ---------------------------------------------------------------------

def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def generate_layout(
    seed: int,
    height: int,
    width: int,
    n_rects: int,
    size_range: tuple = (6, 16),
    cell_size_m: float = DEFAULT_CELL_SIZE_M,
) -> GeoMap:
    """Stamp ``n_rects`` building rectangles, then place the BS on a free cell."""
    for n in (height, width):
        if n < 8 or not _is_pow2(n):
            raise ValueError(f"map extents must be powers of two >= 8, got {height}x{width}")
    lo, hi = int(size_range[0]), int(size_range[1])
    if lo < 1 or hi < lo:
        raise ValueError(f"bad rectangle size range {size_range}")
    rng = Rng64(seed)
    mask = np.ones((height, width), dtype=bool)
    for _ in range(n_rects):
        top = rng.below(height)
        left = rng.below(width)
        h = lo + rng.below(hi - lo + 1)
        w = lo + rng.below(hi - lo + 1)
        mask[top:top + h, left:left + w] = False
    free = np.flatnonzero(mask)
    if free.size == 0:
        raise ValueError("layout has no free cell for the transmitter")
    k = int(free[rng.below(free.size)])
    return GeoMap(mask, divmod(k, width), cell_size_m)


# line of sight ----------------------------------------------------------------

def bresenham_cells(src: tuple, dst: tuple) -> list:
    """Cells on the integer line from ``src`` to ``dst`` (both included)."""
    r, c = src
    r1, c1 = dst
    dc, dr = abs(c1 - c), -abs(r1 - r)
    sc = 1 if c1 > c else -1
    sr = 1 if r1 > r else -1
    err = dc + dr
    cells = [(r, c)]
    while (r, c) != (r1, c1):
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c += sc
        if e2 <= dc:
            err += dc
            r += sr
        cells.append((r, c))
    return cells


def los_wall_count(geo: GeoMap, src: tuple, dst: tuple) -> int:
    """Non-RoI cells strictly between ``src`` and ``dst`` on the Bresenham line.

    Traced from the lexicographically smaller endpoint so the count is symmetric.
    """
    for r, c in (src, dst):
        if not (0 <= r < geo.height and 0 <= c < geo.width):
            raise IndexError(f"cell {(r, c)} outside {geo.height}x{geo.width} map")
    a, b = sorted([tuple(src), tuple(dst)])
    return sum(1 for r, c in bresenham_cells(a, b)[1:-1] if not geo.roi_mask[r, c])


def wall_count_map(geo: GeoMap) -> np.ndarray:
    """``los_wall_count(geo, tx, x)`` for every cell x, all lines stepped in lockstep."""
    H, W = geo.height, geo.width
    rows, cols = np.divmod(np.arange(H * W), W)
    tr, tc = geo.tx
    tx_first = (tr < rows) | ((tr == rows) & (tc <= cols))
    r = np.where(tx_first, tr, rows)
    c = np.where(tx_first, tc, cols)
    r1 = np.where(tx_first, rows, tr)
    c1 = np.where(tx_first, cols, tc)
    dc, dr = np.abs(c1 - c), -np.abs(r1 - r)
    sc = np.where(c1 > c, 1, -1)
    sr = np.where(r1 > r, 1, -1)
    err = dc + dr
    blocked = ~geo.roi_mask
    count = np.zeros(H * W, dtype=np.int64)
    active = (r != r1) | (c != c1)
    while active.any():
        e2 = 2 * err
        mc = active & (e2 >= dr)
        mr = active & (e2 <= dc)
        err = err + np.where(mc, dr, 0) + np.where(mr, dc, 0)
        c = c + np.where(mc, sc, 0)
        r = r + np.where(mr, sr, 0)
        active = (r != r1) | (c != c1)
        count += active & blocked[r, c]
    return count.reshape(H, W)


# radio map --------------------------------------------------------------------

def shadow_fading_field(shape: tuple, sigma: float, smooth: int, seed: int) -> np.ndarray:
    """Box-filtered Gaussian field rescaled to zero mean and std ``sigma`` dB."""
    if sigma == 0:
        return np.zeros(shape)
    z = Rng64(seed).normal_block(int(np.prod(shape))).reshape(shape)
    if smooth > 0:
        z = uniform_filter(z, size=2 * smooth + 1, mode="nearest")
    z = z - z.mean()
    std = z.std()
    return z * (sigma / std) if std > 0 else z


def pathloss_db(geo: GeoMap, p: SynthChannelParams, seed: int) -> np.ndarray:
    """Positive pathloss magnitude (dB) on every cell, buildings included."""
    H, W = geo.height, geo.width
    rr, cc = np.mgrid[0:H, 0:W]
    d = geo.cell_size_m * np.hypot(rr - geo.tx[0], cc - geo.tx[1])
    d = np.maximum(p.d0_m, d)
    loss = 10.0 * p.alpha * np.log10(d) + p.beta
    if p.wall_loss_db:
        loss = loss + p.wall_loss_db * wall_count_map(geo)
    return loss + shadow_fading_field((H, W), p.sigma_sf, p.sf_smooth, seed)


def synth_radio_map(geo: GeoMap, p: SynthChannelParams, seed: int) -> np.ndarray:
    """Normalised received power on RoI cells, exactly 0 on buildings."""
    p_rx = p.tx_power_dbm - pathloss_db(geo, p, seed)
    return np.where(geo.roi_mask, normalize_dbm(p_rx), 0.0)


# model input --------------------------------------------------------------------

def input_planes(geo: GeoMap) -> np.ndarray:
    x = np.zeros((2, geo.height, geo.width), dtype=default_dtype())
    x[0] = geo.roi_mask
    x[1][geo.tx] = 1.0
    return x


def assemble_input(geo: GeoMap) -> Tensor:
    """[1, 2, H, W]: channel 0 RoI mask, channel 1 one-hot BS location."""
    return Tensor(input_planes(geo)[None])


def assemble_batch(geos) -> Tensor:
    return Tensor(np.stack([input_planes(g) for g in geos]))


# dataset ---------------------------------------------------------------------------

@dataclass
class Sample:
    geo: GeoMap
    radio: np.ndarray  # (H, W) normalised power


@dataclass
class Dataset:
    root: Optional[Path]
    manifest: dict
    samples: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, train_frac: float = 0.9):
        return split_indices(len(self.samples), self.manifest["master_seed"], train_frac)


def sample_seeds(master_seed: int, index: int) -> tuple:
    """(layout seed, shadow-fading seed) for sample ``index``."""
    s = int(master_seed) + index
    return s, derive_seed(s, "shadow_fading")


def make_sample(master_seed: int, index: int, size: int, params: SynthChannelParams,
                layout: LayoutParams, cell_size_m: float = DEFAULT_CELL_SIZE_M) -> Sample:
    layout_seed, sf_seed = sample_seeds(master_seed, index)
    geo = generate_layout(layout_seed, size, size, layout.n_rects,
                          (layout.size_min, layout.size_max), cell_size_m)
    return Sample(geo, synth_radio_map(geo, params, sf_seed))


def split_indices(count: int, seed: int, train_frac: float = 0.9):
    """Seeded Fisher-Yates shuffle; train gets floor(frac*count), test the rest."""
    idx = list(range(count))
    rng = Rng64(derive_seed(seed, "split"))
    for i in range(count - 1, 0, -1):
        j = rng.below(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    n_train = math.floor(train_frac * count)
    return sorted(idx[:n_train]), sorted(idx[n_train:])


def write_dataset(root, count: int, master_seed: int, size: int = 64,
                  params: Optional[SynthChannelParams] = None,
                  layout: Optional[LayoutParams] = None,
                  cell_size_m: float = DEFAULT_CELL_SIZE_M,
                  extra: Optional[dict] = None) -> dict:
    """Generate ``count`` samples under ``root`` and return the manifest."""
    if count < 1:
        raise ValueError("count must be >= 1")
    params = params or SynthChannelParams()
    layout = layout or LayoutParams.for_size(size)
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        s = make_sample(master_seed, i, size, params, layout, cell_size_m)
        geo_name = f"samples/{i:05d}.geo.pgm"
        rm_name = f"samples/{i:05d}.rm.pgm"
        (root / geo_name).write_bytes(encode_mask_pgm(s.geo.roi_mask))
        (root / rm_name).write_bytes(encode_pgm16(s.radio))
        entries.append({"index": i, "seed": int(master_seed) + i,
                        "tx": list(s.geo.tx), "geo": geo_name, "rm": rm_name})
    manifest = {
        "format_version": FORMAT_VERSION,
        "count": count,
        "height": size,
        "width": size,
        "cell_size_m": cell_size_m,
        "bit_depth": 16,
        "master_seed": int(master_seed),
        "channel_params": asdict(params),
        "layout": asdict(layout),
        "samples": entries,
    }
    if extra:
        manifest["config"] = extra
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return manifest


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"no manifest.json under {root}") from exc
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetError(f"unsupported dataset format {manifest.get('format_version')}")
    entries = manifest["samples"]
    if len(entries) != manifest["count"]:
        raise DatasetError("manifest count does not match sample list")
    H, W = manifest["height"], manifest["width"]
    samples = []
    for e in entries:
        try:
            mask = decode_mask_pgm((root / e["geo"]).read_bytes())
            radio = decode_pgm16((root / e["rm"]).read_bytes())
        except FileNotFoundError as exc:
            raise DatasetError(f"missing sample file: {exc.filename}") from exc
        except ValueError as exc:
            raise DatasetError(f"corrupt sample {e['index']}: {exc}") from exc
        if mask.shape != (H, W) or radio.shape != (H, W):
            raise DatasetError(f"sample {e['index']} has wrong extents")
        geo = GeoMap(mask, tuple(e["tx"]), manifest["cell_size_m"])
        samples.append(Sample(geo, radio))
    return Dataset(root, manifest, samples)


def in_memory_dataset(count: int, master_seed: int, size: int = 64,
                      params: Optional[SynthChannelParams] = None,
                      layout: Optional[LayoutParams] = None) -> Dataset:
    """Same samples as ``write_dataset`` without PGM quantisation."""
    params = params or SynthChannelParams()
    layout = layout or LayoutParams.for_size(size)
    samples = [make_sample(master_seed, i, size, params, layout) for i in range(count)]
    manifest = {"master_seed": int(master_seed), "count": count, "height": size, "width": size}
    return Dataset(None, manifest, samples)
