"""Monte Carlo Potts grain growth, slice rendering, and flaw injection.

The simulator runs Metropolis dynamics on a q-state spin volume with free
boundaries: per sweep every voxel is visited once in a seeded random order and
offered the spin of a uniformly random neighbor. Energy counts unlike-spin
neighbor pairs, so temperature 0 strictly forbids energy increases and spins
can only adopt values that still exist — the configuration coarsens into
grains. All randomness is counter-based (hash of seed/sweep/counter), so runs
are bit-reproducible and independent of threading.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .io import save_manifest, write_raster
from .model import (
    BoundaryGrid,
    GrayGrid,
    LabelGrid,
    ParameterError,
    StackManifest,
    ValidationError,
)
from .morphology import labels_to_boundary, skeletonize

# --------------------------------------------------------------------------- config

_NEIGHBORHOODS = (6, 26)


@dataclass(frozen=True)
class PottsConfig:
    width: int
    height: int
    depth: int
    q: int = 64                 # spin states
    temperature: float = 0.0    # dimensionless kT
    steps: int = 0              # Monte Carlo sweeps
    seed: int = 0
    neighborhood: int = 26      # 3D neighbor count: 6 or 26

    def __post_init__(self) -> None:
        for name in ("width", "height", "depth"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be ≥ 1, got {getattr(self, name)}")
        if not 2 <= self.q <= 0xFFFF:
            raise ParameterError(f"q must be in [2, 65535], got {self.q}")
        if self.steps < 0:
            raise ParameterError(f"steps must be ≥ 0, got {self.steps}")
        if self.temperature < 0:
            raise ParameterError(f"temperature must be ≥ 0, got {self.temperature}")
        if self.neighborhood not in _NEIGHBORHOODS:
            raise ParameterError(
                f"neighborhood must be one of {_NEIGHBORHOODS}, got {self.neighborhood}"
            )


PAPER_SIM_PRESET = PottsConfig(
    width=400, height=400, depth=400, q=64, temperature=0.0, steps=120, seed=400,
    neighborhood=26,
)


@dataclass(frozen=True)
class PottsRun:
    volume: np.ndarray        # (depth, height, width) uint16 spins in 1..q
    energy_trace: np.ndarray  # (steps + 1,) float64, energy after each sweep
    config: PottsConfig

    def volume_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.volume).tobytes()).hexdigest()


# --------------------------------------------------------------------------- rng

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_MUL2 = np.uint64(0x94D049BB133111EB)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_DOUBLE_SCALE = np.float64(1.0 / 9007199254740992.0)  # 2**-53


@njit(cache=True, inline="always")
def _mix64(z: np.uint64) -> np.uint64:
    z = (z ^ (z >> _U30)) * _SM_MUL1
    z = (z ^ (z >> _U27)) * _SM_MUL2
    return z ^ (z >> _U31)


@njit(cache=True, inline="always")
def _rand_u64(seed: np.uint64, stream: np.uint64, counter: np.uint64) -> np.uint64:
    h = _mix64(seed + _SM_GAMMA * stream)
    return _mix64(h + _SM_GAMMA * counter)


@njit(cache=True, inline="always")
def _rand_unit(seed: np.uint64, stream: np.uint64, counter: np.uint64) -> np.float64:
    return np.float64(_rand_u64(seed, stream, counter) >> _U11) * _DOUBLE_SCALE


def _neighbor_offsets(neighborhood: int) -> np.ndarray:
    offs = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dz == dy == dx == 0:
                    continue
                if neighborhood == 6 and abs(dz) + abs(dy) + abs(dx) != 1:
                    continue
                offs.append((dz, dy, dx))
    return np.array(offs, dtype=np.int64)


# --------------------------------------------------------------------------- kernels

@njit(cache=True)
def _total_energy(vol: np.ndarray, offsets: np.ndarray) -> np.float64:
    """Unlike-spin neighbor pairs, each counted once."""
    nz, ny, nx = vol.shape
    total = 0
    for k in range(offsets.shape[0]):
        dz, dy, dx = offsets[k, 0], offsets[k, 1], offsets[k, 2]
        # count each pair once: keep only lexicographically positive offsets
        positive = dz > 0 or (dz == 0 and dy > 0) or (dz == 0 and dy == 0 and dx > 0)
        if not positive:
            continue
        for z in range(max(0, -dz), nz - max(0, dz)):
            for y in range(max(0, -dy), ny - max(0, dy)):
                for x in range(max(0, -dx), nx - max(0, dx)):
                    if vol[z, y, x] != vol[z + dz, y + dy, x + dx]:
                        total += 1
    return np.float64(total)


@njit(cache=True)
def _shuffle(perm: np.ndarray, seed: np.uint64, stream: np.uint64) -> None:
    n = perm.shape[0]
    for i in range(n - 1, 0, -1):
        j = np.int64(_rand_u64(seed, stream, np.uint64(i)) % np.uint64(i + 1))
        tmp = perm[i]
        perm[i] = perm[j]
        perm[j] = tmp


@njit(cache=True)
def _run_sweeps(
    vol: np.ndarray,          # (nz, ny, nx) uint16, modified in place
    offsets: np.ndarray,      # (m, 3) int64
    kt: np.float64,
    seed: np.uint64,
    n_sweeps: np.int64,
    energy: np.ndarray,       # (n_sweeps + 1,) float64, energy[0] prefilled
) -> None:
    nz, ny, nx = vol.shape
    n = nz * ny * nx
    m = offsets.shape[0]
    perm = np.arange(n, dtype=np.int64)
    spins = np.empty(m, dtype=np.uint16)
    for sweep in range(n_sweeps):
        base = np.uint64(sweep) * np.uint64(4)
        _shuffle(perm, seed, base)
        de_acc = 0.0
        for k in range(n):
            idx = perm[k]
            z = idx // (ny * nx)
            rem = idx % (ny * nx)
            y = rem // nx
            x = rem % nx
            s = vol[z, y, x]
            n_valid = 0
            for o in range(m):
                zz = z + offsets[o, 0]
                yy = y + offsets[o, 1]
                xx = x + offsets[o, 2]
                if 0 <= zz < nz and 0 <= yy < ny and 0 <= xx < nx:
                    spins[n_valid] = vol[zz, yy, xx]
                    n_valid += 1
            pick = np.int64(
                _rand_u64(seed, base + np.uint64(1), np.uint64(k)) % np.uint64(n_valid)
            )
            s_new = spins[pick]
            if s_new == s:
                continue
            cnt_s = 0
            cnt_new = 0
            for o in range(n_valid):
                if spins[o] == s:
                    cnt_s += 1
                elif spins[o] == s_new:
                    cnt_new += 1
            de = cnt_s - cnt_new
            if de <= 0:
                accept = True
            elif kt <= 0.0:
                accept = False
            else:
                u = _rand_unit(seed, base + np.uint64(2), np.uint64(k))
                accept = u < np.exp(-np.float64(de) / kt)
            if accept:
                vol[z, y, x] = s_new
                de_acc += de
        energy[sweep + 1] = energy[sweep] + de_acc


@njit(cache=True)
def _init_spins(out: np.ndarray, q: np.int64, seed: np.uint64) -> None:
    flat = out.ravel()
    for i in range(flat.shape[0]):
        flat[i] = np.uint16(_rand_u64(seed, np.uint64(0xFFFFFFFF), np.uint64(i)) % np.uint64(q) + np.uint64(1))


# --------------------------------------------------------------------------- growth

def potts_energy(volume: np.ndarray, neighborhood: int = 26) -> float:
    """Recompute the configuration energy from scratch (test/diagnostic path)."""
    if neighborhood not in _NEIGHBORHOODS:
        raise ParameterError(f"neighborhood must be one of {_NEIGHBORHOODS}")
    vol = np.ascontiguousarray(volume, dtype=np.uint16)
    return float(_total_energy(vol, _neighbor_offsets(neighborhood)))


def potts_grow(config: PottsConfig) -> PottsRun:
    """Grow a spin volume from a uniform-random start.

    Per sweep, voxels are visited in a seeded shuffle; each is offered the spin
    of one uniformly random (in-bounds) neighbor and the move is accepted with
    Metropolis probability — at temperature 0, exactly when the energy does not
    increase. Returns the final volume and the per-sweep energy trace.
    """
    vol = np.empty((config.depth, config.height, config.width), dtype=np.uint16)
    seed = np.uint64(config.seed & 0xFFFFFFFFFFFFFFFF)
    _init_spins(vol, np.int64(config.q), seed)
    offsets = _neighbor_offsets(config.neighborhood)
    energy = np.zeros(config.steps + 1, dtype=np.float64)
    energy[0] = _total_energy(vol, offsets)
    if config.steps > 0:
        _run_sweeps(
            vol,
            offsets,
            np.float64(config.temperature),
            seed,
            np.int64(config.steps),
            energy,
        )
    return PottsRun(volume=vol, energy_trace=energy, config=config)


# --------------------------------------------------------------------------- rendering

def render_slices(volume: np.ndarray) -> list[tuple[LabelGrid, BoundaryGrid]]:
    """Per z-section: the section itself as a LabelGrid plus its single-pixel
    closed boundary (both interface sides marked, then thinned)."""
    if volume.ndim != 3:
        raise ValidationError(f"volume must be 3-D, got shape {volume.shape}")
    out = []
    for z in range(volume.shape[0]):
        section = volume[z]
        if section.max(initial=0) > 0xFFFF:
            label = LabelGrid(section.astype(np.uint32))
        else:
            label = LabelGrid(section.astype(np.uint16))
        boundary = skeletonize(labels_to_boundary(label, neighborhood=8))
        out.append((label, boundary))
    return out


INTERIOR_GRAY = 200   # base interior brightness
BOUNDARY_GRAY = 40    # boundary ink brightness
_JITTER_SPAN = 10     # per-grain brightness offset in [-10, 10]


def _jitter_table(max_id: int, seed: int) -> np.ndarray:
    """Stable per-id brightness offsets (same id -> same jitter on every slice)."""
    ids = np.arange(max_id + 1, dtype=np.uint64)
    h = (np.uint64(seed) ^ (ids * np.uint64(0x9E3779B97F4A7C15))).copy()
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    span = 2 * _JITTER_SPAN + 1
    return (h % np.uint64(span)).astype(np.int64) - _JITTER_SPAN


def render_gray(label: LabelGrid, boundary: BoundaryGrid, seed: int = 0) -> GrayGrid:
    """Synthetic micrograph: flat interior brightness with per-grain jitter,
    dark single-pixel boundary ink."""
    if label.data.shape != boundary.data.shape:
        raise ValidationError("label and boundary shapes disagree")
    jitter = _jitter_table(int(label.data.max()), seed)
    gray = INTERIOR_GRAY + jitter[label.data.astype(np.int64)]
    gray = np.where(boundary.data == 1, BOUNDARY_GRAY, gray)
    return GrayGrid(np.clip(gray, 0, 255).astype(np.uint8))


# --------------------------------------------------------------------------- flaws

FLAW_NONE = 0
FLAW_BLUR = 1      # faded / missing boundary arc
FLAW_NOISE = 2     # salt-and-pepper + speckle
FLAW_SCRATCH = 3   # spurious dark line


@dataclass(frozen=True)
class FlawConfig:
    blur_segments_per_slice: int = 0
    blur_length: int = 0            # pixels per faded arc
    noise_density: float = 0.0      # fraction of pixels hit by noise
    scratch_count: int = 0
    scratch_intensity: int = 0      # gray-level darkening of scratch lines
    blur_persistence: int = 1       # consecutive slices sharing arc positions
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("blur_segments_per_slice", "blur_length", "scratch_count",
                     "scratch_intensity"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be ≥ 0, got {getattr(self, name)}")
        if not 0.0 <= self.noise_density <= 1.0:
            raise ParameterError(
                f"noise_density must be in [0, 1], got {self.noise_density}"
            )
        if self.blur_persistence < 1:
            raise ParameterError(
                f"blur_persistence must be ≥ 1, got {self.blur_persistence}"
            )

    @property
    def is_noop(self) -> bool:
        return (
            self.blur_segments_per_slice == 0
            and self.noise_density == 0.0
            and self.scratch_count == 0
        )


class FlawInjector:
    """Applies the three flaw types to rendered grayscale slices.

    Blur arcs are sampled once per persistence group (from the boundary of the
    group's first slice seen) and reused on the group's remaining slices, so
    the same degraded coordinates recur across consecutive slices. Ground-truth
    rasters are never touched.
    """

    def __init__(self, config: FlawConfig):
        self.config = config
        self._arc_cache: dict[int, list[tuple[np.ndarray, np.ndarray, float]]] = {}

    # -- blur arcs

    def _walk_arc(
        self, boundary: np.ndarray, start: tuple[int, int], rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        h, w = boundary.shape
        ys = [start[0]]
        xs = [start[1]]
        visited = {start}
        y, x = start
        while len(ys) < self.config.blur_length:
            options = []
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dy == 0 and dx == 0:
                        continue
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and boundary[yy, xx] == 1:
                        if (yy, xx) not in visited:
                            options.append((yy, xx))
            if not options:
                break
            y, x = options[int(rng.integers(len(options)))]
            visited.add((y, x))
            ys.append(y)
            xs.append(x)
        return np.array(ys, dtype=np.int64), np.array(xs, dtype=np.int64)

    def _arcs_for_group(
        self, group: int, boundary: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray, float]]:
        if group in self._arc_cache:
            return self._arc_cache[group]
        rng = np.random.default_rng([self.config.seed, group, 1])
        by, bx = np.nonzero(boundary)
        arcs: list[tuple[np.ndarray, np.ndarray, float]] = []
        if len(by) > 0 and self.config.blur_length > 0:
            for _ in range(self.config.blur_segments_per_slice):
                k = int(rng.integers(len(by)))
                ys, xs = self._walk_arc(boundary, (int(by[k]), int(bx[k])), rng)
                fade = float(rng.uniform(0.7, 1.0))
                arcs.append((ys, xs, fade))
        self._arc_cache[group] = arcs
        return arcs

    # -- application

    def apply(
        self, gray: GrayGrid, boundary: BoundaryGrid, slice_index: int
    ) -> tuple[GrayGrid, GrayGrid]:
        """Degrade one slice; returns (degraded gray, flaw annotation map)."""
        cfg = self.config
        img = gray.data.astype(np.float64)
        note = np.zeros(img.shape, dtype=np.uint8)
        h, w = img.shape

        if cfg.blur_segments_per_slice > 0 and cfg.blur_length > 0:
            group = slice_index // cfg.blur_persistence
            for ys, xs, fade in self._arcs_for_group(group, boundary.data):
                img[ys, xs] = (1.0 - fade) * img[ys, xs] + fade * INTERIOR_GRAY
                note[ys, xs] = FLAW_BLUR

        if cfg.noise_density > 0:
            rng = np.random.default_rng([cfg.seed, slice_index, 2])
            n_noise = int(round(cfg.noise_density * img.size))
            if n_noise > 0:
                flat_idx = rng.choice(img.size, size=n_noise, replace=False)
                half = n_noise // 2
                sp = flat_idx[:half]
                speckle = flat_idx[half:]
                img.ravel()[sp] = rng.integers(0, 2, size=len(sp)) * 255.0
                img.ravel()[speckle] += rng.normal(0.0, 12.0, size=len(speckle))
                note.ravel()[flat_idx] = FLAW_NOISE

        if cfg.scratch_count > 0:
            rng = np.random.default_rng([cfg.seed, slice_index, 3])
            for _ in range(cfg.scratch_count):
                length = rng.uniform(0.25, 0.75) * min(h, w)
                angle = rng.uniform(0.0, np.pi)
                cy = rng.uniform(0, h - 1)
                cx = rng.uniform(0, w - 1)
                t = np.linspace(-0.5, 0.5, max(2, int(2 * length)))
                ys = np.clip(np.round(cy + t * length * np.sin(angle)), 0, h - 1)
                xs = np.clip(np.round(cx + t * length * np.cos(angle)), 0, w - 1)
                ys = ys.astype(np.int64)
                xs = xs.astype(np.int64)
                img[ys, xs] = img[ys, xs] - cfg.scratch_intensity
                note[ys, xs] = FLAW_SCRATCH

        out = GrayGrid(np.clip(np.round(img), 0, 255).astype(np.uint8))
        return out, GrayGrid(note)


# --------------------------------------------------------------------------- dataset

def write_dataset(
    out_dir: str | Path,
    volume: np.ndarray,
    pixel_size_xy: float = 1.0,
    z_spacing: float = 1.0,
    flaw_config: FlawConfig | None = None,
    render_seed: int = 0,
) -> dict[str, Path]:
    """Emit a dataset directory from a label/spin volume.

    Always: labels/ + boundaries/ with manifests (manifest.json is the label
    stack manifest — the dataset's primary artifact). With a FlawConfig:
    gray/ renders and flaws/ annotation maps with their own manifests.
    """
    out_dir = Path(out_dir)
    slices = render_slices(volume)
    depth = len(slices)

    (out_dir / "labels").mkdir(parents=True, exist_ok=True)
    (out_dir / "boundaries").mkdir(parents=True, exist_ok=True)
    label_names = []
    boundary_names = []
    for z, (label, boundary) in enumerate(slices):
        ln = f"labels/slice_{z:04d}.png"
        bn = f"boundaries/slice_{z:04d}.png"
        write_raster(label, out_dir / ln)
        write_raster(boundary, out_dir / bn)
        label_names.append(ln)
        boundary_names.append(bn)

    paths: dict[str, Path] = {}
    label_manifest = StackManifest(
        kind="label", pixel_size_xy=pixel_size_xy, z_spacing=z_spacing,
        slices=tuple(label_names),
    )
    paths["label"] = out_dir / "manifest.json"
    save_manifest(label_manifest, paths["label"])

    boundary_manifest = StackManifest(
        kind="boundary", pixel_size_xy=pixel_size_xy, z_spacing=z_spacing,
        slices=tuple(boundary_names),
    )
    paths["boundary"] = out_dir / "boundaries.json"
    save_manifest(boundary_manifest, paths["boundary"])

    if flaw_config is not None:
        injector = FlawInjector(flaw_config)
        (out_dir / "gray").mkdir(exist_ok=True)
        (out_dir / "flaws").mkdir(exist_ok=True)
        gray_names = []
        flaw_names = []
        for z, (label, boundary) in enumerate(slices):
            gray = render_gray(label, boundary, seed=render_seed)
            degraded, note = injector.apply(gray, boundary, z)
            gn = f"gray/slice_{z:04d}.png"
            fn = f"flaws/slice_{z:04d}.png"
            write_raster(degraded, out_dir / gn)
            write_raster(note, out_dir / fn)
            gray_names.append(gn)
            flaw_names.append(fn)
        for kind, names, fname in (
            ("gray", gray_names, "gray.json"),
            ("flaw", flaw_names, "flaws.json"),
        ):
            m = StackManifest(
                kind=kind, pixel_size_xy=pixel_size_xy, z_spacing=z_spacing,
                slices=tuple(names),
            )
            paths[kind] = out_dir / fname
            save_manifest(m, paths[kind])

    assert depth == volume.shape[0]
    return paths


def generate_dataset(
    potts_config: PottsConfig,
    out_dir: str | Path,
    flaw_config: FlawConfig | None = None,
    pixel_size_xy: float = 1.0,
    z_spacing: float = 1.0,
    render_seed: int = 0,
) -> tuple[PottsRun, dict[str, Path]]:
    """Grow a volume and emit the dataset directory plus provenance config."""
    run = potts_grow(potts_config)
    paths = write_dataset(
        out_dir,
        run.volume,
        pixel_size_xy=pixel_size_xy,
        z_spacing=z_spacing,
        flaw_config=flaw_config,
        render_seed=render_seed,
    )
    doc: dict = {
        "potts": {
            "width": potts_config.width,
            "height": potts_config.height,
            "depth": potts_config.depth,
            "q": potts_config.q,
            "temperature": potts_config.temperature,
            "steps": potts_config.steps,
            "seed": potts_config.seed,
            "neighborhood": potts_config.neighborhood,
        },
        "pixel_size_xy": pixel_size_xy,
        "z_spacing": z_spacing,
        "render_seed": render_seed,
        "flaws": None,
    }
    if flaw_config is not None:
        doc["flaws"] = {
            "blur_segments_per_slice": flaw_config.blur_segments_per_slice,
            "blur_length": flaw_config.blur_length,
            "noise_density": flaw_config.noise_density,
            "scratch_count": flaw_config.scratch_count,
            "scratch_intensity": flaw_config.scratch_intensity,
            "blur_persistence": flaw_config.blur_persistence,
            "seed": flaw_config.seed,
        }
    config_path = Path(out_dir) / "config.json"
    with open(config_path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    paths["config"] = config_path
    return run, paths
