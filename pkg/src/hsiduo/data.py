"""HSI cube and label ingestion, PCA reduction, standardization, patch
extraction with zero border padding, the stratified 1%/99% split, and the
synthetic desk-scale dataset generator.

File format: a JSON header {height, width, bands, dtype, interleave,
data} next to a raw little-endian payload. Cubes are float32 BSQ (all of
band 0, then band 1, ...); label maps are uint16 row-major.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, IngestionError, NumericError
from .tensor import Tensor


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class HsiCube:
    """H x W x B reflectance cube in arbitrary linear units."""

    values: Tensor

    def __post_init__(self):
        if len(self.values.shape) != 3:
            raise DimensionError(f"cube must be [H,W,B], got {self.values.shape}")
        if not np.all(np.isfinite(self.values.data)):
            raise DataError("cube contains non-finite values")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class LabelMap:
    """H x W integer class map; 0 marks unlabeled/background pixels."""

    labels: np.ndarray
    class_names: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DimensionError(f"label map must be [H,W], got {labels.shape}")
        if labels.min(initial=0) < 0:
            raise DataError("labels must be >= 0")
        labels = labels.astype(np.int32)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max(initial=0))


@dataclass(frozen=True)
class PcaModel:
    """Mean spectrum, orthonormal components [B,P], and their variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def transform(self, pixels: np.ndarray) -> np.ndarray:
        return (pixels - self.mean) @ self.components


@dataclass(frozen=True)
class SampleSet:
    """Pixel coordinates with labels for one split role."""

    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    role: str

    def __len__(self):
        return self.rows.shape[0]


# ---------------------------------------------------------------------------
# file io


_CUBE_DTYPES = {"f32": "<f4"}
_LABEL_DTYPES = {"u16": "<u2"}


def _read_header(header_path: str) -> dict:
    if not os.path.exists(header_path):
        raise IngestionError(f"header not found: {header_path}")
    try:
        with open(header_path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise IngestionError(f"malformed header {header_path}: {exc}") from exc


def _read_payload(header_path: str, header: dict, expected_bytes: int) -> bytes:
    data_name = header.get("data")
    if not data_name:
        raise IngestionError(f"header {header_path} missing 'data' entry")
    payload_path = os.path.join(os.path.dirname(header_path), data_name)
    if not os.path.exists(payload_path):
        raise IngestionError(f"payload not found: {payload_path}")
    raw = open(payload_path, "rb").read()
    if len(raw) != expected_bytes:
        raise IngestionError(
            f"payload {payload_path}: expected {expected_bytes} bytes, found {len(raw)}"
        )
    return raw


def load_cube(header_path: str) -> HsiCube:
    """Read a float32 BSQ cube declared by its JSON header."""
    header = _read_header(header_path)
    try:
        h, w, b = int(header["height"]), int(header["width"]), int(header["bands"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"header {header_path} missing height/width/bands") from exc
    dtype = header.get("dtype", "f32")
    if dtype not in _CUBE_DTYPES:
        raise IngestionError(f"unknown cube dtype {dtype!r} in {header_path}")
    if header.get("interleave", "bsq") != "bsq":
        raise IngestionError(f"unsupported interleave {header.get('interleave')!r}")
    raw = _read_payload(header_path, header, h * w * b * 4)
    arr = np.frombuffer(raw, dtype=_CUBE_DTYPES[dtype]).reshape(b, h, w)
    values = arr.transpose(1, 2, 0).astype(np.float64)
    return HsiCube(Tensor.from_array(values))


def save_cube(cube: HsiCube, header_path: str):
    """Write header + BSQ float32 payload next to it."""
    data_name = os.path.splitext(os.path.basename(header_path))[0] + ".raw"
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "f32",
        "interleave": "bsq",
        "data": data_name,
    }
    payload = np.ascontiguousarray(
        cube.values.as_array().transpose(2, 0, 1), dtype="<f4"
    ).tobytes()
    with open(os.path.join(os.path.dirname(header_path), data_name), "wb") as fh:
        fh.write(payload)
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_labels(header_path: str) -> LabelMap:
    header = _read_header(header_path)
    try:
        h, w = int(header["height"]), int(header["width"])
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"header {header_path} missing height/width") from exc
    dtype = header.get("dtype", "u16")
    if dtype not in _LABEL_DTYPES:
        raise IngestionError(f"unknown label dtype {dtype!r} in {header_path}")
    raw = _read_payload(header_path, header, h * w * 2)
    labels = np.frombuffer(raw, dtype=_LABEL_DTYPES[dtype]).reshape(h, w)
    return LabelMap(labels, tuple(header.get("classes", ())))


def save_labels(label_map: LabelMap, header_path: str):
    data_name = os.path.splitext(os.path.basename(header_path))[0] + ".raw"
    header = {
        "height": label_map.height,
        "width": label_map.width,
        "dtype": "u16",
        "data": data_name,
    }
    if label_map.class_names:
        header["classes"] = list(label_map.class_names)
    payload = np.ascontiguousarray(label_map.labels, dtype="<u2").tobytes()
    with open(os.path.join(os.path.dirname(header_path), data_name), "wb") as fh:
        fh.write(payload)
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# PCA via cyclic Jacobi on the explicit covariance


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-12, max_sweeps: int = 64):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues desc, eigenvectors as columns in matching order).
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"jacobi_eigh expects a square matrix, got {a.shape}")
    n = a.shape[0]
    v = np.eye(n)
    scale = max(1.0, float(np.sqrt((a * a).sum())))
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float((a * a).sum() - (np.diag(a) ** 2).sum())))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta  # sqrt(theta^2+1) would overflow; t ~ 1/(2 theta)
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def _sign_normalize(components: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    out = components.copy()
    for j in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, j])))
        if out[k, j] < 0:
            out[:, j] = -out[:, j]
    return out


def fit_pca(cube: HsiCube, n_components: int):
    """Top-P eigenpairs of the pixel covariance; returns (PcaModel, reduced).

    The covariance is formed explicitly over all pixels (labeled and
    unlabeled) and decomposed with the Jacobi solver, so every eigenpair
    is directly checkable against the dense eigenproblem.
    """
    b = cube.bands
    if not (1 <= n_components <= b):
        raise ConfigError(f"pca_components: need 1 <= P <= {b}, got {n_components}")
    pixels = cube.values.as_array().reshape(-1, b)
    if pixels.shape[0] < 2:
        raise DataError("fit_pca: need at least 2 pixels")
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    cov = centered.T @ centered / (pixels.shape[0] - 1)
    if not np.all(np.isfinite(cov)):
        raise NumericError("fit_pca: covariance is not finite")
    vals, vecs = jacobi_eigh(cov)
    vals = np.maximum(vals, 0.0)
    components = _sign_normalize(vecs[:, :n_components])
    reduced = (centered @ components).reshape(cube.height, cube.width, n_components)
    model = PcaModel(mean, components, vals[:n_components])
    return model, Tensor.from_array(reduced)


def standardize(reduced: Tensor) -> Tensor:
    """Zero-mean unit-std per band over all pixels; degenerate bands are
    only centered."""
    if len(reduced.shape) != 3:
        raise DimensionError(f"standardize expects [H,W,P], got {reduced.shape}")
    arr = reduced.as_array()
    mean = arr.mean(axis=(0, 1))
    std = arr.std(axis=(0, 1))
    scale = np.where(std > 0, std, 1.0)
    return Tensor.from_array((arr - mean) / scale)


# ---------------------------------------------------------------------------
# patch extraction


def extract_patch(reduced: Tensor, row: int, col: int, patch_size: int) -> Tensor:
    """S x S window with the target pixel at (S/2, S/2), zero padded."""
    if len(reduced.shape) != 3:
        raise DimensionError(f"extract_patch expects [H,W,P], got {reduced.shape}")
    h, w, _ = reduced.shape
    if not (0 <= row < h and 0 <= col < w):
        raise DimensionError(f"pixel ({row},{col}) out of bounds for {h}x{w}")
    if patch_size < 2 or (patch_size & (patch_size - 1)) != 0:
        raise DimensionError(f"patch_size must be an even power of two, got {patch_size}")
    out = extract_patches_array(reduced.as_array(), np.array([row]), np.array([col]), patch_size)
    return Tensor.from_array(out[0])


def extract_patches_array(arr: np.ndarray, rows: np.ndarray, cols: np.ndarray, patch_size: int):
    """Batched zero-padded window copy: [N, S, S, P]."""
    h, w, p = arr.shape
    half = patch_size // 2
    n = rows.shape[0]
    out = np.zeros((n, patch_size, patch_size, p), dtype=arr.dtype)
    for i in range(n):
        r0 = int(rows[i]) - half
        c0 = int(cols[i]) - half
        rs, re = max(r0, 0), min(r0 + patch_size, h)
        cs, ce = max(c0, 0), min(c0 + patch_size, w)
        if rs < re and cs < ce:
            out[i, rs - r0 : re - r0, cs - c0 : ce - c0, :] = arr[rs:re, cs:ce, :]
    return out


# ---------------------------------------------------------------------------
# stratified split


def stratified_split(
    label_map: LabelMap,
    train_frac: float = 0.01,
    val_frac_of_train: float = 0.10,
    seed: int = 0,
):
    """Per-class sampling: max(2, round(train_frac * n_c)) pixels form the
    training pool, of which max(1, round(val_frac * pool)) become the
    validation slice; everything else is test."""
    labels = label_map.labels
    classes = sorted(int(c) for c in np.unique(labels) if c != 0)
    if not classes:
        raise DataError("stratified_split: no labeled pixels")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11]))
    parts = {"train": [], "val": [], "test": []}
    for cls in classes:
        coords = np.argwhere(labels == cls)  # row-major order
        n_c = coords.shape[0]
        if n_c < 2:
            raise DataError(f"class {cls} has {n_c} labeled pixel(s); need at least 2")
        pool = min(max(2, _round_half_up(train_frac * n_c)), n_c)
        n_val = min(max(1, _round_half_up(val_frac_of_train * pool)), pool - 1) if pool > 1 else 0
        perm = rng.permutation(n_c)
        selected = coords[perm[:pool]]
        rest = coords[perm[pool:]]
        parts["train"].append((selected[: pool - n_val], cls))
        parts["val"].append((selected[pool - n_val :], cls))
        parts["test"].append((rest, cls))

    def build(role):
        rows, cols, labs = [], [], []
        for coords, cls in parts[role]:
            rows.append(coords[:, 0])
            cols.append(coords[:, 1])
            labs.append(np.full(coords.shape[0], cls, dtype=np.int32))
        return SampleSet(
            np.concatenate(rows).astype(np.int32),
            np.concatenate(cols).astype(np.int32),
            np.concatenate(labs),
            role,
        )

    return build("train"), build("val"), build("test")


# ---------------------------------------------------------------------------
# synthetic dataset


def _gaussian_mixture_signature(rng: np.random.Generator, bands: int) -> np.ndarray:
    axis = np.arange(bands, dtype=np.float64)
    sig = np.zeros(bands)
    for _ in range(3):
        amp = rng.uniform(0.5, 1.5)
        center = rng.uniform(0, bands - 1)
        width = rng.uniform(bands / 10.0, bands / 4.0)
        sig += amp * np.exp(-((axis - center) ** 2) / (2.0 * width * width))
    return sig


_MIN_SIGNATURE_DISTANCE = 1.0
_COHERENCE_WINDOW = 8  # matches the default patch size


def _guillotine_blocks(n_classes: int, r0: int, r1: int, c0: int, c1: int, out: np.ndarray, first: int):
    """Recursively split the rectangle along its longer side into
    contiguous class blocks with near-balanced areas."""
    if n_classes == 1:
        out[r0:r1, c0:c1] = first
        return
    left = n_classes // 2
    frac = left / n_classes
    if (r1 - r0) >= (c1 - c0):
        cut = r0 + max(1, min(r1 - r0 - 1, _round_half_up(frac * (r1 - r0))))
        _guillotine_blocks(left, r0, cut, c0, c1, out, first)
        _guillotine_blocks(n_classes - left, cut, r1, c0, c1, out, first + left)
    else:
        cut = c0 + max(1, min(c1 - c0 - 1, _round_half_up(frac * (c1 - c0))))
        _guillotine_blocks(left, r0, r1, c0, cut, out, first)
        _guillotine_blocks(n_classes - left, r0, r1, cut, c1, out, first + left)


def _foreign_context_counts(labels: np.ndarray, window: int) -> np.ndarray:
    """Per pixel: how many positions of its patch window belong to another
    class (zero padding does not count)."""
    h, w = labels.shape
    half = window // 2
    counts = np.zeros((h, w), dtype=np.int64)
    # integral image per class over the asymmetric window [p-half, p+half-1]
    for cls in np.unique(labels):
        mask = (labels == cls).astype(np.int64)
        integral = np.zeros((h + 1, w + 1), dtype=np.int64)
        integral[1:, 1:] = mask.cumsum(axis=0).cumsum(axis=1)
        rs = np.clip(np.arange(h) - half, 0, h)
        re = np.clip(np.arange(h) + half, 0, h)
        cs = np.clip(np.arange(w) - half, 0, w)
        ce = np.clip(np.arange(w) + half, 0, w)
        window_sum = (
            integral[re[:, None], ce[None, :]]
            - integral[rs[:, None], ce[None, :]]
            - integral[re[:, None], cs[None, :]]
            + integral[rs[:, None], cs[None, :]]
        )
        in_window = (re - rs)[:, None] * (ce - cs)[None, :]
        counts[labels == cls] = (in_window - window_sum)[labels == cls]
    return counts


def synth_dataset(n_classes: int, height: int, width: int, bands: int, noise_std: float, seed: int):
    """Blocky synthetic scene: one smooth spectral signature per class,
    i.i.d. per-band Gaussian noise, contiguous rectangular class blocks,
    and 5% unlabeled pixels spent on the most boundary-mixed patch
    centers so labeled patches stay class coherent."""
    if n_classes < 2:
        raise ConfigError(f"synth_dataset: need >= 2 classes, got {n_classes}")
    if height * width < 10 * n_classes:
        raise ConfigError(
            f"synth_dataset: {height}x{width} too small for {n_classes} classes"
        )
    if noise_std < 0:
        raise ConfigError(f"synth_dataset: noise_std must be >= 0, got {noise_std}")
    if max(height, width) < n_classes:
        raise ConfigError(
            f"synth_dataset: cannot lay {n_classes} contiguous blocks in {height}x{width}"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5D]))

    # distinct signatures: redraw the whole set until pairwise separation holds
    for _ in range(2000):
        sigs = np.stack([_gaussian_mixture_signature(rng, bands) for _ in range(n_classes)])
        dists = [
            np.linalg.norm(sigs[i] - sigs[j])
            for i in range(n_classes)
            for j in range(i + 1, n_classes)
        ]
        if min(dists) >= _MIN_SIGNATURE_DISTANCE:
            break
    else:
        raise ConfigError(
            f"synth_dataset: could not separate {n_classes} signatures over {bands} bands"
        )

    blocks = np.zeros((height, width), dtype=np.int32)
    _guillotine_blocks(n_classes, 0, height, 0, width, blocks, 1)
    if len(np.unique(blocks)) != n_classes:
        raise ConfigError(
            f"synth_dataset: {height}x{width} cannot host {n_classes} contiguous blocks"
        )

    values = sigs[blocks - 1].astype(np.float64)
    if noise_std > 0:
        values = values + rng.normal(0.0, noise_std, size=values.shape)
    # quantize to f32 so the file round trip is lossless
    values = values.astype(np.float32).astype(np.float64)

    # spend the 5% unlabeled budget on the most-mixed patch centers, so
    # labeled patches stay class coherent
    n_unlab = _round_half_up(0.05 * height * width)
    mixing = _foreign_context_counts(blocks, _COHERENCE_WINDOW)
    order = np.lexsort((rng.permutation(height * width), -mixing.reshape(-1)))
    labels = blocks.copy()
    labels.reshape(-1)[order[:n_unlab]] = 0

    names = tuple(f"class_{c}" for c in range(1, n_classes + 1))
    return HsiCube(Tensor.from_array(values)), LabelMap(labels, names)
