"""Binary PGM (P5) / PPM (P6) writers for sample grids and trajectories."""

from __future__ import annotations

from pathlib import Path

import numpy as np

MID_GRAY = 128  # grid padding byte


def quantize(values: np.ndarray) -> np.ndarray:
    """[-1, 1] floats -> bytes: round((v + 1) * 127.5), clamped first."""
    v = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    return np.rint((v + 1.0) * 127.5).astype(np.uint8)


def _grid_canvas(images: np.ndarray, cols: int, pad: int) -> np.ndarray:
    """Arrange (N, C, H, W) byte images into a padded grid, HWC or HW."""
    n, c, h, w = images.shape
    rows = (n + cols - 1) // cols
    canvas = np.full(
        (rows * h + (rows + 1) * pad, cols * w + (cols + 1) * pad, c), MID_GRAY, dtype=np.uint8
    )
    for k in range(n):
        r, col = divmod(k, cols)
        top = pad + r * (h + pad)
        left = pad + col * (w + pad)
        canvas[top : top + h, left : left + w] = images[k].transpose(1, 2, 0)
    return canvas[:, :, 0] if c == 1 else canvas


def write_pnm(path, canvas: np.ndarray) -> None:
    """Write a grayscale (H, W) or RGB (H, W, 3) byte canvas as P5 / P6."""
    if canvas.ndim == 2:
        kind = b"P5"
    elif canvas.ndim == 3 and canvas.shape[2] == 3:
        kind = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) canvas, got {canvas.shape}")
    h, w = canvas.shape[:2]
    header = kind + b"\n" + f"{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + canvas.astype(np.uint8).tobytes())


def write_image_grid(frames: np.ndarray, cols: int, path, pad: int = 2) -> None:
    """Quantize a float batch (N, C, H, W) in [-1, 1] and write one grid image.

    C=1 emits PGM, C=3 emits PPM; grid gaps are mid-gray.
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[1] not in (1, 3):
        raise ValueError(f"expected (N, 1|3, H, W) frames, got {frames.shape}")
    if cols < 1:
        raise ValueError(f"cols must be >= 1, got {cols}")
    write_pnm(path, _grid_canvas(quantize(frames), cols, pad))


def write_trajectory_grid(frames: list[np.ndarray], path, pad: int = 2) -> None:
    """Denoising trajectory as one wide grid: row per sample, column per frame."""
    if not frames:
        raise ValueError("no frames to write")
    stacked = np.stack(frames)  # (F, N, C, H, W)
    f, n = stacked.shape[:2]
    interleaved = stacked.transpose(1, 0, 2, 3, 4).reshape((f * n,) + stacked.shape[2:])
    write_image_grid(interleaved, cols=f, path=path, pad=pad)
