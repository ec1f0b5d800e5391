"""Shared helpers for the test suite."""
import numpy as np

from idstyle.imageio import resize


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def smooth_texture(rng: np.random.Generator, h: int, w: int,
                   channels: int = 3, cells: int = 4) -> np.ndarray:
    """Low-frequency random image in [0.05, 0.95]; safe for embeddings
    (non-constant) and friendly to resampling round trips."""
    coarse = rng.uniform(0.05, 0.95, size=(cells, cells, channels))
    return resize(coarse, w, h, "bicubic")


def quantized(img: np.ndarray) -> np.ndarray:
    """The image as it comes back after one 8-bit save/load round trip."""
    return np.floor(np.asarray(img) * 255.0 + 0.5) / 255.0
