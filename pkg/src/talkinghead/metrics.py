"""Quantitative video metrics: PSNR, SSIM, CPBD, ACD and EAR blink counting.

Image inputs are HxW or HxWx3 arrays on the 8-bit scale [0, 255].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage, signal

from .errors import LengthMismatch, NoEdges, ShapeMismatch, TooShort, TooSmall

PSNR_INF = math.inf
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
ACD_COSINE_THRESHOLD = 0.02
ACD_EUCLIDEAN_THRESHOLD = 0.20

CPBD_BETA = 3.6
CPBD_P_JNB = 0.63
CPBD_BLOCK = 64
CPBD_EDGE_DENSITY = 0.002


def to_gray(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        a = a @ np.array([0.299, 0.587, 0.114])
    return a


def psnr(a, b, peak: float = 255.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak ** 2 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean SSIM over all fully-contained 11x11 Gaussian windows of the gray images."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise TooSmall(f"images smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    w = gaussian_window()

    def filt(img):
        return signal.correlate2d(img, w, mode="valid")

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------- CPBD


def sobel_edges(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Thinned vertical-edge map and the horizontal gradient.

    A pixel is an edge when its squared Sobel magnitude exceeds four times the
    image mean, the horizontal gradient dominates, and |gx| is a local maximum
    along the row.
    """
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    mag = gx * gx + gy * gy
    cutoff = 4.0 * mag.mean()
    ax = np.abs(gx)
    left = np.pad(ax, ((0, 0), (1, 0)), mode="edge")[:, :-1]
    right = np.pad(ax, ((0, 0), (0, 1)), mode="edge")[:, 1:]
    edges = (mag > cutoff) & (ax >= np.abs(gy)) & (ax >= left) & (ax >= right) & (mag > 0)
    edges[:, 0] = edges[:, -1] = False
    return edges, gx


def edge_widths(gray: np.ndarray, edges: np.ndarray, gx: np.ndarray) -> np.ndarray:
    """Distance between the intensity extrema bracketing each edge pixel along its row."""
    widths = np.zeros(gray.shape)
    h, w = gray.shape
    for r, c in zip(*np.nonzero(edges)):
        row = gray[r]
        rising = gx[r, c] > 0
        j = c
        if rising:
            while j > 0 and row[j - 1] < row[j]:
                j -= 1
            k = c
            while k < w - 1 and row[k + 1] > row[k]:
                k += 1
        else:
            while j > 0 and row[j - 1] > row[j]:
                j -= 1
            k = c
            while k < w - 1 and row[k + 1] < row[k]:
                k += 1
        widths[r, c] = max(k - j, 1)
    return widths


def jnb_width(contrast: float) -> float:
    return 5.0 if contrast <= 50 else 3.0


def cpbd(img) -> float:
    """Cumulative probability of blur detection (higher is sharper)."""
    gray = to_gray(img)
    if min(gray.shape) < CPBD_BLOCK:
        raise TooSmall(f"CPBD needs at least {CPBD_BLOCK}x{CPBD_BLOCK} pixels")
    edges, gx = sobel_edges(gray)
    widths = edge_widths(gray, edges, gx)
    probs = []
    for i in range(gray.shape[0] // CPBD_BLOCK):
        for j in range(gray.shape[1] // CPBD_BLOCK):
            rows = slice(i * CPBD_BLOCK, (i + 1) * CPBD_BLOCK)
            cols = slice(j * CPBD_BLOCK, (j + 1) * CPBD_BLOCK)
            if np.count_nonzero(edges[rows, cols]) <= CPBD_EDGE_DENSITY * CPBD_BLOCK * CPBD_BLOCK:
                continue
            block = gray[rows, cols]
            wj = jnb_width(int(block.max() - block.min()))
            bw = widths[rows, cols][edges[rows, cols]]
            probs.append(1.0 - np.exp(-np.abs(bw / wj) ** CPBD_BETA))
    if not probs:
        raise NoEdges("no block passes the edge-density threshold")
    p = np.concatenate(probs)
    return float(np.mean(p <= CPBD_P_JNB))


# ---------------------------------------------------------------- ACD


@dataclass
class AcdResult:
    cosine: float
    euclidean: float
    same_identity: bool
    embedder: str = "custom"


def acd(gen_frames: Sequence, real_frames: Sequence, embedder: Callable, embedder_name: str = "custom"
        ) -> AcdResult:
    """Mean cosine and Euclidean distance between matched frame embeddings.

    ``embedder`` maps a sequence of frames to an (N, D) array.
    """
    if len(gen_frames) != len(real_frames):
        raise LengthMismatch(f"{len(gen_frames)} generated vs {len(real_frames)} reference frames")
    if len(gen_frames) == 0:
        raise LengthMismatch("no frames")
    g = np.asarray(embedder(gen_frames), dtype=np.float64)
    r = np.asarray(embedder(real_frames), dtype=np.float64)
    ng = np.linalg.norm(g, axis=1)
    nr = np.linalg.norm(r, axis=1)
    cos = np.sum(g * r, axis=1) / np.maximum(ng * nr, 1e-12)
    cos_d = float(np.mean(np.clip(1.0 - cos, 0.0, 2.0)))
    euc_d = float(np.mean(np.linalg.norm(g - r, axis=1)))
    same = cos_d <= ACD_COSINE_THRESHOLD and euc_d <= ACD_EUCLIDEAN_THRESHOLD
    return AcdResult(cos_d, euc_d, same, embedder_name)


def extractor_embedder(extractor) -> Callable:
    """Identity embedder from mean-pooled features of a frozen extractor.

    Not comparable with published ACD numbers, which use a face-recognition network.
    """
    import torch

    def embed(frames):
        x = np.stack([np.asarray(f, dtype=np.float32) for f in frames])
        x = torch.from_numpy(np.moveaxis(x, -1, 1) / 127.5 - 1.0)
        with torch.no_grad():
            return extractor.embed(x).numpy()

    return embed


# ---------------------------------------------------------------- blinks


def rolling_median(x: np.ndarray, window: int = 25) -> np.ndarray:
    half = window // 2
    return np.array([np.median(x[max(0, i - half) : i + half + 1]) for i in range(len(x))])


def detect_blinks(ear_sequence, ratio: float = 0.75, window: int = 25) -> int:
    """Count maximal runs where EAR drops below ``ratio`` x its rolling median."""
    e = np.asarray(ear_sequence, dtype=np.float64)
    if e.size < 3:
        raise TooShort("blink detection needs at least 3 frames")
    low = e < ratio * rolling_median(e, window)
    return int(np.sum(low[1:] & ~low[:-1]) + low[0])


# ---------------------------------------------------------------- report


@dataclass
class MetricReport:
    clip_id: str
    ssim: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    cpbd: list = field(default_factory=list)
    acd_cosine: Optional[float] = None
    acd_euclidean: Optional[float] = None
    acd_same_identity: Optional[bool] = None
    embedder: Optional[str] = None
    blink_count: Optional[int] = None
    wer: Optional[float] = None
    psnr_infinite_frames: int = 0

    def means(self) -> dict:
        finite = [v for v in self.psnr_db if math.isfinite(v)]
        return {
            "ssim": float(np.mean(self.ssim)) if self.ssim else None,
            "psnr_db": float(np.mean(finite)) if finite else None,
            "cpbd": float(np.mean(cp)) if (cp := [v for v in self.cpbd if v is not None]) else None,
        }

    def to_record(self) -> dict:
        psnr_vals = [v if math.isfinite(v) else "inf" for v in self.psnr_db]
        return {
            "clip_id": self.clip_id,
            "per_frame": {"ssim": self.ssim, "psnr_db": psnr_vals, "cpbd": self.cpbd},
            "mean": self.means(),
            "psnr_infinite_frames": self.psnr_infinite_frames,
            "acd_cosine": self.acd_cosine,
            "acd_euclidean": self.acd_euclidean,
            "acd_same_identity": self.acd_same_identity,
            "embedder": self.embedder,
            "blink_count": self.blink_count,
            "wer": self.wer,
        }


def evaluate_clip(clip_id: str, generated: Sequence, reference: Sequence, embedder: Optional[Callable] = None,
                  embedder_name: str = "custom", ear_sequence=None) -> MetricReport:
    if len(generated) != len(reference):
        raise LengthMismatch(f"{clip_id}: {len(generated)} generated vs {len(reference)} reference frames")
    rep = MetricReport(clip_id)
    for g, r in zip(generated, reference):
        p = psnr(g, r)
        rep.psnr_db.append(p)
        rep.psnr_infinite_frames += int(not math.isfinite(p))
        rep.ssim.append(ssim(g, r))
        try:
            rep.cpbd.append(cpbd(g))
        except NoEdges:
            rep.cpbd.append(None)
    if embedder is not None:
        res = acd(generated, reference, embedder, embedder_name)
        rep.acd_cosine, rep.acd_euclidean, rep.acd_same_identity = res.cosine, res.euclidean, res.same_identity
        rep.embedder = embedder_name
    if ear_sequence is not None:
        rep.blink_count = detect_blinks(ear_sequence)
    return rep
