"""Background removal: isolate the named subject and fill the rest.

The toy segmenter estimates the background color from the image border
(modal quantized color), thresholds pixels by color distance from it, and
keeps the largest 4-connected component; the subject name breaks ties
between comparable components via its color word.  A small HTTP client
exposes the same result type against external detector services.
"""

from __future__ import annotations

import base64
import io
import json
import time as time_mod
from collections import deque
from dataclasses import dataclass

import numpy as np
import requests

from .canvas import ensure_image
from .errors import DetectionError, NetworkError, ProtocolError, ShapeError
from .palette import SPRITE_RGB, WHITE_FILL

COLOR_THRESHOLD = 0.25
_QUANT_LEVELS = 8
_TIE_RATIO = 0.9


@dataclass(frozen=True)
class SegmentationResult:
    mask: np.ndarray            # (h, w) float 0/1, ones on the subject
    box: tuple[int, int, int, int]  # top, left, bottom, right (exclusive)
    segmented: np.ndarray       # input on mask=1, fill elsewhere

    def __post_init__(self):
        top, left, bottom, right = self.box
        region = np.zeros_like(self.mask)
        region[top:bottom, left:right] = 1.0
        if np.any(self.mask * (1.0 - region)):
            raise ShapeError("mask pixels fall outside the bounding box")


def _border_background(img: np.ndarray) -> np.ndarray:
    """Mean color of the modal quantized border color bin."""
    border = np.concatenate([img[0], img[-1], img[1:-1, 0], img[1:-1, -1]])
    q = np.floor(border * _QUANT_LEVELS).clip(0, _QUANT_LEVELS - 1).astype(np.int64)
    keys = q[:, 0] * _QUANT_LEVELS * _QUANT_LEVELS + q[:, 1] * _QUANT_LEVELS + q[:, 2]
    uniq, counts = np.unique(keys, return_counts=True)
    winners = uniq[counts == counts.max()]
    mode_key = int(winners.min())  # deterministic tie-break
    return border[keys == mode_key].mean(axis=0)


def _connected_components(cand: np.ndarray) -> np.ndarray:
    """4-connected labels (0 = background) via BFS."""
    h, w = cand.shape
    labels = np.zeros((h, w), dtype=np.int64)
    current = 0
    for sy in range(h):
        for sx in range(w):
            if cand[sy, sx] and labels[sy, sx] == 0:
                current += 1
                queue = deque([(sy, sx)])
                labels[sy, sx] = current
                while queue:
                    y, x = queue.popleft()
                    for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                        if 0 <= ny < h and 0 <= nx < w and cand[ny, nx] and labels[ny, nx] == 0:
                            labels[ny, nx] = current
                            queue.append((ny, nx))
    return labels


def _name_color(subject_name: str) -> np.ndarray | None:
    for word in subject_name.lower().split():
        if word in SPRITE_RGB:
            return np.asarray(SPRITE_RGB[word])
    return None


def _mask_box(mask: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(mask)
    return int(ys.min()), int(xs.min()), int(ys.max()) + 1, int(xs.max()) + 1


def _compose(img: np.ndarray, mask: np.ndarray, fill: float) -> SegmentationResult:
    segmented = np.where(mask[:, :, None] == 1.0, img, fill)
    return SegmentationResult(mask.astype(np.float64), _mask_box(mask), segmented)


def segment_subject(
    image: np.ndarray,
    subject_name: str,
    fill: float = WHITE_FILL,
    threshold: float = COLOR_THRESHOLD,
) -> SegmentationResult:
    """Deterministic subject isolation on a single panel."""
    img = ensure_image(image, "segmenter input")
    background = _border_background(img)
    dist = np.sqrt(((img - background[None, None, :]) ** 2).sum(axis=2))
    cand = dist > threshold
    name_rgb = _name_color(subject_name)

    if not cand.any():
        # Uniformly subject-colored image: everything is the subject.
        if name_rgb is not None and np.linalg.norm(background - name_rgb) <= threshold:
            full = np.ones(img.shape[:2])
            return _compose(img, full, fill)
        raise DetectionError(f"no region distinct from the background for {subject_name!r}")

    labels = _connected_components(cand)
    areas = np.bincount(labels.ravel())
    areas[0] = 0
    best = int(areas.argmax())
    if name_rgb is not None:
        contenders = [
            lab for lab in range(1, len(areas)) if areas[lab] >= _TIE_RATIO * areas[best]
        ]
        if len(contenders) > 1:
            dists = [
                float(np.linalg.norm(img[labels == lab].mean(axis=0) - name_rgb))
                for lab in contenders
            ]
            best = contenders[int(np.argmin(dists))]
    mask = (labels == best).astype(np.float64)
    return _compose(img, mask, fill)


# ---------------------------------------------------------------------------
# remote protocol client
#
# Request:  POST JSON {"image": <base64 PNG>, "subject": <string>}
# Response: JSON {"box": [top, left, bottom, right], "mask": <base64 PNG, 1ch>}


def _encode_png(img01: np.ndarray) -> str:
    from PIL import Image

    arr = np.clip(np.round(img01 * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_mask_png(data_b64: str) -> np.ndarray:
    from PIL import Image

    raw = base64.b64decode(data_b64)
    arr = np.asarray(Image.open(io.BytesIO(raw)).convert("L"))
    return (arr >= 128).astype(np.float64)


def remote_segment(
    endpoint: str,
    image: np.ndarray,
    subject_name: str,
    fill: float = WHITE_FILL,
    retries: int = 3,
    timeout: float = 10.0,
    backoff: float = 0.1,
) -> SegmentationResult:
    """Call an external detector service; semantics match segment_subject."""
    img = ensure_image(image, "segmenter input")
    payload = {"image": _encode_png(img), "subject": subject_name}
    last_error: Exception | None = None
    for attempt in range(retries):
        try:
            return _remote_attempt(endpoint, payload, img, subject_name, fill, timeout)
        except (requests.RequestException, NetworkError, ProtocolError) as exc:
            last_error = exc
            if attempt + 1 < retries:
                time_mod.sleep(backoff * (2**attempt))
    if isinstance(last_error, ProtocolError):
        raise last_error
    raise NetworkError(
        f"segmentation endpoint failed after {retries} attempts: {last_error}"
    ) from last_error


def _remote_attempt(endpoint, payload, img, subject_name, fill, timeout) -> SegmentationResult:
    resp = requests.post(endpoint, json=payload, timeout=timeout)
    if resp.status_code >= 500:
        raise NetworkError(f"server error {resp.status_code}")
    if resp.status_code != 200:
        raise ProtocolError(f"unexpected status {resp.status_code}")
    try:
        body = resp.json()
    except (ValueError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"response is not JSON: {exc}") from exc
    if not isinstance(body, dict) or "box" not in body or "mask" not in body:
        raise ProtocolError("response missing 'box' or 'mask'")
    try:
        top, left, bottom, right = (int(v) for v in body["box"])
        mask = _decode_mask_png(body["mask"])
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed box or mask: {exc}") from exc

    h, w = img.shape[:2]
    if mask.shape != (h, w):
        raise ProtocolError(f"mask shape {mask.shape} does not match image ({h}, {w})")
    if not (0 <= top < bottom <= h and 0 <= left < right <= w):
        raise ProtocolError(f"box {body['box']} outside image bounds ({h}, {w})")
    outside = mask.copy()
    outside[top:bottom, left:right] = 0.0
    if outside.any():
        raise ProtocolError("mask pixels fall outside the reported box")
    if not mask.any():
        raise DetectionError(f"remote segmenter found no {subject_name!r}")
    segmented = np.where(mask[:, :, None] == 1.0, img, fill)
    return SegmentationResult(mask, (top, left, bottom, right), segmented)
