"""8-bit RGB file/bytes boundary; floats in [0,1] everywhere else."""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def to_float(img_u8: np.ndarray) -> np.ndarray:
    return img_u8.astype(np.float64) / 255.0

def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)

def imread(path) -> np.ndarray:
    return to_float(np.array(Image.open(path).convert("RGB")))

def imwrite(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path)

def decode_image_bytes(data: bytes) -> np.ndarray:
    return to_float(np.array(Image.open(io.BytesIO(data)).convert("RGB")))

def encode_png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img)).save(buf, format="PNG")
    return buf.getvalue()

def encode_png_base64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png_bytes(img)).decode("ascii")

def decode_base64_image(data: str) -> np.ndarray:
    return decode_image_bytes(base64.b64decode(data))

def gray_png_base64(map2d: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(np.asarray(map2d))[..., None].repeat(3, axis=2)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")
