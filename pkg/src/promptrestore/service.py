"""HTTP inference service: prompt-guided restoration plus diagnostics.

JSON over HTTP. POST /restore runs the model on an uploaded image (multipart
form or base64 JSON), GET /health reports the loaded checkpoints, POST /embed
returns the prompt's guidance-embedding diagnostics. Requests never mutate
model state; a bounded semaphore caps concurrent inference.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .backbone import attention_maps, restore_image
from .imgio import decode_image_bytes, encode_png_base64, gray_png_base64
from .metrics import pca_basis, psnr
from .textenc import category_centroids, classify_guidance, load_textenc
from .train import load_backbone

DEFAULT_MAX_PIXELS = 4_194_304  # 2048 x 2048


def _file_id(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


class ModelBundle:
    """Loaded checkpoint pair plus derived corpus diagnostics."""

    def __init__(self, backbone_path, textenc_path, max_pixels: int = DEFAULT_MAX_PIXELS,
                 max_concurrent: int = 2):
        self.model, manifest, _ = load_backbone(backbone_path)
        self.model.eval()
        self.encoder = load_textenc(textenc_path)
        self.max_pixels = max_pixels
        self.preset = manifest["config"].get("train", {}).get("preset", "custom")
        self.checkpoint_id = f"{_file_id(backbone_path)}+{_file_id(textenc_path)}"
        self._gate = threading.Semaphore(max_concurrent)

        self.centroids = category_centroids(self.encoder)
        train_sents = self.encoder.corpus.sentences(split="train")
        zs = self.encoder.embed_batch([s.text for s in train_sents]).numpy()
        self.pca_mean, self.pca_comps = pca_basis(zs)
        pts = (zs - self.pca_mean) @ self.pca_comps.T
        self.corpus_points = [
            {"x": float(p[0]), "y": float(p[1]), "category": s.category, "text": s.text}
            for p, s in zip(pts, train_sents)
        ]

    def project(self, z: np.ndarray):
        p = (z - self.pca_mean) @ self.pca_comps.T
        return [float(p[0]), float(p[1])]


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse({"error": {"code": code, "message": message}}, status_code=status)


def _truthy(v) -> bool:
    return str(v).lower() in ("1", "true", "yes", "on")


def create_app(bundle: ModelBundle | None = None) -> FastAPI:
    app = FastAPI(title="promptrestore")
    app.state.bundle = bundle
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.get("/health")
    def health():
        b = app.state.bundle
        if b is None:
            return {"ok": False, "checkpoint": None, "preset": None}
        return {"ok": True, "checkpoint": b.checkpoint_id, "preset": b.preset}

    @app.post("/restore")
    async def restore(request: Request):
        b = app.state.bundle
        if b is None:
            return _error(503, "no_model", "no checkpoint pair is loaded")
        content_type = request.headers.get("content-type", "")
        prompt, data = "", None
        return_attention = return_embedding = False
        if content_type.startswith("multipart/"):
            form = await request.form()
            prompt = str(form.get("prompt") or "")
            return_attention = _truthy(form.get("return_attention", ""))
            return_embedding = _truthy(form.get("return_embedding", ""))
            upload = form.get("image")
            if upload is not None:
                data = await upload.read()
        else:
            try:
                body = await request.json()
            except Exception:
                return _error(400, "bad_request", "expected multipart form or JSON body")
            prompt = str(body.get("prompt") or "")
            return_attention = bool(body.get("return_attention", False))
            return_embedding = bool(body.get("return_embedding", False))
            if body.get("image_b64"):
                try:
                    data = base64.b64decode(body["image_b64"], validate=True)
                except (binascii.Error, ValueError):
                    return _error(400, "bad_image", "image_b64 is not valid base64")
        if not prompt.strip():
            return _error(400, "empty_prompt", "prompt must be non-empty")
        if not data:
            return _error(400, "bad_image", "no image payload provided")
        try:
            image = decode_image_bytes(data)
        except Exception:
            return _error(400, "bad_image", "image payload could not be decoded")
        if image.shape[0] * image.shape[1] > b.max_pixels:
            return _error(413, "image_too_large",
                          f"image has {image.shape[0] * image.shape[1]} pixels, "
                          f"limit is {b.max_pixels}")

        t0 = time.monotonic()
        with b._gate:
            z = b.encoder.embed(prompt)
            restored = restore_image(b.model, image, z)
        category, _ = classify_guidance(z, b.centroids)
        resp = {
            "restored_b64": encode_png_base64(restored),
            "inferred_category": category,
            "psnr_to_input": _json_psnr(psnr(restored, image)),
            "latency_ms": (time.monotonic() - t0) * 1000.0,
        }
        if return_attention:
            with b._gate:
                resp["attention_maps_b64"] = [gray_png_base64(m)
                                              for m in attention_maps(b.model, image, z)]
        if return_embedding:
            resp["embedding_point"] = b.project(z)
        return resp

    @app.post("/embed")
    async def embed(request: Request):
        b = app.state.bundle
        if b is None:
            return _error(503, "no_model", "no checkpoint pair is loaded")
        try:
            body = await request.json()
        except Exception:
            return _error(400, "bad_request", "expected a JSON body")
        prompt = str(body.get("prompt") or "")
        if not prompt.strip():
            return _error(400, "empty_prompt", "prompt must be non-empty")
        z = b.encoder.embed(prompt)
        category, distances = classify_guidance(z, b.centroids)
        return {
            "point": b.project(z),
            "category": category,
            "distances": distances,
            "corpus_points": b.corpus_points,
        }

    return app


def _json_psnr(value: float):
    return "inf" if value == float("inf") else value
