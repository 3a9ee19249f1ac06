"""Checkpoint archives for backbones and heads.

An archive is an uncompressed zip holding ``meta.json`` (config, freeze
policy, provenance) and one ``.npy`` file per parameter tensor, keyed by its
hierarchical name. Entry timestamps are pinned so identical weights always
give identical bytes.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .encoder import Encoder, EncoderConfig, set_freeze_policy
from .heads import HeadConfig, build_head

FORMAT = "childadult-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_archive(path: str | Path, kind: str, meta: dict, state: dict[str, torch.Tensor]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": FORMAT, "version": VERSION, "kind": kind, **meta, "tensors": list(state)}
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "meta.json", json.dumps(header, indent=2, sort_keys=True).encode())
        for name, tensor in state.items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _write_entry(zf, f"tensors/{name}.npy", buf.getvalue())
    return path


def load_archive(path: str | Path, kind: str | None = None) -> tuple[dict, dict[str, torch.Tensor]]:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != FORMAT:
                raise CheckpointError(f"{path}: not a {FORMAT} archive")
            if kind is not None and meta.get("kind") != kind:
                raise CheckpointError(f"{path}: expected a {kind} checkpoint, found {meta.get('kind')!r}")
            state = {
                name: torch.from_numpy(np.load(io.BytesIO(zf.read(f"tensors/{name}.npy")), allow_pickle=False))
                for name in meta["tensors"]
            }
    except (zipfile.BadZipFile, KeyError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    return meta, state


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_encoder(path: str | Path, encoder: Encoder, extra: dict | None = None) -> Path:
    meta = {
        "config": encoder.config.to_dict(),
        "freeze_policy": {"trainable_top_k": encoder.freeze_policy.trainable_top_k},
        "extra": extra or {},
    }
    return save_archive(path, "encoder", meta, encoder.state_dict())


def load_encoder(path: str | Path) -> tuple[Encoder, dict]:
    meta, state = load_archive(path, "encoder")
    encoder = Encoder(EncoderConfig.from_dict(meta["config"]))
    encoder.load_state_dict(state)
    set_freeze_policy(encoder, meta["freeze_policy"]["trainable_top_k"])
    return encoder.eval(), meta


def save_head(path: str | Path, head: torch.nn.Module, backbone: str | Path, extra: dict | None = None) -> Path:
    meta = {
        "config": head.config.to_dict(),
        "backbone": {"name": Path(backbone).name, "sha256": file_digest(backbone)},
        "extra": extra or {},
    }
    return save_archive(path, "head", meta, head.state_dict())


def load_head(path: str | Path, backbone: str | Path | None = None) -> tuple[torch.nn.Module, dict]:
    """Load a head; if ``backbone`` is given it must be the file the head was trained on."""
    meta, state = load_archive(path, "head")
    if backbone is not None and file_digest(backbone) != meta["backbone"]["sha256"]:
        raise CheckpointError(
            f"{path} was trained against backbone {meta['backbone']['name']} "
            f"(sha256 {meta['backbone']['sha256'][:12]}...), not {backbone}"
        )
    head = build_head(HeadConfig.from_dict(meta["config"]))
    head.load_state_dict(state)
    return head.eval(), meta
