import json
import logging
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from model.transformer import Model, ModelConfig, ModelConfigError, init_model

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
_HEADER_LEN = struct.Struct("<Q")


class CheckpointError(ValueError):
    def __init__(self, path: Path, reason: str) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


def save_checkpoint(model: Model, path: Path) -> None:
    """
    File layout: 8-byte little-endian header length, UTF-8 JSON header
    {"version", "config", "params": [{"name", "shape"}]}, then every parameter
    as little-endian float64 in header order.
    """
    header = {
        "version": FORMAT_VERSION,
        "config": model.config.model_dump(),
        "params": [{"name": name, "shape": list(node.shape)} for name, node in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_HEADER_LEN.pack(len(blob)))
        f.write(blob)
        for _, node in model.params.items():
            f.write(np.ascontiguousarray(node.value, dtype="<f8").tobytes())
    logger.info("Checkpoint saved: %d parameters -> %s", model.params.num_parameters, path)


def load_checkpoint(path: Path) -> Model:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(path, f"cannot read file ({exc.strerror})") from exc
    if len(raw) < _HEADER_LEN.size:
        raise CheckpointError(path, "file too short")
    (header_len,) = _HEADER_LEN.unpack_from(raw)
    body_start = _HEADER_LEN.size + header_len
    if body_start > len(raw):
        raise CheckpointError(path, "header length runs past end of file")
    try:
        header = json.loads(raw[_HEADER_LEN.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(path, "header is not valid JSON") from exc
    if not isinstance(header, dict):
        raise CheckpointError(path, "header is not a JSON object")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(path, f"unsupported format version {header.get('version')!r}")

    try:
        config = ModelConfig.model_validate(header["config"])
        model = init_model(config)
    except (KeyError, ValidationError, ModelConfigError) as exc:
        raise CheckpointError(path, f"invalid model config ({exc})") from exc

    expected = [(name, list(shape)) for name, shape in model.params.shapes().items()]
    stored = [(entry.get("name"), entry.get("shape")) for entry in header.get("params", [])]
    if stored != expected:
        raise CheckpointError(path, "parameter names or shapes do not match the config")

    payload = np.frombuffer(raw, dtype="<f8", offset=body_start) if (len(raw) - body_start) % 8 == 0 else None
    if payload is None or payload.size != model.params.num_parameters:
        raise CheckpointError(path, "payload size does not match parameter shapes")

    arrays, offset = {}, 0
    for name, shape in expected:
        size = int(np.prod(shape))
        arrays[name] = payload[offset: offset + size].reshape(shape)
        offset += size
    if not np.all(np.isfinite(payload)):
        raise CheckpointError(path, "payload contains non-finite values")
    model.params.load_arrays(arrays)
    logger.info("Checkpoint loaded: %s", path)
    return model
