"""Self-describing binary container for trained models.

Byte layout (all integers little-endian, documented in README):

    offset  size  content
    0       8     magic b"LSAFEMD\\x01"
    8       4     format version, uint32 (currently 1)
    12      4     header length N, uint32
    16      N     UTF-8 JSON header
    16+N    ...   payload: float64 little-endian arrays, row-major,
                  concatenated in the header's manifest order

The JSON header holds the model kind tag, scalar configuration (dims,
history length, dt, ...), free-form metadata, and the array manifest:
a list of {"name", "shape"} entries in payload order. Serialization is
canonical (sorted keys, no whitespace) so identical models produce
identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import FeedforwardModel, FeedforwardPredictor
from .features import FeatureScaler
from .lstm import PARAM_ORDER, IntentionModel, LstmModel, LstmParams

MAGIC = b"LSAFEMD\x01"
FORMAT_VERSION = 1

KIND_LSTM = "lstm_trajectory"
KIND_FEEDFORWARD = "feedforward_trajectory"
KIND_INTENTION = "lstm_intention"


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelFile:
    kind: str
    arrays: dict[str, np.ndarray]
    config: dict
    metadata: dict
    version: int = FORMAT_VERSION


def save_model(path, kind: str, arrays: dict[str, np.ndarray], config: dict,
               metadata: dict | None = None) -> None:
    manifest = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(arr.shape)})
        payload += arr.tobytes()
    header = {
        "kind": kind,
        "config": config,
        "metadata": metadata or {},
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_model(path) -> ModelFile:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    version, header_len = struct.unpack("<II", data[8:16])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version}")
    try:
        header = json.loads(data[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from exc
    arrays = {}
    pos = 16 + header_len
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if pos + nbytes > len(data):
            raise ModelFormatError(f"{path}: truncated payload at {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(
            data[pos:pos + nbytes], dtype="<f8").reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - pos} trailing bytes")
    return ModelFile(kind=header["kind"], arrays=arrays,
                     config=header["config"], metadata=header["metadata"],
                     version=version)


# ---------------------------------------------------------------------------
# Bundle adapters
# ---------------------------------------------------------------------------

def _scaler_arrays(prefix: str, scaler: FeatureScaler) -> dict[str, np.ndarray]:
    return {f"{prefix}_mean": scaler.mean, f"{prefix}_std": scaler.std}


def _scaler_from(arrays: dict, prefix: str) -> FeatureScaler:
    return FeatureScaler(mean=arrays[f"{prefix}_mean"], std=arrays[f"{prefix}_std"])


def save_lstm_model(path, model: LstmModel, metadata: dict | None = None) -> None:
    arrays = {name: getattr(model.params, name) for name in PARAM_ORDER}
    arrays.update(_scaler_arrays("in", model.in_scaler))
    arrays.update(_scaler_arrays("out", model.out_scaler))
    config = {
        "hidden_size": model.params.hidden_size,
        "input_size": model.params.input_size,
        "output_size": model.params.output_size,
        "history_len": model.history_len,
        "dt": model.dt,
    }
    save_model(path, KIND_LSTM, arrays, config, metadata)


def save_intention_model(path, model: IntentionModel,
                         metadata: dict | None = None) -> None:
    arrays = {name: getattr(model.params, name) for name in PARAM_ORDER}
    arrays.update(_scaler_arrays("in", model.in_scaler))
    config = {
        "hidden_size": model.params.hidden_size,
        "input_size": model.params.input_size,
        "output_size": model.params.output_size,
        "history_len": model.history_len,
        "dt": model.dt,
    }
    save_model(path, KIND_INTENTION, arrays, config, metadata)


def save_feedforward_model(path, predictor: FeedforwardPredictor,
                           metadata: dict | None = None) -> None:
    arrays = {name: getattr(predictor.model, name)
              for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
    arrays.update(_scaler_arrays("in", predictor.in_scaler))
    arrays.update(_scaler_arrays("out", predictor.out_scaler))
    config = {
        "history_len": predictor.history_len,
        "dt": predictor.dt,
        "horizon": predictor.model.horizon,
    }
    save_model(path, KIND_FEEDFORWARD, arrays, config, metadata)


def load_predictor(path):
    """Load any trajectory-predictor model file into its bundle type."""
    mf = load_model(path)
    if mf.kind == KIND_LSTM:
        params = LstmParams(**{n: mf.arrays[n] for n in PARAM_ORDER})
        return LstmModel(params=params, in_scaler=_scaler_from(mf.arrays, "in"),
                         out_scaler=_scaler_from(mf.arrays, "out"),
                         history_len=int(mf.config["history_len"]),
                         dt=float(mf.config["dt"]))
    if mf.kind == KIND_FEEDFORWARD:
        model = FeedforwardModel(**{n: mf.arrays[n]
                                    for n in ("w1", "b1", "w2", "b2", "w3", "b3")})
        return FeedforwardPredictor(model=model,
                                    in_scaler=_scaler_from(mf.arrays, "in"),
                                    out_scaler=_scaler_from(mf.arrays, "out"),
                                    history_len=int(mf.config["history_len"]),
                                    dt=float(mf.config["dt"]))
    if mf.kind == KIND_INTENTION:
        params = LstmParams(**{n: mf.arrays[n] for n in PARAM_ORDER})
        return IntentionModel(params=params,
                              in_scaler=_scaler_from(mf.arrays, "in"),
                              history_len=int(mf.config["history_len"]),
                              dt=float(mf.config["dt"]))
    raise ModelFormatError(f"{path}: unknown model kind {mf.kind!r}")
