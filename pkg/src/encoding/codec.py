"""
Encoding utilities for grid fields, checkpoints, trajectories and tables
"""
import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import msgpack
import numpy as np
import orjson
import pandas as pd
from PIL import Image, UnidentifiedImageError

from src.errors import ParseError, ShapeError
from src.grid_flow import CHANNEL_NAMES, DensityMap, FlowDirection, FlowField, GridShape, OpticalFlowField


logger = logging.getLogger(__name__)

FLC1_MAGIC = b"FLC1"
FLC1_HEADER = struct.Struct("<4sIII")
CHECKPOINT_MAGIC = b"FLCK"
CHECKPOINT_HEADER = struct.Struct("<4sI")

PathLike = Union[str, Path]


class FieldEncoder:
    """Handles encoding/decoding of fields and run artifacts"""

    @staticmethod
    def encode_flc1(values: np.ndarray) -> bytes:
        """Encode a rows x cols (x channels) array as FLC1 little-endian float32"""
        array = np.asarray(values, dtype=np.float64)
        if array.ndim == 2:
            array = array[..., None]
        if array.ndim != 3:
            raise ShapeError(f"FLC1 stores rows x cols x channels arrays, got {array.shape}")
        rows, cols, channels = array.shape
        header = FLC1_HEADER.pack(FLC1_MAGIC, rows, cols, channels)
        return header + array.astype("<f4").tobytes(order="C")

    @staticmethod
    def decode_flc1(data: bytes, source: str = "<bytes>") -> np.ndarray:
        """Decode FLC1 bytes to a float64 rows x cols x channels array"""
        if len(data) < FLC1_HEADER.size:
            raise ParseError("truncated FLC1 header", source, len(data))
        magic, rows, cols, channels = FLC1_HEADER.unpack_from(data, 0)
        if magic != FLC1_MAGIC:
            raise ParseError(f"bad FLC1 magic {magic!r}", source, 0)
        expected = FLC1_HEADER.size + 4 * rows * cols * channels
        if len(data) != expected:
            raise ParseError(f"FLC1 payload is {len(data)} bytes, expected {expected}", source, FLC1_HEADER.size)
        payload = np.frombuffer(data, dtype="<f4", offset=FLC1_HEADER.size)
        return payload.astype(np.float64).reshape(rows, cols, channels)

    @staticmethod
    def encode_flow(f: FlowField) -> bytes:
        return FieldEncoder.encode_flc1(f.channels)

    @staticmethod
    def decode_flow(data: bytes, cell_px: int, direction: FlowDirection = FlowDirection.FORWARD,
                    source: str = "<bytes>") -> FlowField:
        array = FieldEncoder.decode_flc1(data, source)
        if array.shape[2] != len(CHANNEL_NAMES):
            raise ParseError(f"flow file has {array.shape[2]} channels", source, 12)
        return FlowField(GridShape(array.shape[0], array.shape[1], cell_px), array, direction)

    @staticmethod
    def encode_density(m: DensityMap) -> bytes:
        return FieldEncoder.encode_flc1(m.values)

    @staticmethod
    def decode_density(data: bytes, cell_px: int, source: str = "<bytes>") -> DensityMap:
        array = FieldEncoder.decode_flc1(data, source)
        if array.shape[2] != 1:
            raise ParseError(f"density file has {array.shape[2]} channels", source, 12)
        return DensityMap(GridShape(array.shape[0], array.shape[1], cell_px), array[..., 0])

    @staticmethod
    def encode_optical(o: OpticalFlowField) -> bytes:
        return FieldEncoder.encode_flc1(o.uv)

    @staticmethod
    def decode_optical(data: bytes, cell_px: int, source: str = "<bytes>") -> OpticalFlowField:
        array = FieldEncoder.decode_flc1(data, source)
        if array.shape[2] != 2:
            raise ParseError(f"optical flow file has {array.shape[2]} channels", source, 12)
        return OpticalFlowField(GridShape(array.shape[0], array.shape[1], cell_px), array)

    @staticmethod
    def encode_json(document: Any) -> bytes:
        """Canonical JSON: sorted keys, numpy arrays as lists"""
        return orjson.dumps(
            document,
            option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2 | orjson.OPT_SERIALIZE_NUMPY,
        )

    @staticmethod
    def decode_json(data: bytes, source: str = "<bytes>") -> Any:
        try:
            return orjson.loads(data)
        except orjson.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", source, e.pos) from e

    @staticmethod
    def encode_checkpoint(descriptor: Dict[str, Any], theta: np.ndarray) -> bytes:
        """Architecture descriptor as JSON followed by the float64 parameter block"""
        header = orjson.dumps(descriptor, option=orjson.OPT_SORT_KEYS)
        block = np.ascontiguousarray(theta, dtype="<f8").tobytes()
        return CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, len(header)) + header + block

    @staticmethod
    def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Tuple[Dict[str, Any], np.ndarray]:
        if len(data) < CHECKPOINT_HEADER.size:
            raise ParseError("truncated checkpoint", source, 0)
        magic, header_len = CHECKPOINT_HEADER.unpack_from(data, 0)
        if magic != CHECKPOINT_MAGIC:
            raise ParseError(f"bad checkpoint magic {magic!r}", source, 0)
        start = CHECKPOINT_HEADER.size
        descriptor = FieldEncoder.decode_json(data[start:start + header_len], source)
        block = data[start + header_len:]
        if len(block) % 8:
            raise ParseError("parameter block is not a whole number of float64", source, start + header_len)
        return descriptor, np.frombuffer(block, dtype="<f8").astype(np.float64)

    @staticmethod
    def encode_msgpack(records: List[Dict[str, Any]]) -> bytes:
        """Encode trajectory snapshots (arrays as raw little-endian bytes)"""
        return msgpack.packb(records, use_bin_type=True)

    @staticmethod
    def decode_msgpack(data: bytes, source: str = "<bytes>") -> List[Dict[str, Any]]:
        try:
            return msgpack.unpackb(data, raw=False)
        except (msgpack.ExtraData, msgpack.FormatError, ValueError) as e:
            raise ParseError(f"invalid msgpack: {e}", source) from e

    @staticmethod
    def write_pgm(path: PathLike, pixels: np.ndarray) -> None:
        """Write [0, 1] grayscale pixels as an 8-bit binary PGM"""
        levels = np.round(np.clip(np.asarray(pixels, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(levels).save(str(path), format="PPM")

    @staticmethod
    def read_pgm(path: PathLike) -> np.ndarray:
        try:
            with Image.open(str(path)) as image:
                if image.mode != "L":
                    raise ParseError(f"expected 8-bit grayscale PGM, got mode {image.mode}", str(path), 0)
                return np.asarray(image, dtype=np.float64) / 255.0
        except UnidentifiedImageError as e:
            raise ParseError("not a PGM image", str(path), 0) from e

    @staticmethod
    def flow_table(f: FlowField) -> pd.DataFrame:
        """One row per cell: row, col and the ten channels"""
        rows, cols = np.indices((f.shape.rows, f.shape.cols))
        table = pd.DataFrame({"row": rows.ravel(), "col": cols.ravel()})
        for k, name in enumerate(CHANNEL_NAMES):
            table[name] = f.channels[..., k].ravel()
        return table

    @staticmethod
    def density_table(m: DensityMap) -> pd.DataFrame:
        rows, cols = np.indices((m.shape.rows, m.shape.cols))
        return pd.DataFrame({"row": rows.ravel(), "col": cols.ravel(), "count": m.values.ravel()})

    @staticmethod
    def write_csv(table: pd.DataFrame, path: PathLike) -> None:
        table.to_csv(str(path), index=False, lineterminator="\n")


class FieldValidator:
    """Validates documents read from disk"""

    @staticmethod
    def validate_annotation_document(document: Any, source: str = "<document>") -> None:
        """Check the sequence annotation layout"""
        if not isinstance(document, dict):
            raise ParseError("annotation document must be an object", source)
        required = ["frames", "image_w", "image_h"]
        missing = [key for key in required if key not in document]
        if missing:
            raise ParseError(f"annotation document misses {missing}", source)
        if not isinstance(document["frames"], list):
            raise ParseError("'frames' must be a list", source)
        for position, frame in enumerate(document["frames"]):
            if not isinstance(frame, dict) or "t" not in frame or "heads" not in frame:
                raise ParseError(f"frame entry {position} needs 't' and 'heads'", source, position)
            for head in frame["heads"]:
                if not isinstance(head, (list, tuple)) or len(head) != 2:
                    raise ParseError(f"frame t={frame['t']} has a malformed head {head!r}", source, position)
        homography = document.get("homography")
        if homography is not None and (not isinstance(homography, list) or len(homography) != 9):
            raise ParseError("homography must be 9 reals in row-major order", source)

    @staticmethod
    def validate_metric_table(table: pd.DataFrame, columns: List[str], source: str = "<table>") -> None:
        missing = [c for c in columns if c not in table.columns]
        if missing:
            raise ParseError(f"metric table misses columns {missing}", source)
