"""
Dataset directories: export from the simulator, load and validate.

Layout:
    manifest.json            grid, frame count, keyframe interval, file lists
    annotations.json         head annotations (AnnotationSequence document)
    frames/frame_00000.pgm   8-bit grayscale observation frames
    flows/flow_00000.flc     optional ground-truth flows f^{t,t+1} (FLC1)
    optical/optical_00000.flc optional ground-truth optical flow (FLC1)
    agents.msgpack           optional simulator trajectories
"""
import logging
import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from config.flowcount_config import KernelSpec
from src.crowd_sim import SimSequence, SimState, decode_trajectories, encode_trajectories
from src.density_render import (
    AnnotationSequence,
    count_map,
    load_annotations,
    render_sequence_targets,
    save_annotations,
)
from src.encoding import FieldEncoder
from src.errors import ParseError, ShapeError
from src.grid_flow import FlowField, GridShape, OpticalFlowField
from src.training import TrainingSequence

from .artifacts import output_lock


logger = logging.getLogger(__name__)

DATASET_FORMAT = "flowcount-dataset"
DATASET_VERSION = 1
MANIFEST_FILE = "manifest.json"
ANNOTATIONS_FILE = "annotations.json"
AGENTS_FILE = "agents.msgpack"


@dataclass
class Dataset:
    """A validated dataset directory held in memory"""
    shape: GridShape
    frames: List[np.ndarray]
    annotations: AnnotationSequence
    keyframe_interval: int
    flows: Optional[List[FlowField]] = None
    optical: Optional[List[OpticalFlowField]] = None
    states: Optional[List[SimState]] = None
    manifest: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def training_sequence(self, kernel: KernelSpec = KernelSpec(), smooth: bool = True) -> TrainingSequence:
        annotated = self.annotations.frames
        return TrainingSequence(
            shape=self.shape,
            frames=self.frames,
            targets=render_sequence_targets(annotated, kernel, self.shape, smooth),
            counts={frame.time_index: count_map(frame, self.shape) for frame in annotated},
            optical=self.optical,
            flows=self.flows,
        )


def infer_keyframe_interval(times: List[int]) -> int:
    """Greatest common step of the annotated frame indices"""
    times = sorted(set(int(t) for t in times))
    if len(times) < 2:
        return 1
    gaps = [b - a for a, b in zip(times, times[1:])]
    return max(1, reduce(math.gcd, gaps))


def export_dataset(
    sim: SimSequence,
    out_dir: Union[str, Path],
    keyframe_interval: int = 1,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write a simulated sequence; annotations are kept at multiples of keyframe_interval only"""
    shape = sim.shape
    with output_lock(out_dir) as out:
        for sub in ("frames", "flows", "optical"):
            (out / sub).mkdir(exist_ok=True)
        frame_names = []
        for t, frame in enumerate(sim.frames):
            name = f"frames/frame_{t:05d}.pgm"
            FieldEncoder.write_pgm(out / name, frame.pixels)
            frame_names.append(name)
        flow_names = []
        for t, f in enumerate(sim.flows):
            name = f"flows/flow_{t:05d}.flc"
            (out / name).write_bytes(FieldEncoder.encode_flow(f))
            flow_names.append(name)
        optical_names = []
        for t, o in enumerate(sim.optical):
            name = f"optical/optical_{t:05d}.flc"
            (out / name).write_bytes(FieldEncoder.encode_optical(o))
            optical_names.append(name)
        (out / AGENTS_FILE).write_bytes(encode_trajectories(sim.states))

        full = sim.annotations()
        kept = AnnotationSequence(
            frames=[f for f in full.frames if f.time_index % keyframe_interval == 0],
            image_w=full.image_w,
            image_h=full.image_h,
            fps=full.fps,
            homography=full.homography,
            keyframe_interval=keyframe_interval,
        )
        save_annotations(kept, out / ANNOTATIONS_FILE)

        manifest = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "grid": shape.to_dict(),
            "n_frames": sim.n_frames,
            "keyframe_interval": keyframe_interval,
            "frames": frame_names,
            "flows": flow_names,
            "optical": optical_names,
            "agents": AGENTS_FILE,
            "annotations": ANNOTATIONS_FILE,
        }
        if extra:
            manifest["source"] = extra
        (out / MANIFEST_FILE).write_bytes(FieldEncoder.encode_json(manifest))
    logger.info(f"Exported {sim.n_frames} frames to {out_dir} (V={keyframe_interval})")
    return Path(out_dir)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise ParseError(f"cannot read: {e.strerror}", str(path)) from e


def _file_list(manifest: Dict[str, Any], key: str, expected: int, source: str) -> Optional[List[str]]:
    names = manifest.get(key)
    if names is None:
        return None
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ParseError(f"manifest '{key}' must be a list of file names", source)
    if len(names) != expected:
        raise ParseError(f"manifest lists {len(names)} {key} files, expected {expected}", source)
    return names


def load_dataset(path: Union[str, Path]) -> Dataset:
    """Read and validate a dataset directory"""
    root = Path(path)
    manifest_path = root / MANIFEST_FILE
    source = str(manifest_path)
    manifest = FieldEncoder.decode_json(_read_bytes(manifest_path), source)
    if not isinstance(manifest, dict) or manifest.get("format") != DATASET_FORMAT:
        raise ParseError(f"not a {DATASET_FORMAT} manifest", source)
    try:
        grid = manifest["grid"]
        shape = GridShape(int(grid["rows"]), int(grid["cols"]), int(grid["cell_px"]))
        n_frames = int(manifest["n_frames"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad manifest header: {e}", source) from e

    frame_names = _file_list(manifest, "frames", n_frames, source)
    if not frame_names:
        raise ParseError("dataset has no frames", source)
    frames = []
    for name in frame_names:
        pixels = FieldEncoder.read_pgm(root / name)
        if pixels.shape != (shape.image_h, shape.image_w):
            raise ShapeError(f"{name} is {pixels.shape[1]}x{pixels.shape[0]} pixels, "
                             f"expected {shape.image_w}x{shape.image_h}")
        frames.append(pixels)

    annotations = load_annotations(root / manifest.get("annotations", ANNOTATIONS_FILE))
    if (annotations.image_w, annotations.image_h) != (shape.image_w, shape.image_h):
        raise ShapeError(f"annotations are for {annotations.image_w}x{annotations.image_h} images, "
                         f"frames are {shape.image_w}x{shape.image_h}")
    for frame in annotations.frames:
        if not 0 <= frame.time_index < n_frames:
            raise ParseError(f"annotation for frame {frame.time_index} outside [0, {n_frames})", source)

    inferred = infer_keyframe_interval(annotations.times)
    declared = annotations.keyframe_interval or manifest.get("keyframe_interval")
    interval = inferred
    if declared is not None:
        interval = int(declared)
        annotated = set(annotations.times)
        missing = [t for t in range(0, n_frames, interval) if t not in annotated]
        if missing:
            raise ParseError(f"missing annotation for declared keyframes {missing[:10]} (V={interval})", source)

    flows = None
    flow_names = _file_list(manifest, "flows", n_frames - 1, source)
    if flow_names is not None:
        flows = [FieldEncoder.decode_flow(_read_bytes(root / n), shape.cell_px, source=str(root / n))
                 for n in flow_names]
    optical = None
    optical_names = _file_list(manifest, "optical", n_frames - 1, source)
    if optical_names is not None:
        optical = [FieldEncoder.decode_optical(_read_bytes(root / n), shape.cell_px, source=str(root / n))
                   for n in optical_names]
    for field_list, what in ((flows, "flow"), (optical, "optical flow")):
        for t, item in enumerate(field_list or []):
            if (item.shape.rows, item.shape.cols) != (shape.rows, shape.cols):
                raise ShapeError(f"{what} {t} is on a {item.shape.rows}x{item.shape.cols} grid")

    states = None
    if manifest.get("agents"):
        agents_path = root / manifest["agents"]
        states = decode_trajectories(_read_bytes(agents_path), str(agents_path))

    logger.info(f"Loaded dataset {root}: {n_frames} frames, {len(annotations.frames)} annotated, V={interval}")
    return Dataset(shape, frames, annotations, interval, flows, optical, states, manifest)
