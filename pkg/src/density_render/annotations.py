"""
Sequence annotation documents and per-frame training targets
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from config.flowcount_config import KernelSpec
from src.encoding import FieldEncoder, FieldValidator
from src.errors import AnnotationError, FlowCountError, ParseError
from src.grid_flow import DensityMap, GridShape

from .renderer import AnnotationFrame, Homography, count_map, render_density


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotationSequence:
    """Head annotations of one video sequence"""
    frames: List[AnnotationFrame]
    image_w: int
    image_h: int
    fps: float = 25.0
    homography: Optional[Homography] = None
    keyframe_interval: Optional[int] = None

    def __post_init__(self):
        times = [frame.time_index for frame in self.frames]
        if len(set(times)) != len(times):
            raise AnnotationError("annotation frames must have distinct time indices")
        object.__setattr__(self, "frames", sorted(self.frames, key=lambda frame: frame.time_index))

    @property
    def times(self) -> List[int]:
        return [frame.time_index for frame in self.frames]

    def frame_at(self, t: int) -> AnnotationFrame:
        for frame in self.frames:
            if frame.time_index == t:
                return frame
        raise AnnotationError(f"no annotation for frame {t}")

    def grid_shape(self, cell_px: int) -> GridShape:
        if self.image_w % cell_px or self.image_h % cell_px:
            raise AnnotationError(f"image {self.image_w}x{self.image_h} is not a multiple of cell_px={cell_px}")
        return GridShape(self.image_h // cell_px, self.image_w // cell_px, cell_px)

    def to_document(self) -> Dict:
        document = {
            "frames": [{"t": f.time_index, "heads": f.heads.tolist()} for f in self.frames],
            "image_w": self.image_w,
            "image_h": self.image_h,
            "fps": self.fps,
        }
        if self.homography is not None:
            document["homography"] = self.homography.to_row_major()
        if self.keyframe_interval is not None:
            document["keyframe_interval"] = self.keyframe_interval
        return document

    @classmethod
    def from_document(cls, document: Dict, source: str = "<document>") -> "AnnotationSequence":
        FieldValidator.validate_annotation_document(document, source)
        try:
            frames = [AnnotationFrame(int(entry["t"]), np.asarray(entry["heads"], dtype=np.float64).reshape(-1, 2))
                      for entry in document["frames"]]
            homography = document.get("homography")
            return cls(
                frames=frames,
                image_w=int(document["image_w"]),
                image_h=int(document["image_h"]),
                fps=float(document.get("fps", 25.0)),
                homography=Homography.from_row_major(homography) if homography is not None else None,
                keyframe_interval=document.get("keyframe_interval"),
            )
        except FlowCountError:
            raise
        except (TypeError, ValueError) as e:
            raise ParseError(f"invalid annotation values: {e}", source) from e


def save_annotations(sequence: AnnotationSequence, path: Union[str, Path]) -> None:
    Path(path).write_bytes(FieldEncoder.encode_json(sequence.to_document()))


def load_annotations(path: Union[str, Path]) -> AnnotationSequence:
    path = Path(path)
    document = FieldEncoder.decode_json(path.read_bytes(), str(path))
    sequence = AnnotationSequence.from_document(document, str(path))
    logger.info(f"Loaded {len(sequence.frames)} annotated frames from {path}")
    return sequence


def render_sequence_targets(
    frames: List[AnnotationFrame],
    kernel: KernelSpec,
    shape: GridShape,
    smooth: bool = True,
) -> Dict[int, DensityMap]:
    """Density targets per annotated frame; smooth=False gives integer per-cell counts"""
    if smooth:
        return {frame.time_index: render_density(frame, kernel, shape) for frame in frames}
    return {frame.time_index: count_map(frame, shape) for frame in frames}
