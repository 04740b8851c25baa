"""
Run artifacts: output-directory lock, run manifest and metric tables
"""
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Sequence, Union

import pandas as pd

from config.experiment_config import ExperimentConfig
from src.encoding import FieldEncoder
from src.errors import ConfigError


logger = logging.getLogger(__name__)

LOCK_NAME = ".flowcount.lock"
MANIFEST_NAME = "run_manifest.json"
CURVE_COLUMNS = ["iteration", "annotation_ratio", "mae", "rmse"]


@contextmanager
def output_lock(out_dir: Union[str, Path]) -> Iterator[Path]:
    """Create out_dir and hold its lock file for the duration of the block"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(str(lock), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(f"{out_dir} is locked by another run ({lock} exists)") from None
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def run_manifest(command: str, config: ExperimentConfig, extra: Dict[str, Any] = None) -> Dict[str, Any]:
    """Manifest body; contains no wall-clock data so reruns stay byte-identical"""
    manifest = {
        "command": command,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "config": config.model_dump(mode="json"),
        "weights": config.weights.model_dump(mode="json"),
    }
    if extra:
        manifest.update(extra)
    return manifest


def write_manifest(out_dir: Union[str, Path], manifest: Dict[str, Any]) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_bytes(FieldEncoder.encode_json(manifest))
    logger.info(f"Wrote run manifest {path}")
    return path


def write_table(rows: Sequence[Dict[str, Any]], columns: List[str], path: Union[str, Path]) -> Path:
    table = pd.DataFrame(list(rows), columns=columns)
    FieldEncoder.write_csv(table, path)
    return Path(path)
