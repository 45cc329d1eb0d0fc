from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd
from numpy.lib.format import open_memmap

from haloscan.acquisition import SearchRun, SearchTruth
from haloscan.logger import logger
from haloscan.pipeline import CombinedSpectrum, GrandSpectrum, SearchOutcome

MANIFEST_FILE = "manifest.json"
TRUTH_FILE = "truth.json"
OUTCOMES_FILE = "outcomes.csv"
COMBINED_FILE = "combined.csv"
GRAND_FILE = "grand.csv"
REPORT_FILE = "report.json"
HISTOGRAM_FILE = "histogram.csv"
RAW_DIR = "raw"

PathLike = Union[str, Path]


def write_json(path: PathLike, payload: dict) -> None:
    with open(path, "w") as file:
        json.dump(payload, file, indent=2, sort_keys=True, default=_jsonable)
        file.write("\n")
    logger.info(f"Wrote {path}.")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialize {type(value).__name__}.")


def read_json(path: PathLike) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path) as file:
        return json.load(file)


def write_frame(path: PathLike, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False)
    logger.info(f"Wrote {path}.")


def prepare_run_dir(path: PathLike) -> Path:
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def write_manifest(run_dir: Path, manifest: dict) -> None:
    write_json(run_dir / MANIFEST_FILE, manifest)


def write_truth(run_dir: Path, truths: Sequence[SearchTruth]) -> None:
    """Faxion positions go to their own file, apart from analysis outputs."""
    write_json(run_dir / TRUTH_FILE, {"trials": [asdict(truth) for truth in truths]})


def outcomes_frame(outcomes: Sequence[SearchOutcome], mode: str) -> pd.DataFrame:
    frame = pd.DataFrame(
        [asdict(outcome) for outcome in outcomes],
        columns=[field.name for field in fields(SearchOutcome)],
    )
    frame = frame.rename(
        columns={
            "trial_index": "trial",
            "best_bin_offset": "offset_Hz",
            "best_excess": "excess",
        }
    )
    frame.insert(0, "mode", mode)
    return frame


def write_outcomes(run_dir: Path, outcomes: Sequence[SearchOutcome], mode: str) -> None:
    write_frame(run_dir / OUTCOMES_FILE, outcomes_frame(outcomes, mode))


def write_spectra(run_dir: Path, combined: CombinedSpectrum, grand: GrandSpectrum) -> None:
    write_frame(run_dir / COMBINED_FILE, combined.to_frame())
    write_frame(run_dir / GRAND_FILE, grand.to_frame())


def write_raw_spectra(run_dir: Path, run: SearchRun) -> Path:
    """Stream every raw spectrum of a trial into one .npy array (steps x bins)."""
    raw_dir = run_dir / RAW_DIR
    raw_dir.mkdir(exist_ok=True)
    path = raw_dir / f"trial_{run.trial_index:04d}.npy"

    array = open_memmap(
        path, mode="w+", dtype=np.float64, shape=(len(run), run.model.grid.size)
    )
    for step, spectrum in enumerate(run):
        array[step] = spectrum.psd
    array.flush()
    del array

    logger.info(f"Wrote {len(run)} raw spectra to {path}.")
    return path


@dataclass(frozen=True)
class RunRecord:
    path: Path
    manifest: dict
    outcomes: pd.DataFrame

    @property
    def mode(self) -> str:
        return self.manifest["mode"]


def read_run(path: PathLike) -> RunRecord:
    run_dir = Path(path)
    if not run_dir.is_dir():
        raise FileNotFoundError(run_dir)

    manifest = read_json(run_dir / MANIFEST_FILE)
    outcomes_path = run_dir / OUTCOMES_FILE
    if not outcomes_path.exists():
        raise FileNotFoundError(outcomes_path)

    return RunRecord(run_dir, manifest, pd.read_csv(outcomes_path))
