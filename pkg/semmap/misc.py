""" Misc. functions that do not require an instance """
import csv
import sys
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO, Union

import numpy as np

HELP_TEXT = """
Typical session:
  semmap gen-scene --spec scene.cfg --out scene/
  semmap filter-moving --rounds scene/round_*.spc --out map.spc
  semmap render --map map.spc --poses scene/poses.txt --cam 500,500,304,256,608,512 --out renders/
  semmap simulate-noise --poses scene/poses.txt --out coarse.txt
  semmap build-road-field --map map.spc --out road.rof
  semmap rectify --poses coarse.txt --field road.rof --out rectified.txt
  semmap refine --map map.spc --coarse rectified.txt --gt scene/poses.txt \\
      --cam 500,500,304,256,608,512 --out refined.txt
  semmap smooth --poses refined.txt --dt 0.1 --out smoothed.txt
  semmap eval-pose --est smoothed.txt --gt scene/poses.txt

Or everything at once, driven by a JSON configuration:
  semmap pipeline --config run.json
"""


def parseFloats(text: str, count: int = 0) -> list[float]:
    """Parse a comma separated list of numbers.
    Args:
        text (str): e.g. '0.025,0.05'
        count (int): required number of values; 0 accepts any
    Returns:
        list: the values
    """
    try:
        values = [float(part) for part in text.split(',') if part.strip()]
    except ValueError as e:
        raise ValueError(f"Invalid number list '{text}'") from e
    if count and len(values) != count:
        raise ValueError(f"Expected {count} comma separated values, got '{text}'")
    return values


def intensityImage(intensity: np.ndarray) -> np.ndarray:
    """8-bit image of reflectance values in [0, 1]; empty cells (nan) are black."""
    scaled = np.nan_to_num(np.clip(intensity, 0.0, 1.0), nan=0.0) * 255.0
    return np.rint(scaled).astype(np.uint8)


def writeCsv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a CSV file, or to stdout for path '-'; floats keep nine significant digits."""
    if str(path) == '-':
        _writeRows(sys.stdout, header, rows)
        return
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        _writeRows(fh, header, rows)


def _writeRows(fh: TextIO, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    writer = csv.writer(fh)
    writer.writerow(header)
    for row in rows:
        writer.writerow([f'{value:.9g}' if isinstance(value, float) else value for value in row])
