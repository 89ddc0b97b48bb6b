"""Raster files: label maps as binary PGM, depth maps as DPT1, object masks with sidecars.

Formats
- PGM (P5): header 'P5\\n<width> <height>\\n<maxval>\\n', maxval 255 gives 8-bit pixels,
  larger values 16-bit big-endian pixels.
- DPT1: magic b'DPT1', u32 width, u32 height, f32 empty sentinel (+inf), then width*height
  f32 depths, row major, little endian.
- Object mask: '<name>.pgm' (non-zero = inside) next to '<name>.txt' holding 'class_id confidence'.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Union

import numpy as np

from .renderer import DepthMap, LabelMap

DEPTH_MAGIC = b'DPT1'
DEPTH_HEADER = np.dtype([('magic', 'S4'), ('width', '<u4'), ('height', '<u4'), ('sentinel', '<f4')])

PathLike = Union[str, Path]


def writePgm(path: PathLike, data: np.ndarray) -> None:
    """Write a single-channel unsigned raster as binary PGM."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise ValueError(f'PGM needs a 2D raster, got shape {data.shape}')
    if data.size and (data.min() < 0 or data.max() > 65535):
        raise ValueError('PGM pixel values must lie in [0, 65535]')
    height, width = data.shape
    maxValue = 255 if not data.size or data.max() <= 255 else 65535
    pixels = data.astype(np.uint8) if maxValue == 255 else data.astype('>u2')
    with open(path, 'wb') as fh:
        fh.write(f'P5\n{width} {height}\n{maxValue}\n'.encode('ascii'))
        fh.write(pixels.tobytes())


def readPgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM (8 or 16 bit) into a uint16 array."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    position = 0
    while len(tokens) < 4:
        while position < len(data) and data[position:position + 1].isspace():
            position += 1
        if data[position:position + 1] == b'#':
            position = data.index(b'\n', position) + 1
            continue
        start = position
        while position < len(data) and not data[position:position + 1].isspace():
            position += 1
        if start == position:
            raise ValueError(f'{path}: truncated PGM header')
        tokens.append(data[start:position])
    position += 1  # single whitespace after maxval
    if tokens[0] != b'P5':
        raise ValueError(f'{path}: not a binary PGM file')
    try:
        width, height, maxValue = (int(token) for token in tokens[1:])
    except ValueError as e:
        raise ValueError(f'{path}: invalid PGM header') from e
    dtype = np.dtype(np.uint8) if maxValue < 256 else np.dtype('>u2')
    expected = width * height * dtype.itemsize
    if len(data) - position < expected:
        raise ValueError(f'{path}: expected {expected} bytes of pixel data')
    pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=position)
    return pixels.reshape(height, width).astype(np.uint16)


def saveLabelMap(path: PathLike, label: LabelMap) -> None:
    """Write a label map as PGM; class ids are the pixel values."""
    writePgm(path, label.data)


def loadLabelMap(path: PathLike) -> LabelMap:
    """Read a label map written by saveLabelMap."""
    return LabelMap(readPgm(path))


def saveDepthMap(path: PathLike, depth: DepthMap) -> None:
    """Write a depth map as DPT1; empty pixels hold +inf."""
    header = np.array([(DEPTH_MAGIC, depth.width, depth.height, np.inf)], dtype=DEPTH_HEADER)
    with open(path, 'wb') as fh:
        fh.write(header.tobytes())
        fh.write(depth.data.astype('<f4').tobytes())


def loadDepthMap(path: PathLike) -> DepthMap:
    """Read a DPT1 depth map; pixels equal to the file sentinel become +inf."""
    data = Path(path).read_bytes()
    if len(data) < DEPTH_HEADER.itemsize or data[:4] != DEPTH_MAGIC:
        raise ValueError(f'{path}: not a DPT1 depth file')
    header = np.frombuffer(data, dtype=DEPTH_HEADER, count=1)[0]
    width, height = int(header['width']), int(header['height'])
    if len(data) != DEPTH_HEADER.itemsize + 4 * width * height:
        raise ValueError(f'{path}: size does not match {width}x{height}')
    values = np.frombuffer(data, dtype='<f4', offset=DEPTH_HEADER.itemsize).astype(np.float64)
    sentinel = float(header['sentinel'])
    values[values == sentinel] = np.inf
    return DepthMap(values.reshape(height, width))


def saveMask(path: PathLike, mask: np.ndarray, classId: int, confidence: float) -> None:
    """Write a binary mask as PGM (0/255) and its 'class_id confidence' sidecar."""
    path = Path(path)
    writePgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))
    path.with_suffix('.txt').write_text(f'{int(classId)} {float(confidence):.9g}\n', encoding='utf-8')


def loadMask(path: PathLike) -> tuple[np.ndarray, int, float]:
    """Read a mask and its sidecar.

    Returns:
        tuple: boolean mask, class id, confidence
    """
    path = Path(path)
    sidecar = path.with_suffix('.txt')
    try:
        parts = sidecar.read_text(encoding='utf-8').split()
        classId, confidence = int(parts[0]), float(parts[1])
    except (OSError, IndexError, ValueError) as e:
        raise ValueError(f"{sidecar}: expected 'class_id confidence'") from e
    return readPgm(path) > 0, classId, confidence


def loadMaskDirectory(directory: PathLike) -> list[tuple[np.ndarray, int, float]]:
    """All masks of a directory, in file-name order; PGM files without sidecar are skipped."""
    masks = []
    for path in sorted(Path(directory).glob('*.pgm')):
        if not path.with_suffix('.txt').is_file():
            logging.warning('Mask %s has no sidecar, skipped', path)
            continue
        masks.append(loadMask(path))
    return masks
