"""
Format de checkpoint : conteneur binaire plat, petit-boutiste.

    en-tête   : b'CHRO' | version u32 | nombre d'enregistrements u32
    record    : longueur du nom u16 | nom utf-8 | ndim u8 | dims u32 x ndim | données f64
"""

import logging
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Union

import numpy as np

from .exceptions import DataError

logger = logging.getLogger(__name__)

MAGIC = b'CHRO'
VERSION = 1


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> Path:
    """Écrit les tableaux (nom -> ndarray float64) dans un fichier checkpoint"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_suffix(path.suffix + '.tmp')
    with open(tmp_path, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(struct.pack('<II', VERSION, len(arrays)))
        for name, array in arrays.items():
            array = np.asarray(array, dtype='<f8')
            encoded = name.encode('utf-8')
            handle.write(struct.pack('<H', len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack('<B', array.ndim))
            handle.write(struct.pack(f'<{array.ndim}I', *array.shape))
            handle.write(np.ascontiguousarray(array).tobytes())
    os.replace(tmp_path, path)
    logger.info(f"Checkpoint écrit : {path} ({len(arrays)} tenseurs)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Checkpoint introuvable : {path}")
    arrays = OrderedDict()
    with open(path, 'rb') as handle:
        if handle.read(4) != MAGIC:
            raise DataError(f"{path} n'est pas un checkpoint valide")
        version, count = struct.unpack('<II', _read(handle, 8, path))
        if version != VERSION:
            raise DataError(f"Version de checkpoint non supportée : {version}")
        for _ in range(count):
            (name_length,) = struct.unpack('<H', _read(handle, 2, path))
            name = _read(handle, name_length, path).decode('utf-8')
            (ndim,) = struct.unpack('<B', _read(handle, 1, path))
            shape = struct.unpack(f'<{ndim}I', _read(handle, 4 * ndim, path))
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read(handle, 8 * size, path), dtype='<f8')
            arrays[name] = data.astype(np.float64).reshape(shape)
    logger.debug(f"Checkpoint chargé : {path} ({len(arrays)} tenseurs)")
    return arrays


def _read(handle, size: int, path: Path) -> bytes:
    chunk = handle.read(size)
    if len(chunk) != size:
        raise DataError(f"Checkpoint tronqué : {path}")
    return chunk
