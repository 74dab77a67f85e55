"""Styles de danse/musique reconnus par le pipeline."""

import numbers
from enum import IntEnum

from .exceptions import DataError


class StyleLabel(IntEnum):
    BALLET = 0
    MJ = 1
    SALSA = 2

    @classmethod
    def parse(cls, value) -> 'StyleLabel':
        """Accepte un StyleLabel, un indice ou un nom ('ballet', 'MJ', ...)"""
        if isinstance(value, cls):
            return value
        if isinstance(value, numbers.Integral) and 0 <= value < len(cls):
            return cls(int(value))
        if isinstance(value, str):
            key = value.strip().upper()
            if key in cls.__members__:
                return cls[key]
        raise DataError(f"Style inconnu : {value!r}")

    @property
    def display(self) -> str:
        return {'BALLET': 'Ballet', 'MJ': 'MJ', 'SALSA': 'Salsa'}[self.name]


NUM_STYLES = len(StyleLabel)
