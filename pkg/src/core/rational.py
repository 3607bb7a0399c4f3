"""
Exact rational values for pydantic models.

Rationals travel as strings on the wire ("3", "1/2") and as
``fractions.Fraction`` everywhere inside the library. Gain ratios may
additionally be ``math.inf``, serialized as "inf".
"""

import math
from fractions import Fraction
from typing import Annotated, Any, Union

from pydantic import PlainSerializer, PlainValidator

INF = math.inf


def parse_rational(value: Any) -> Fraction:
    """Parse int, Fraction, finite float or a "p/q" / decimal string into a Fraction."""
    if isinstance(value, bool):
        raise ValueError(f"Not a rational: {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"Not a finite rational: {value!r}")
        # shortest repr keeps 0.1 as 1/10 instead of its binary expansion
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"Not a rational: {value!r}") from exc
    raise ValueError(f"Not a rational: {value!r}")


def format_rational(value: Fraction) -> str:
    """Format as "p" or "p/q"."""
    return str(Fraction(value))


def parse_ratio(value: Any) -> Union[Fraction, float]:
    if isinstance(value, float) and math.isinf(value) and value > 0:
        return INF
    if isinstance(value, str) and value.strip().lower() in ("inf", "+inf", "infinity"):
        return INF
    return parse_rational(value)


def format_ratio(value: Union[Fraction, float]) -> str:
    if is_infinite(value):
        return "inf"
    return format_rational(value)


def is_infinite(value: Union[Fraction, float]) -> bool:
    return isinstance(value, float) and math.isinf(value)


Rational = Annotated[
    Fraction,
    PlainValidator(parse_rational),
    PlainSerializer(format_rational, return_type=str),
]

Ratio = Annotated[
    Union[Fraction, float],
    PlainValidator(parse_ratio),
    PlainSerializer(format_ratio, return_type=str),
]
