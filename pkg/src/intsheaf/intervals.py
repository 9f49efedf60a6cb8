"""Interval lengths and translation morphisms of Int and Int_N.

Time is exact: every duration is a :class:`fractions.Fraction`, which is
backed by Python's arbitrary precision integers, so there is no overflow to
guard against.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Union

DurationLike = Union[Fraction, int, str]


class CompositionError(ValueError):
    """Raised when two translation maps are not composable."""


def duration(value: DurationLike) -> Fraction:
    """Parse a nonnegative exact duration.

    Accepts ints, Fractions and strings such as ``"2.5"`` or ``"5/2"``.
    Floats are rejected on purpose: they would smuggle binary rounding onto
    the exact time axis.
    """
    if isinstance(value, bool):
        raise TypeError("duration cannot be a bool")
    if isinstance(value, float):
        raise TypeError(f"duration must be exact, got float {value!r}; pass a string")
    if isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty duration")
        try:
            result = Fraction(text)
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a duration: {value!r}") from exc
    elif isinstance(value, Rational):
        result = Fraction(value)
    else:
        raise TypeError(f"not a duration: {value!r}")
    if result < 0:
        raise ValueError(f"duration must be nonnegative, got {value!r}")
    return result


def format_duration(value: Fraction) -> str:
    """Canonical text form: ``"3"`` or ``"5/2"``."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class TranslationMap:
    """``Tr_p : [0, source_len] -> [0, target_len]``, the inclusion at offset p."""

    offset: Fraction
    source_len: Fraction
    target_len: Fraction

    def __post_init__(self):
        for name in ("offset", "source_len", "target_len"):
            object.__setattr__(self, name, duration(getattr(self, name)))
        if self.offset + self.source_len > self.target_len:
            raise ValueError(
                f"Tr_{self.offset}: [0,{self.source_len}] does not fit in [0,{self.target_len}]"
            )

    @property
    def end(self) -> Fraction:
        return self.offset + self.source_len

    @property
    def left(self) -> Fraction:
        return self.offset

    @property
    def right(self) -> Fraction:
        return self.target_len - self.end

    def is_identity(self) -> bool:
        return self.offset == 0 and self.source_len == self.target_len

    def __repr__(self):
        return (
            f"Tr_{format_duration(self.offset)}:[0,{format_duration(self.source_len)}]"
            f"->[0,{format_duration(self.target_len)}]"
        )


def translation(offset: DurationLike, source_len: DurationLike, target_len: DurationLike) -> TranslationMap:
    return TranslationMap(duration(offset), duration(source_len), duration(target_len))


def sub_interval(start: DurationLike, stop: DurationLike, total: DurationLike) -> TranslationMap:
    """The translation picking out ``[start, stop]`` inside ``[0, total]``."""
    start, stop = duration(start), duration(stop)
    if stop < start:
        raise ValueError(f"empty window [{start}, {stop}]")
    return TranslationMap(start, stop - start, duration(total))


def identity_translation(length: DurationLike) -> TranslationMap:
    length = duration(length)
    return TranslationMap(Fraction(0), length, length)


def compose_translations(outer: TranslationMap, inner: TranslationMap) -> TranslationMap:
    """``outer ∘ inner``: first include by ``inner``, then by ``outer``."""
    if inner.target_len != outer.source_len:
        raise CompositionError(
            f"cannot compose {outer!r} after {inner!r}: "
            f"{format_duration(inner.target_len)} != {format_duration(outer.source_len)}"
        )
    return TranslationMap(outer.offset + inner.offset, inner.source_len, outer.target_len)


def window(t: TranslationMap) -> tuple[Fraction, Fraction]:
    """The (p, q) decomposition: lengths to the left and right of the image."""
    return t.left, t.right


@dataclass(frozen=True)
class DiscreteTranslation:
    """A translation in Int_N: steps ``[offset, offset + length]`` inside ``total``."""

    offset: int
    length: int
    total: int

    def __post_init__(self):
        for name in ("offset", "length", "total"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise ValueError(f"{name} must be a natural number, got {value!r}")
        if self.offset + self.length > self.total:
            raise ValueError(f"window {self.offset}+{self.length} exceeds {self.total}")


def discrete_length(n: int) -> int:
    if isinstance(n, bool) or not isinstance(n, int) or n < 0:
        raise ValueError(f"discrete length must be a natural number, got {n!r}")
    return n
