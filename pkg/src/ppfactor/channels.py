"""Encoding of the 96 single-base-substitution channels.

A channel is a trinucleotide substitution label of the form ``X[R>A]Y`` where
``R`` is the pyrimidine reference base (C or T), ``A`` the alternate base, and
``X``/``Y`` the 5' and 3' flanking bases. Channels are indexed canonically:
substitution class first (C>A, C>G, C>T, T>A, T>C, T>G), then 5' base
(A, C, G, T), then 3' base, so ``A[C>A]A`` is channel 0 and ``T[T>G]T`` is
channel 95. This ordering is fixed so that emitted matrices line up across
runs and against externally supplied reference catalogs.
"""

from .errors import IngestError

SUBSTITUTIONS = ("C>A", "C>G", "C>T", "T>A", "T>C", "T>G")
BASES = ("A", "C", "G", "T")
N_CHANNELS = len(SUBSTITUTIONS) * len(BASES) * len(BASES)

_SUB_INDEX = {s: i for i, s in enumerate(SUBSTITUTIONS)}
_BASE_INDEX = {b: i for i, b in enumerate(BASES)}


class ChannelParseError(IngestError):
    """Raised for labels that do not encode a valid substitution channel."""


def parse_channel(label):
    """Return the canonical index in ``[0, 96)`` of a channel label.

    Raises :class:`ChannelParseError` naming the offending token when the
    label is malformed.
    """
    if not isinstance(label, str):
        raise ChannelParseError(f"channel label must be a string, got {type(label).__name__}")
    s = label.strip()
    if len(s) != 7:
        raise ChannelParseError(f"malformed channel label {label!r}: expected 7 characters like 'A[C>T]G'")
    five, lb, ref, gt, alt, rb, three = s
    if lb != "[" or rb != "]" or gt != ">":
        raise ChannelParseError(f"malformed channel label {label!r}: expected form 'X[R>A]Y'")
    if five not in _BASE_INDEX:
        raise ChannelParseError(f"invalid 5' base {five!r} in {label!r}")
    if three not in _BASE_INDEX:
        raise ChannelParseError(f"invalid 3' base {three!r} in {label!r}")
    sub = f"{ref}>{alt}"
    if sub not in _SUB_INDEX:
        raise ChannelParseError(f"invalid substitution {sub!r} in {label!r}")
    return _SUB_INDEX[sub] * 16 + _BASE_INDEX[five] * 4 + _BASE_INDEX[three]


def format_channel(index):
    """Inverse of :func:`parse_channel`."""
    i = int(index)
    if not 0 <= i < N_CHANNELS:
        raise ValueError(f"channel index {index} out of range [0, {N_CHANNELS})")
    sub, rest = divmod(i, 16)
    five, three = divmod(rest, 4)
    ref, alt = SUBSTITUTIONS[sub].split(">")
    return f"{BASES[five]}[{ref}>{alt}]{BASES[three]}"


def all_channels():
    """All 96 labels in canonical order."""
    return [format_channel(i) for i in range(N_CHANNELS)]
