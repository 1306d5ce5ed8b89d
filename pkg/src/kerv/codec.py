"""Conversion between discrete action tokens and continuous 7-DoF actions.

A control step ("slice") covers seven degrees of freedom: end-effector
position X, Y, Z, rotation angles about the three axes, and a gripper
command. Each DoF is emitted as one token on a uniform bin grid whose
range is given by per-DoF normalization statistics (the norm key).
The mapping uses bin centers, so decoding a token and re-encoding the
value is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

N_DOF = 7
GRIPPER_DOF = 6
DEFAULT_VOCAB_SIZE = 256


class CodecError(ValueError):
    """Raised for out-of-domain tokens, DoF indices, or action values."""


@dataclass(frozen=True)
class TokenSlice:
    """Seven token ids, one per DoF, in slice order (X, Y, Z, rx, ry, rz, G)."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != N_DOF:
            raise CodecError(f"token slice needs {N_DOF} ids, got {len(self.ids)}")
        norm = []
        for tok in self.ids:
            try:
                as_int = int(tok)
            except (TypeError, ValueError):
                raise CodecError(f"token id must be an integer, got {tok!r}") from None
            if as_int != tok or as_int < 0:
                raise CodecError(f"token id must be a non-negative integer, got {tok!r}")
            norm.append(as_int)
        object.__setattr__(self, "ids", tuple(norm))


@dataclass(frozen=True)
class ActionSlice:
    """Seven continuous action values in normalized units, one per DoF."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != N_DOF:
            raise CodecError(f"action slice needs {N_DOF} values, got {len(self.values)}")
        norm = []
        for v in self.values:
            f = float(v)
            if not math.isfinite(f):
                raise CodecError(f"action value must be finite, got {v!r}")
            norm.append(f)
        object.__setattr__(self, "values", tuple(norm))


@dataclass(frozen=True)
class NormKey:
    """Per-DoF action ranges plus the shared token vocabulary size.

    Each DoF's tokens index a uniform grid of ``vocab_size`` bins spanning
    ``[lo[dof], hi[dof]]``; token values are the bin centers.
    """

    lo: tuple[float, ...] = (-1.0,) * N_DOF
    hi: tuple[float, ...] = (1.0,) * N_DOF
    vocab_size: int = DEFAULT_VOCAB_SIZE

    def __post_init__(self) -> None:
        if len(self.lo) != N_DOF or len(self.hi) != N_DOF:
            raise CodecError("norm key needs lo/hi for all 7 DoF")
        if self.vocab_size < 2:
            raise CodecError(f"vocab_size must be >= 2, got {self.vocab_size}")
        for dof in range(N_DOF):
            if not (math.isfinite(self.lo[dof]) and math.isfinite(self.hi[dof])):
                raise CodecError(f"dof{dof} range must be finite")
            if self.lo[dof] >= self.hi[dof]:
                raise CodecError(f"dof{dof} range needs lo < hi")

    def bin_width(self, dof: int) -> float:
        _check_dof(dof)
        return (self.hi[dof] - self.lo[dof]) / self.vocab_size

    @classmethod
    def parse(cls, text: str) -> "NormKey":
        """Parse a flat ``key = value`` block: ``dof<i> = lo,hi`` lines plus
        ``vocab_size = <V>`` (``codec.vocab_size`` is accepted as an alias).
        DoF lines that are absent default to the [-1, 1] range.
        """
        lo = [-1.0] * N_DOF
        hi = [1.0] * N_DOF
        vocab = DEFAULT_VOCAB_SIZE
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CodecError(f"line {lineno}: expected 'key = value', got {raw!r}")
            name, _, value = line.partition("=")
            name = name.strip()
            value = value.strip()
            if name in ("vocab_size", "codec.vocab_size"):
                vocab = int(value)
            elif name.startswith("dof"):
                dof = int(name[3:])
                _check_dof(dof)
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 2:
                    raise CodecError(f"line {lineno}: dof range must be 'lo,hi'")
                lo[dof], hi[dof] = float(parts[0]), float(parts[1])
            # unrelated keys (kf.*, cost.*, ...) may share the file; skip them
        return cls(lo=tuple(lo), hi=tuple(hi), vocab_size=vocab)

    @classmethod
    def from_file(cls, path: str | Path) -> "NormKey":
        return cls.parse(Path(path).read_text())


DEFAULT_KEY = NormKey()


def _check_dof(dof: int) -> None:
    if not 0 <= dof < N_DOF:
        raise CodecError(f"dof index must be in [0, {N_DOF - 1}], got {dof}")


def token_to_action(token_id: int, dof: int, key: NormKey = DEFAULT_KEY) -> float:
    """Decode a token to the center of its bin on the DoF's uniform grid."""
    _check_dof(dof)
    if not 0 <= token_id < key.vocab_size:
        raise CodecError(
            f"token id {token_id} outside [0, {key.vocab_size - 1}] for dof{dof}"
        )
    lo, hi = key.lo[dof], key.hi[dof]
    return lo + (hi - lo) * (token_id + 0.5) / key.vocab_size


def action_to_token(value: float, dof: int, key: NormKey = DEFAULT_KEY) -> int:
    """Encode a value as the nearest bin index, clamped to the vocabulary.

    Exact inverse of :func:`token_to_action` on bin centers.
    """
    _check_dof(dof)
    if not math.isfinite(value):
        raise CodecError(f"action value must be finite, got {value!r}")
    lo, hi = key.lo[dof], key.hi[dof]
    idx = math.floor((value - lo) / (hi - lo) * key.vocab_size)
    return min(max(idx, 0), key.vocab_size - 1)


def decode_slice(tokens: TokenSlice, key: NormKey = DEFAULT_KEY) -> ActionSlice:
    """Decode all seven tokens of a slice to continuous actions."""
    return ActionSlice(
        tuple(token_to_action(tok, dof, key) for dof, tok in enumerate(tokens.ids))
    )


def encode_slice(values, key: NormKey = DEFAULT_KEY) -> TokenSlice:
    """Encode seven action values (any sequence of floats) to tokens."""
    vals = tuple(float(v) for v in values)
    if len(vals) != N_DOF:
        raise CodecError(f"expected {N_DOF} values, got {len(vals)}")
    return TokenSlice(tuple(action_to_token(v, dof, key) for dof, v in enumerate(vals)))


def token_distance(a: int, b: int) -> int:
    """Absolute difference between two token ids."""
    return abs(a - b)


def gripper_tokens(key: NormKey = DEFAULT_KEY) -> tuple[int, int, int]:
    """The three valid gripper command tokens: close (lo end), hold (zero
    action), open (hi end)."""
    return (0, action_to_token(0.0, GRIPPER_DOF, key), key.vocab_size - 1)


def snap_gripper_token(value: float, key: NormKey = DEFAULT_KEY) -> int:
    """Snap an arbitrary gripper value to the nearest valid gripper token.

    Used when tokenizing filter predictions: the gripper channel is a
    three-level command (close / hold / open), not a dense grid.
    """
    if not math.isfinite(value):
        raise CodecError(f"gripper value must be finite, got {value!r}")
    candidates = gripper_tokens(key)
    return min(
        candidates, key=lambda tok: abs(token_to_action(tok, GRIPPER_DOF, key) - value)
    )
