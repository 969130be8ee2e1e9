"""Level-crossing sampling with hysteresis for likelihood-ratio reporting.

The LR axis is divided into levels spaced delta apart.  A sensor stays
silent while its LR remains within one spacing of the most recently crossed
level, and otherwise transmits a short burst: a sign bit followed by one
bit per pair of additional crossings.  The fusion center mirrors the level
bookkeeping, so its reported LR is always within delta of the truth at
sampling instants and errors do not accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class LcshBurst:
    """One transmission: direction and number of levels crossed."""

    sign: int
    crossings: int

    def __post_init__(self) -> None:
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if self.crossings < 1:
            raise ValueError("a burst reports at least one crossing")

    @property
    def bit_count(self) -> int:
        """Wire length: sign bit plus one bit per two additional crossings."""
        return (self.crossings - 1 + 1) // 2 + 1


@dataclass
class LcshChannelState:
    """Most recently crossed level index and the level spacing.

    One instance lives at the sensor (encoder) and a mirror at the fusion
    center (decoder); both apply the same update per burst, so they stay
    equal.
    """

    delta: float
    eta: int = 0

    def __post_init__(self) -> None:
        if not self.delta > 0.0:
            raise ValueError("delta must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


def lcsh_step(state: LcshChannelState, lr: float) -> LcshBurst | None:
    """Process one LR sample; returns a burst iff a new level was crossed.

    Fires when |lr - eta*delta| >= delta, reporting floor(|gap|/delta)
    crossings with the gap's sign, and moves eta accordingly.
    """
    if lr < 0.0:
        raise ValueError("likelihood ratios are nonnegative")
    gap = lr - state.eta * state.delta
    if abs(gap) < state.delta:
        return None
    sign = 1 if gap > 0 else -1
    crossings = int(abs(gap) / state.delta)
    new_eta = state.eta + sign * crossings
    # lr >= 0 caps downward moves at the zero level; assert the invariant.
    if new_eta < 0:
        raise AssertionError("level index went negative despite nonnegative LR")
    state.eta = new_eta
    return LcshBurst(sign, crossings)


def apply_burst(state: LcshChannelState, burst: LcshBurst) -> None:
    """Decoder-side level update; mirrors the encoder's move."""
    new_eta = state.eta + burst.sign * burst.crossings
    if new_eta < 0:
        raise ValueError("burst would drive the level index negative")
    state.eta = new_eta


def encode_burst(burst: LcshBurst) -> str:
    """Canonical bit string: sign bit, then '1' per double and at most one '0'."""
    extra = burst.crossings - 1
    return ("1" if burst.sign > 0 else "0") + "1" * (extra // 2) + "0" * (extra % 2)


def decode_burst(bits: str) -> LcshBurst:
    """Inverse of encode_burst; rejects non-canonical tails."""
    if not bits or any(b not in "01" for b in bits):
        raise ValueError("burst must be a nonempty string of 0/1")
    sign = 1 if bits[0] == "1" else -1
    tail = bits[1:]
    if "0" in tail and "1" in tail[tail.index("0"):]:
        raise ValueError("non-canonical burst: '1' after '0' in the tail")
    crossings = 1 + 2 * tail.count("1") + tail.count("0")
    return LcshBurst(sign, crossings)


def reconstruct_lr(state: LcshChannelState) -> float:
    """Fusion-side approximation of the sensor's current LR."""
    return state.eta * state.delta
