"""Value types shared across the key-distillation pipeline.

Everything in here is an immutable record with eager validation: a
``DecoyScheme`` describing the intensity levels Alice transmits, a
``SessionTally`` of per-level / per-basis counts accumulated during an
acquisition run, a ``ChannelModel`` with the optical-link parameters, and a
``ConfidenceConfig`` holding the statistical knobs (per-bound failure
probability and photon-number cutoff).

All types serialize to plain-dict JSON documents tagged with
``format_version`` so that tallies and schemes can be exchanged between the
simulator, the analyzer and external tooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = [
    "BASES",
    "FORMAT_VERSION",
    "ValidationError",
    "DecoyScheme",
    "SessionTally",
    "LevelCounts",
    "ChannelModel",
    "ConfidenceConfig",
    "conjugate_basis",
    "validate_tally",
]

FORMAT_VERSION = "1"

#: Measurement bases, in canonical order.
BASES = ("X", "Z")

_PROB_SUM_TOL = 1e-12


class ValidationError(ValueError):
    """Raised when a value object or JSON document violates its contract."""


def conjugate_basis(basis: str) -> str:
    """Return the other measurement basis ("X" <-> "Z")."""
    if basis == "X":
        return "Z"
    if basis == "Z":
        return "X"
    raise ValidationError(f"unknown basis {basis!r}; expected 'X' or 'Z'")


def _check_version(doc: dict, kind: str) -> None:
    if not isinstance(doc, dict):
        raise ValidationError(f"{kind}: expected a JSON object, got {type(doc).__name__}")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValidationError(
            f"{kind}: unsupported format_version {version!r} (expected {FORMAT_VERSION!r})"
        )


# ---------------------------------------------------------------------------
# DecoyScheme
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecoyScheme:
    """Intensity levels and the probability of transmitting each.

    Levels are stored in strictly increasing order of mean photon number;
    the highest level is the signal level used for key generation, the
    lower ones are decoys used only to constrain the channel.

    Parameters
    ----------
    mus : tuple of float
        Mean photon numbers, strictly increasing, all >= 0.
    send_probs : tuple of float
        Probability of choosing each level for a given pulse.  Must sum
        to 1 within 1e-12.
    """

    mus: tuple[float, ...]
    send_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        mus = tuple(float(m) for m in self.mus)
        probs = tuple(float(p) for p in self.send_probs)
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "send_probs", probs)
        if len(mus) < 2:
            raise ValidationError("a decoy scheme needs at least two intensity levels")
        if len(mus) != len(probs):
            raise ValidationError("mus and send_probs must have equal length")
        if any(m < 0 for m in mus):
            raise ValidationError("mean photon numbers must be >= 0")
        for lo, hi in zip(mus, mus[1:]):
            if not lo < hi:
                raise ValidationError("mean photon numbers must be strictly increasing")
        if any(p <= 0 for p in probs):
            raise ValidationError("send probabilities must be > 0")
        if abs(sum(probs) - 1.0) > _PROB_SUM_TOL:
            raise ValidationError(
                f"send probabilities sum to {sum(probs)!r}, expected 1 within {_PROB_SUM_TOL}"
            )

    @property
    def n_levels(self) -> int:
        return len(self.mus)

    @property
    def signal_index(self) -> int:
        """Index of the signal (highest-intensity) level."""
        return len(self.mus) - 1

    @property
    def signal_mu(self) -> float:
        return self.mus[-1]

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "decoy_scheme",
            "levels": [
                {"mu": mu, "send_prob": p} for mu, p in zip(self.mus, self.send_probs)
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DecoyScheme":
        _check_version(doc, "decoy_scheme")
        levels = doc.get("levels")
        if not isinstance(levels, list) or not levels:
            raise ValidationError("decoy_scheme: 'levels' must be a non-empty list")
        try:
            mus = tuple(float(lv["mu"]) for lv in levels)
            probs = tuple(float(lv["send_prob"]) for lv in levels)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"decoy_scheme: malformed level entry ({exc})") from exc
        return cls(mus=mus, send_probs=probs)


# ---------------------------------------------------------------------------
# SessionTally
# ---------------------------------------------------------------------------


def _split_half(total: int) -> dict[str, int]:
    # Deterministic 50/50 split used when a document only gives per-level totals.
    half = total // 2
    return {"X": total - half, "Z": half}


def _as_basis_counts(value, what: str) -> tuple[dict[str, int], bool]:
    """Normalize a JSON count field to a per-basis dict.

    Returns (counts, reconstructed) where ``reconstructed`` is True when the
    input was a bare total that had to be split 50/50.
    """
    if isinstance(value, bool):
        raise ValidationError(f"{what}: expected a count, got a boolean")
    if isinstance(value, int):
        if value < 0:
            raise ValidationError(f"{what}: counts must be >= 0")
        return _split_half(value), True
    if isinstance(value, dict):
        try:
            counts = {b: int(value[b]) for b in BASES}
        except KeyError as exc:
            raise ValidationError(f"{what}: missing basis key {exc}") from exc
        if any(c < 0 for c in counts.values()):
            raise ValidationError(f"{what}: counts must be >= 0")
        return counts, False
    raise ValidationError(f"{what}: expected an integer or a per-basis object")


@dataclass(frozen=True)
class LevelCounts:
    """Counts observed for one intensity level, keyed by Bob's basis."""

    sent: int
    detected: dict[str, int]
    sifted: dict[str, int]
    errors: dict[str, int]

    def __post_init__(self) -> None:
        if self.sent < 0:
            raise ValidationError("sent count must be >= 0")
        for group in (self.detected, self.sifted, self.errors):
            for b in BASES:
                if b not in group:
                    raise ValidationError(f"missing basis {b!r} in level counts")
                if group[b] < 0:
                    raise ValidationError("counts must be >= 0")
        for b in BASES:
            if not self.errors[b] <= self.sifted[b] <= self.detected[b]:
                raise ValidationError(
                    f"count chain violated in basis {b}: need "
                    f"errors ({self.errors[b]}) <= sifted ({self.sifted[b]}) "
                    f"<= detected ({self.detected[b]})"
                )
        if sum(self.detected[b] for b in BASES) > self.sent:
            raise ValidationError("total detections exceed pulses sent at this level")

    def detected_total(self) -> int:
        return sum(self.detected[b] for b in BASES)

    def sifted_total(self) -> int:
        return sum(self.sifted[b] for b in BASES)


@dataclass(frozen=True)
class SessionTally:
    """Per-level, per-basis counts for one acquisition session.

    ``levels[j]`` must line up with level j of the scheme the session was
    run with (checked by :func:`validate_tally`).  ``zeros`` counts zero
    bits among all sifted bits of each basis, used to estimate the bit
    bias fed to the deskewing step.
    """

    levels: tuple[LevelCounts, ...]
    zeros: dict[str, int]
    reconstructed: bool = False

    def __post_init__(self) -> None:
        if not self.levels:
            raise ValidationError("tally must contain at least one level")
        object.__setattr__(self, "levels", tuple(self.levels))
        for b in BASES:
            if b not in self.zeros:
                raise ValidationError(f"zeros: missing basis {b!r}")
            if not 0 <= self.zeros[b] <= self.sifted_total(b):
                raise ValidationError(
                    f"zeros in basis {b} must lie in [0, total sifted bits]"
                )

    def sifted_total(self, basis: str) -> int:
        return sum(lv.sifted[basis] for lv in self.levels)

    def errors_total(self, basis: str) -> int:
        return sum(lv.errors[basis] for lv in self.levels)

    def detected_all(self) -> int:
        return sum(lv.detected_total() for lv in self.levels)

    def sifted_all(self) -> int:
        return sum(self.sifted_total(b) for b in BASES)

    def zero_fraction(self, basis: str) -> float:
        """Fraction of zero bits among sifted bits in ``basis`` (0.5 if empty)."""
        n = self.sifted_total(basis)
        return self.zeros[basis] / n if n else 0.5

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "session_tally",
            "levels": [
                {
                    "sent": lv.sent,
                    "detected": dict(lv.detected),
                    "sifted": dict(lv.sifted),
                    "errors": dict(lv.errors),
                }
                for lv in self.levels
            ],
            "zeros": dict(self.zeros),
            "reconstructed": self.reconstructed,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SessionTally":
        _check_version(doc, "session_tally")
        raw_levels = doc.get("levels")
        if not isinstance(raw_levels, list) or not raw_levels:
            raise ValidationError("session_tally: 'levels' must be a non-empty list")
        reconstructed = bool(doc.get("reconstructed", False))
        levels = []
        for j, raw in enumerate(raw_levels):
            if not isinstance(raw, dict) or "sent" not in raw:
                raise ValidationError(f"session_tally: level {j} needs a 'sent' count")
            sent = int(raw["sent"])
            counts = {}
            for name in ("detected", "sifted", "errors"):
                value, was_split = _as_basis_counts(
                    raw.get(name, 0), f"session_tally level {j} '{name}'"
                )
                counts[name] = value
                reconstructed = reconstructed or was_split
            levels.append(LevelCounts(sent=sent, **counts))
        zeros_raw = doc.get("zeros")
        if zeros_raw is None:
            # No bit-bias information: assume an unbiased source.
            zeros = {
                b: sum(lv.sifted[b] for lv in levels) // 2 for b in BASES
            }
            reconstructed = True
        else:
            zeros, was_split = _as_basis_counts(zeros_raw, "session_tally 'zeros'")
            reconstructed = reconstructed or was_split
        return cls(levels=tuple(levels), zeros=zeros, reconstructed=reconstructed)


# ---------------------------------------------------------------------------
# ChannelModel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelModel:
    """Optical-link and detector parameters for simulation and prediction.

    Attributes
    ----------
    fiber_length_km : float
        One-way fiber length.
    attenuation_db_per_km : float
        Fiber loss coefficient.
    detector_efficiency : float
        End-to-end detection efficiency excluding fiber loss, in [0, 1].
    dark_count_rate_hz : float
        Summed dark-count rate of the detectors.
    timing_window_s : float
        Acceptance gate width applied to each clock period.
    clock_rate_hz : float
        Pulse (clock) rate of the transmitter.
    intrinsic_error_rate : float
        Probability that a genuinely detected photon lands in the wrong
        detector (interferometer visibility floor), in [0, 0.5].
    background_rate_hz : float
        Stray-light/afterpulse background count rate (adds to dark counts
        in every timing window), >= 0.  Default 0.
    """

    fiber_length_km: float
    attenuation_db_per_km: float
    detector_efficiency: float
    dark_count_rate_hz: float
    timing_window_s: float
    clock_rate_hz: float
    intrinsic_error_rate: float
    background_rate_hz: float = 0.0

    def __post_init__(self) -> None:
        if self.fiber_length_km < 0:
            raise ValidationError("fiber_length_km must be >= 0")
        if self.attenuation_db_per_km < 0:
            raise ValidationError("attenuation_db_per_km must be >= 0")
        if not 0.0 < self.detector_efficiency <= 1.0:
            raise ValidationError("detector_efficiency must lie in (0, 1]")
        if self.dark_count_rate_hz < 0 or self.background_rate_hz < 0:
            raise ValidationError("count rates must be >= 0")
        if self.timing_window_s <= 0 or self.clock_rate_hz <= 0:
            raise ValidationError("timing_window_s and clock_rate_hz must be > 0")
        if self.timing_window_s * self.clock_rate_hz > 1.0 + 1e-9:
            raise ValidationError("timing window cannot exceed the clock period")
        if not 0.0 <= self.intrinsic_error_rate <= 0.5:
            raise ValidationError("intrinsic_error_rate must lie in [0, 0.5]")

    def with_length(self, fiber_length_km: float) -> "ChannelModel":
        """Copy of this model at a different fiber length."""
        return ChannelModel(
            fiber_length_km=fiber_length_km,
            attenuation_db_per_km=self.attenuation_db_per_km,
            detector_efficiency=self.detector_efficiency,
            dark_count_rate_hz=self.dark_count_rate_hz,
            timing_window_s=self.timing_window_s,
            clock_rate_hz=self.clock_rate_hz,
            intrinsic_error_rate=self.intrinsic_error_rate,
            background_rate_hz=self.background_rate_hz,
        )

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "channel_model",
            "fiber_length_km": self.fiber_length_km,
            "attenuation_db_per_km": self.attenuation_db_per_km,
            "detector_efficiency": self.detector_efficiency,
            "dark_count_rate_hz": self.dark_count_rate_hz,
            "timing_window_s": self.timing_window_s,
            "clock_rate_hz": self.clock_rate_hz,
            "intrinsic_error_rate": self.intrinsic_error_rate,
            "background_rate_hz": self.background_rate_hz,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChannelModel":
        _check_version(doc, "channel_model")
        kwargs = {}
        for name in (
            "fiber_length_km",
            "attenuation_db_per_km",
            "detector_efficiency",
            "dark_count_rate_hz",
            "timing_window_s",
            "clock_rate_hz",
            "intrinsic_error_rate",
        ):
            if name not in doc:
                raise ValidationError(f"channel_model: missing field {name!r}")
            kwargs[name] = float(doc[name])
        kwargs["background_rate_hz"] = float(doc.get("background_rate_hz", 0.0))
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# ConfidenceConfig
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfidenceConfig:
    """Statistical settings for the finite-size analysis.

    ``epsilon`` is the failure probability allotted to each individual
    one-sided bound (not a total budget); ``photon_cutoff`` is the largest
    photon number given an explicit yield variable in the constraint
    systems, higher terms being absorbed into a rigorous tail allowance.

    ``pin_vacuum_errors`` adds the physical identity e_0 = y_0 / 2 to the
    error-rate system: a click on a pulse whose zero-photon component
    survived carries no correlation with the sender's bit (there was no
    photon to encode it), so exactly half of such clicks are errors no
    matter what the channel does.  Disabling it weakens the tight
    single-photon error bound but drops the one physical assumption.
    """

    epsilon: float = 1e-7
    photon_cutoff: int = 10
    pin_vacuum_errors: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 0.5:
            raise ValidationError("epsilon must lie in (0, 0.5)")
        if self.photon_cutoff < 1:
            raise ValidationError("photon_cutoff must be >= 1")

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "confidence_config",
            "epsilon": self.epsilon,
            "photon_cutoff": self.photon_cutoff,
            "pin_vacuum_errors": self.pin_vacuum_errors,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ConfidenceConfig":
        _check_version(doc, "confidence_config")
        return cls(
            epsilon=float(doc.get("epsilon", 1e-7)),
            photon_cutoff=int(doc.get("photon_cutoff", 10)),
            pin_vacuum_errors=bool(doc.get("pin_vacuum_errors", True)),
        )


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


def validate_tally(tally: SessionTally, scheme: DecoyScheme) -> None:
    """Check that a tally is structurally consistent with a scheme.

    Raises
    ------
    ValidationError
        If the level counts don't line up with the scheme or any count
        inequality is violated.  (Per-level chains are already enforced
        by the types themselves; this adds the scheme-dependent checks.)
    """
    if len(tally.levels) != scheme.n_levels:
        raise ValidationError(
            f"tally has {len(tally.levels)} levels but scheme has {scheme.n_levels}"
        )
    total_sent = sum(lv.sent for lv in tally.levels)
    if total_sent <= 0:
        raise ValidationError("tally records no pulses sent")
    # No level should have been sent wildly out of proportion with a
    # degenerate zero count while others carry detections; the only hard
    # scheme-dependent requirement is that every level was exercised.
    for j, lv in enumerate(tally.levels):
        if lv.sent == 0 and lv.detected_total() > 0:
            raise ValidationError(f"level {j} has detections but no pulses sent")


def dumps(obj) -> str:
    """Serialize any pipeline value object (or plain dict) to a JSON string."""
    doc = obj.to_json() if hasattr(obj, "to_json") else obj
    return json.dumps(doc, indent=2, sort_keys=True)
