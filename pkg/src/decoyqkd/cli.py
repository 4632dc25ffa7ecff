"""Command-line front end for the decoy-state post-processing pipeline.

Subcommands
-----------
simulate
    Monte-Carlo sample one session and emit its tally (stdout) plus,
    optionally, the raw sifted key files.
analyze
    Run the decoy bounds and key budget on a stored tally.
distill
    Full post-processing on a tally plus raw keys: reconcile, deskew,
    re-budget with the measured efficiencies, and hash down to the
    final key.
optimize
    Search the intensity/probability scheme maximizing the key total.
curve
    Key total versus distance (CSV), optionally re-optimizing per point.
calibrate
    Recover the unpublished link parameters from the session totals.

Conventions
-----------
Machine-readable output (JSON or CSV) goes to stdout; human-readable
summaries go to stderr.  Given the same inputs and seed, every command
writes byte-identical output (reports carry no timestamps, and JSON
keys are sorted).  Reports embed a SHA-256 digest of every input file.
Exit status is 0 on success, 1 on input errors (a message names the
offending flag or file), and 2 when the inputs were valid but the
session yields no key (infeasible bounds, zero key total, failed
reconciliation, or a calibration that did not converge).

Each subcommand accepts ``--config FILE``, a JSON object of default
values keyed by flag name (hyphens as underscores); explicit flags
override config fields.  Relative paths that do not exist are retried
under ``$DECOYQKD_CONFIG_DIR`` if that variable is set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .core import (
    ChannelModel,
    ConfidenceConfig,
    DecoyScheme,
    SessionTally,
    ValidationError,
    dumps,
)
from .extract import measure_f_ds, peres_extract, privacy_amplify
from .keyrate import compose_session
from .opt import curve_csv, optimize_scheme, range_curve
from .recon import cascade_reconcile, measure_f_ec
from .sim import (
    REFERENCE_DUTY_CYCLE,
    REFERENCE_SIFT_RATIO,
    REFERENCE_ZERO_FRACTION,
    calibrate_to_reference,
    reference_model,
    reference_scheme,
    simulate_session,
)

__all__ = ["main", "CONFIG_DIR_ENV"]

CONFIG_DIR_ENV = "DECOYQKD_CONFIG_DIR"

_BASES = ("X", "Z")


class _UsageError(Exception):
    """Bad command line (unknown flag, missing value, bad choice)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        raise _UsageError(f"{self.prog}: {message}")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _resolve(path: str, flag: str) -> Path:
    """Resolve a user-supplied path, falling back to the config dir."""
    p = Path(path)
    if p.exists():
        return p
    if not p.is_absolute():
        base = os.environ.get(CONFIG_DIR_ENV)
        if base:
            candidate = Path(base) / p
            if candidate.exists():
                return candidate
    raise ValidationError(f"{flag}: file not found: {path}")


def _load_doc(path: str, flag: str) -> tuple[dict, dict]:
    """Load a JSON document; returns (doc, reference-with-digest)."""
    if path == "-":
        raw = sys.stdin.buffer.read()
        shown = "<stdin>"
    else:
        resolved = _resolve(path, flag)
        raw = resolved.read_bytes()
        shown = str(resolved)
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{flag}: {shown} is not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{flag}: {shown} must hold a JSON object")
    return doc, {"path": shown, "sha256": hashlib.sha256(raw).hexdigest()}


def _settings(args: argparse.Namespace, defaults: dict) -> tuple[dict, dict | None]:
    """Merge defaults < config file < explicit flags."""
    merged = dict(defaults)
    passed = {
        k: v
        for k, v in vars(args).items()
        if k not in ("handler", "command", "defaults")
    }
    cfg_ref = None
    cfg_path = passed.pop("config", None)
    if cfg_path is not None:
        doc, cfg_ref = _load_doc(cfg_path, "--config")
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise ValidationError(
                f"--config: unknown fields {unknown}; "
                f"expected among {sorted(defaults)}"
            )
        merged.update(doc)
    merged.update(passed)
    return merged, cfg_ref


def _require(settings: dict, key: str, command: str):
    value = settings.get(key)
    if value is None:
        flag = "--" + key.replace("_", "-")
        raise ValidationError(f"{flag} is required")
    return value


def _load_scheme(settings: dict) -> tuple[DecoyScheme, dict]:
    path = settings.get("scheme")
    if path is None:
        return reference_scheme(), {"builtin": "reference"}
    doc, ref = _load_doc(path, "--scheme")
    return DecoyScheme.from_json(doc), ref


def _load_model(settings: dict) -> tuple[ChannelModel, dict]:
    path = settings.get("model")
    if path is None:
        model, ref = reference_model(), {"builtin": "reference"}
    else:
        doc, ref = _load_doc(path, "--model")
        model = ChannelModel.from_json(doc)
    distance = settings.get("distance_km")
    if distance is not None:
        model = model.with_length(float(distance))
    efficiency = settings.get("detector_efficiency")
    if efficiency is not None:
        model = replace(model, detector_efficiency=float(efficiency))
    return model, ref


def _load_tally(settings: dict, command: str) -> tuple[SessionTally, dict]:
    path = _require(settings, "tally", command)
    doc, ref = _load_doc(path, "--tally")
    return SessionTally.from_json(doc), ref


def _confidence(settings: dict) -> ConfidenceConfig:
    return ConfidenceConfig(
        epsilon=float(settings["confidence"]),
        photon_cutoff=int(settings["photon_cutoff"]),
        pin_vacuum_errors=bool(settings["vacuum_pinning"]),
    )


def _resolve_pulses(settings: dict, model: ChannelModel, command: str) -> int:
    pulses = settings.get("pulses")
    duration = settings.get("duration_h")
    if pulses is not None and duration is not None:
        raise ValidationError("give --pulses or --duration-h, not both")
    if pulses is not None:
        pulses = int(pulses)
        if pulses <= 0:
            raise ValidationError("--pulses must be > 0")
        return pulses
    if duration is None:
        raise ValidationError("one of --pulses or --duration-h is required")
    duration = float(duration)
    if duration <= 0:
        raise ValidationError("--duration-h must be > 0")
    duty = float(settings["duty_cycle"])
    if not 0.0 < duty <= 1.0:
        raise ValidationError("--duty-cycle must lie in (0, 1]")
    return int(round(duration * 3600.0 * model.clock_rate_hz * duty))


def _parse_distances(spec: str) -> list[float]:
    """Parse ``min:max:step`` or a comma-separated list of km values."""
    try:
        if ":" in spec:
            lo_s, hi_s, step_s = spec.split(":")
            lo, hi, step = float(lo_s), float(hi_s), float(step_s)
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(math.floor((hi - lo) / step + 1e-9)) + 1
            return [lo + i * step for i in range(n)]
        values = [float(tok) for tok in spec.split(",") if tok.strip()]
        if not values:
            raise ValueError
        return values
    except ValueError:
        raise ValidationError(
            f"--distances: expected MIN:MAX:STEP or a comma list, got {spec!r}"
        ) from None


def _key_paths(prefix: str) -> dict[tuple[str, str], Path]:
    return {
        (side, basis): Path(f"{prefix}.{side}.{basis}.bits")
        for side in ("alice", "bob")
        for basis in _BASES
    }


def _write_bits(path: Path, bits: np.ndarray) -> None:
    path.write_text("".join("1" if b else "0" for b in bits) + "\n")


def _read_bits(path: Path, flag: str) -> tuple[np.ndarray, str]:
    if not path.exists():
        raise ValidationError(f"{flag}: key file not found: {path}")
    raw = path.read_bytes()
    text = raw.decode("ascii", errors="strict").strip()
    if text and set(text) - {"0", "1"}:
        raise ValidationError(f"{flag}: {path} holds non-binary characters")
    bits = np.frombuffer(text.encode(), dtype=np.uint8) - ord("0")
    return bits.astype(np.uint8), hashlib.sha256(raw).hexdigest()


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

_SIMULATE_DEFAULTS = {
    "scheme": None,
    "model": None,
    "distance_km": None,
    "duration_h": None,
    "pulses": None,
    "duty_cycle": REFERENCE_DUTY_CYCLE,
    "zero_bias": 0.5,
    "seed": None,
    "keys_out": None,
}


def _cmd_simulate(args: argparse.Namespace) -> int:
    settings, _ = _settings(args, _SIMULATE_DEFAULTS)
    seed = int(_require(settings, "seed", "simulate"))
    scheme, scheme_ref = _load_scheme(settings)
    model, model_ref = _load_model(settings)
    pulses = _resolve_pulses(settings, model, "simulate")
    zero_bias = float(settings["zero_bias"])

    tally, keys = simulate_session(
        model, scheme, pulses, seed, zero_bias=zero_bias
    )

    prefix = settings.get("keys_out")
    if prefix is not None:
        for (side, basis), path in _key_paths(prefix).items():
            source = keys.alice if side == "alice" else keys.bob
            _write_bits(path, source[basis])
        _note(f"raw keys written under prefix {prefix!r}")

    _note(
        f"simulate: seed {seed}, {pulses} pulses, "
        f"detections {[lv.detected_total() for lv in tally.levels]}, "
        f"sifted {[tally.sifted_total(b) for b in _BASES]} (X, Z)"
    )
    _note(f"inputs: scheme {scheme_ref}, model {model_ref}")
    print(dumps(tally))
    return 0


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

_ANALYZE_DEFAULTS = {
    "tally": None,
    "scheme": None,
    "confidence": 1e-7,
    "photon_cutoff": 10,
    "vacuum_pinning": True,
    "f_ec": 1.07,
    "f_ds": 1.05,
    "pa_epsilon": 1e-3,
}


def _cmd_analyze(args: argparse.Namespace) -> int:
    settings, cfg_ref = _settings(args, _ANALYZE_DEFAULTS)
    tally, tally_ref = _load_tally(settings, "analyze")
    scheme, scheme_ref = _load_scheme(settings)
    config = _confidence(settings)

    analysis = compose_session(
        tally,
        scheme,
        config,
        f_ec=float(settings["f_ec"]),
        f_ds=float(settings["f_ds"]),
        pa_epsilon=float(settings["pa_epsilon"]),
    )

    report = {
        "kind": "analysis_report",
        "inputs": {"tally": tally_ref, "scheme": scheme_ref, "config": cfg_ref},
        "parameters": {
            "confidence": config.epsilon,
            "photon_cutoff": config.photon_cutoff,
            "vacuum_pinning": config.pin_vacuum_errors,
            "f_ec": float(settings["f_ec"]),
            "f_ds": float(settings["f_ds"]),
            "pa_epsilon": float(settings["pa_epsilon"]),
        },
        "analysis": analysis.to_json(),
    }
    _emit(report)

    if not analysis.feasible:
        _note("analyze: decoy bounds infeasible for this tally")
        return 2
    _note(
        f"analyze: key total {analysis.total_tight} (tight) / "
        f"{analysis.total_worst} (worst-case), y1 lower {analysis.bounds.y1_lower:.3e}"
    )
    if analysis.total_tight == 0:
        _note("analyze: zero-key outcome")
        return 2
    return 0


# ---------------------------------------------------------------------------
# distill
# ---------------------------------------------------------------------------

_DISTILL_DEFAULTS = {
    "tally": None,
    "keys": None,
    "scheme": None,
    "confidence": 1e-7,
    "photon_cutoff": 10,
    "vacuum_pinning": True,
    "pa_epsilon": 1e-3,
    "depth": 12,
    "seed": None,
    "variant": "worst",
    "qber_estimate": None,
    "key_out": None,
}


def _cmd_distill(args: argparse.Namespace) -> int:
    settings, cfg_ref = _settings(args, _DISTILL_DEFAULTS)
    tally, tally_ref = _load_tally(settings, "distill")
    scheme, scheme_ref = _load_scheme(settings)
    config = _confidence(settings)
    seed = int(_require(settings, "seed", "distill"))
    prefix = str(_require(settings, "keys", "distill"))
    depth = int(settings["depth"])
    variant = str(settings["variant"])
    if variant not in ("tight", "worst"):
        raise ValidationError("--variant must be 'tight' or 'worst'")

    paths = _key_paths(prefix)
    bits: dict[tuple[str, str], np.ndarray] = {}
    digests: dict[str, str] = {}
    for key, path in paths.items():
        bits[key], digests[path.name] = _read_bits(path, "--keys")

    signal = scheme.signal_index
    per_basis: dict[str, dict] = {}
    reconciled: dict[str, np.ndarray] = {}
    f_ec_measured: dict[str, float] = {}
    residual = False
    for i, basis in enumerate(_BASES):
        alice, bob = bits[("alice", basis)], bits[("bob", basis)]
        if alice.size != bob.size:
            raise ValidationError(
                f"--keys: alice/bob length mismatch in basis {basis}"
            )
        expected = tally.levels[signal].sifted[basis]
        if alice.size != expected:
            raise ValidationError(
                f"--keys: basis {basis} holds {alice.size} bits but the tally "
                f"records {expected} sifted signal bits"
            )
        q_obs = (
            tally.levels[signal].errors[basis] / expected if expected else 0.0
        )
        q_est = settings.get("qber_estimate")
        q_est = float(q_est) if q_est is not None else max(q_obs, 0.5 / alice.size)
        rec = cascade_reconcile(alice, bob, q_est, rng_seed=4 * seed + i)
        residual = residual or rec.residual_error_detected
        f_ec_measured[basis] = measure_f_ec(rec)
        reconciled[basis] = rec.corrected_key
        per_basis[basis] = {
            "n_input": int(alice.size),
            "estimated_qber": q_est,
            "corrections": rec.corrections,
            "parity_bits_leaked": rec.parity_bits_leaked,
            "passes": rec.passes,
            "residual_error_detected": rec.residual_error_detected,
            "f_ec_measured": f_ec_measured[basis],
        }

    # Budget with the measured efficiencies (floored at 1: a measured
    # factor below 1 is a finite-sample fluctuation, not a real discount).
    f_ds_measured: dict[str, float] = {}
    deskewed: dict[str, np.ndarray] = {}
    for basis in _BASES:
        des = peres_extract(reconciled[basis], depth=depth)
        z = tally.zero_fraction(basis)
        f_ds_measured[basis] = (
            measure_f_ds(des, z) if 0.0 < z < 1.0 else des.f_ds
        )
        deskewed[basis] = des.output_bits
        per_basis[basis]["deskew"] = {
            "depth": depth,
            "output_length": int(des.output_bits.size),
            "f_ds_measured": f_ds_measured[basis],
        }
    if any(not math.isfinite(f) for f in f_ds_measured.values()):
        _emit(_distill_report(
            cfg_ref, tally_ref, scheme_ref, digests, settings, seed, variant,
            per_basis, analysis=None, final_hex="", final_bits=0,
        ))
        _note("distill: deskew produced no output bits")
        return 2

    f_ec_used = max(1.0, *f_ec_measured.values())
    f_ds_used = max(1.0, *f_ds_measured.values())
    analysis = compose_session(
        tally,
        scheme,
        config,
        f_ec=f_ec_used,
        f_ds=f_ds_used,
        pa_epsilon=float(settings["pa_epsilon"]),
    )
    budgets = (
        analysis.budgets_tight if variant == "tight" else analysis.budgets_worst
    )

    final_chunks = []
    for i, basis in enumerate(_BASES):
        n_secret = budgets[basis].n_secret
        available = int(deskewed[basis].size)
        target = min(n_secret, available)
        hash_seed = 4 * seed + 2 + i
        final = privacy_amplify(deskewed[basis], target, seed=hash_seed)
        final_chunks.append(final)
        per_basis[basis].update(
            n_secret=n_secret,
            final_length=target,
            hash_seed=hash_seed,
        )
        if target < n_secret:
            _note(
                f"distill: basis {basis} budget {n_secret} exceeds the "
                f"{available} deskewed bits; key truncated"
            )

    final_bits = np.concatenate(final_chunks)
    final_bytes = np.packbits(final_bits).tobytes() if final_bits.size else b""
    report = _distill_report(
        cfg_ref, tally_ref, scheme_ref, digests, settings, seed, variant,
        per_basis, analysis=analysis, final_hex=final_bytes.hex(),
        final_bits=int(final_bits.size),
    )
    _emit(report)

    key_out = settings.get("key_out")
    if key_out is not None:
        Path(key_out).write_bytes(final_bytes)
        _note(f"final key bytes written to {key_out}")

    _note(
        "distill: f_ec "
        + ", ".join(f"{b} {f_ec_measured[b]:.4f}" for b in _BASES)
        + "; f_ds "
        + ", ".join(f"{b} {f_ds_measured[b]:.4f}" for b in _BASES)
    )
    if residual:
        _note("distill: residual mismatch survived reconciliation; session aborted")
        return 2
    _note(
        f"distill: final key {final_bits.size} bits "
        f"({variant} variant; totals {analysis.total_tight}/{analysis.total_worst})"
    )
    if final_bits.size == 0:
        _note("distill: zero-key outcome")
        return 2
    return 0


def _distill_report(
    cfg_ref, tally_ref, scheme_ref, digests, settings, seed, variant,
    per_basis, *, analysis, final_hex, final_bits,
) -> dict:
    return {
        "kind": "distill_report",
        "inputs": {
            "tally": tally_ref,
            "scheme": scheme_ref,
            "config": cfg_ref,
            "key_files_sha256": digests,
        },
        "parameters": {
            "seed": seed,
            "depth": int(settings["depth"]),
            "variant": variant,
            "confidence": float(settings["confidence"]),
            "pa_epsilon": float(settings["pa_epsilon"]),
        },
        "bases": per_basis,
        "analysis": None if analysis is None else analysis.to_json(),
        "final_key_bits": final_bits,
        "final_key_hex": final_hex,
    }


# ---------------------------------------------------------------------------
# optimize
# ---------------------------------------------------------------------------

_OPTIMIZE_DEFAULTS = {
    "model": None,
    "distance_km": None,
    "duration_h": None,
    "pulses": None,
    "duty_cycle": REFERENCE_DUTY_CYCLE,
    "scheme": None,
    "extinction_db": 23.5,
    "stages": 3,
    "points_per_stage": 7,
    "confidence": 1e-7,
    "photon_cutoff": 10,
    "vacuum_pinning": True,
    "f_ec": 1.07,
    "f_ds": 1.05,
    "sift_ratio": REFERENCE_SIFT_RATIO,
    "zero_fraction": REFERENCE_ZERO_FRACTION,
    "trace": False,
}


def _cmd_optimize(args: argparse.Namespace) -> int:
    settings, cfg_ref = _settings(args, _OPTIMIZE_DEFAULTS)
    model, model_ref = _load_model(settings)
    scheme = None
    scheme_ref = {"builtin": "reference"}
    if settings.get("scheme") is not None:
        scheme, scheme_ref = _load_scheme(settings)
    if settings.get("pulses") is None and settings.get("duration_h") is None:
        settings["duration_h"] = 5.6
    pulses = _resolve_pulses(settings, model, "optimize")

    result = optimize_scheme(
        model,
        pulses,
        extinction_db=float(settings["extinction_db"]),
        stages=int(settings["stages"]),
        points_per_stage=int(settings["points_per_stage"]),
        initial_scheme=scheme,
        config=_confidence(settings),
        f_ec=float(settings["f_ec"]),
        f_ds=float(settings["f_ds"]),
        sift_ratio=float(settings["sift_ratio"]),
        zero_fraction=float(settings["zero_fraction"]),
    )

    report = {
        "kind": "optimize_report",
        "inputs": {"model": model_ref, "initial_scheme": scheme_ref, "config": cfg_ref},
        "parameters": {
            "pulses": pulses,
            "extinction_db": float(settings["extinction_db"]),
            "stages": int(settings["stages"]),
            "points_per_stage": int(settings["points_per_stage"]),
            "f_ec": float(settings["f_ec"]),
            "f_ds": float(settings["f_ds"]),
            "sift_ratio": float(settings["sift_ratio"]),
            "zero_fraction": float(settings["zero_fraction"]),
            "confidence": float(settings["confidence"]),
        },
        "scheme": result.scheme.to_json(),
        "n_secret_tight": result.n_secret_tight,
        "n_secret_worst": result.n_secret_worst,
        "feasible": result.feasible,
        "evaluations": result.evaluations,
        "trace": list(result.trace) if settings["trace"] else None,
    }
    _emit(report)
    _note(
        f"optimize: {result.evaluations} evaluations, best scheme "
        f"mus={tuple(round(m, 6) for m in result.scheme.mus)} "
        f"probs={tuple(round(p, 6) for p in result.scheme.send_probs)}"
    )
    if not result.feasible:
        _note("optimize: every candidate yields a zero key at this operating point")
        return 2
    _note(
        f"optimize: key total {result.n_secret_tight} (tight) / "
        f"{result.n_secret_worst} (worst-case)"
    )
    return 0


# ---------------------------------------------------------------------------
# curve
# ---------------------------------------------------------------------------

_CURVE_DEFAULTS = {
    "model": None,
    "scheme": None,
    "distances": "100:170:2",
    "duration_h": None,
    "pulses": None,
    "duty_cycle": REFERENCE_DUTY_CYCLE,
    "optimize": False,
    "extinction_db": 23.5,
    "stages": 3,
    "confidence": 1e-7,
    "photon_cutoff": 10,
    "vacuum_pinning": True,
    "f_ec": 1.07,
    "f_ds": 1.05,
    "sift_ratio": REFERENCE_SIFT_RATIO,
    "zero_fraction": REFERENCE_ZERO_FRACTION,
    "detector_efficiency": None,
}

_CURVE_EPILOG = """\
CSV columns (one row per grid distance):
  distance_km      fiber length of the row
  n_secret_tight   key total with the observed single-photon error rate
  n_secret_worst   key total with the worst-case single-photon error rate
  y1_lower         certified single-photon yield lower bound
  b1_tight         observed-variant single-photon error bound (max basis)
  b1_worst         worst-case single-photon error bound (max basis)
  mu0..mu2         intensities of the scheme used at that distance
  p0..p2           send probabilities of that scheme
The last row with a positive key total defines the range at the grid
resolution; the two range endpoints are printed to stderr.
"""


def _cmd_curve(args: argparse.Namespace) -> int:
    settings, _ = _settings(args, _CURVE_DEFAULTS)
    model, _model_ref = _load_model(settings)
    scheme = None
    if settings.get("scheme") is not None:
        scheme, _ = _load_scheme(settings)
    if settings.get("pulses") is None and settings.get("duration_h") is None:
        settings["duration_h"] = 5.6
    pulses = _resolve_pulses(settings, model, "curve")
    distances = _parse_distances(str(settings["distances"]))

    curve = range_curve(
        model,
        pulses,
        distances,
        optimize=bool(settings["optimize"]),
        scheme=scheme,
        extinction_db=float(settings["extinction_db"]),
        stages=int(settings["stages"]),
        config=_confidence(settings),
        f_ec=float(settings["f_ec"]),
        f_ds=float(settings["f_ds"]),
        sift_ratio=float(settings["sift_ratio"]),
        zero_fraction=float(settings["zero_fraction"]),
    )

    sys.stdout.write(curve_csv(curve))
    tight = curve.range_tight_km
    worst = curve.range_worst_km
    _note(
        f"curve: {len(curve.points)} points, "
        f"range {tight if tight is not None else '<grid'} km (tight) / "
        f"{worst if worst is not None else '<grid'} km (worst-case), "
        f"{'re-optimized per point' if curve.optimized else 'fixed scheme'}"
    )
    if tight is None:
        _note("curve: zero key everywhere on the grid")
        return 2
    return 0


# ---------------------------------------------------------------------------
# calibrate
# ---------------------------------------------------------------------------

_CALIBRATE_DEFAULTS = {
    "duration_h": 5.6,
    "detections": None,
    "sifted": None,
    "targets": None,
    "zero_fraction": REFERENCE_ZERO_FRACTION,
    "f_ec": 1.07,
    "f_ds": 1.05,
    "confidence": 1e-7,
    "photon_cutoff": 10,
    "vacuum_pinning": True,
    "out_model": None,
    "out_tally": None,
}


def _cmd_calibrate(args: argparse.Namespace) -> int:
    settings, cfg_ref = _settings(args, _CALIBRATE_DEFAULTS)
    kwargs = {}
    if settings.get("detections") is not None:
        kwargs["detections"] = tuple(int(v) for v in settings["detections"])
    if settings.get("sifted") is not None:
        kwargs["sifted_total"] = int(settings["sifted"])
    if settings.get("targets") is not None:
        kwargs["key_targets"] = tuple(int(v) for v in settings["targets"])

    result = calibrate_to_reference(
        duration_h=float(settings["duration_h"]),
        zero_fraction=float(settings["zero_fraction"]),
        f_ec=float(settings["f_ec"]),
        f_ds=float(settings["f_ds"]),
        config=_confidence(settings),
        **kwargs,
    )

    report = {"kind": "calibration_report", "inputs": {"config": cfg_ref}}
    report.update(result.to_json())
    _emit(report)

    for key, obj in (("out_model", result.model), ("out_tally", result.tally)):
        path = settings.get(key)
        if path is not None:
            Path(path).write_text(dumps(obj) + "\n")
            _note(f"{key.replace('_', ' ')} written to {path}")

    diag = result.diagnostics
    _note(
        f"calibrate: pulses {result.pulses} (duty {result.duty_cycle:.4f}), "
        f"background {result.background_rate_hz:.1f} Hz, "
        f"intrinsic error {result.e_int:.5f}"
    )
    _note(
        f"calibrate: key totals {result.analysis.total_tight} (tight) / "
        f"{result.analysis.total_worst} (worst-case) vs targets "
        f"{diag.get('key_targets')}"
    )
    if not diag.get("converged", False):
        _note("calibrate: fit did not converge; inspect the diagnostics block")
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(
        prog="decoyqkd",
        description=(
            "Finite-statistics decoy-state key distillation: simulate, "
            "analyze, distill, optimize, curve, calibrate."
        ),
        epilog=(
            f"Relative input paths are also searched under ${CONFIG_DIR_ENV}. "
            "JSON/CSV results go to stdout, summaries to stderr. Exit codes: "
            "0 success, 1 input error, 2 valid inputs but no key."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, handler, help_text: str, **kwargs) -> argparse.ArgumentParser:
        p = sub.add_parser(
            name, help=help_text, description=help_text,
            argument_default=argparse.SUPPRESS, **kwargs,
        )
        p.set_defaults(handler=handler)
        p.add_argument(
            "--config", metavar="FILE",
            help="JSON object of default values (explicit flags win)",
        )
        return p

    def common_tally(p):
        p.add_argument("--tally", metavar="FILE",
                       help="session tally JSON ('-' reads stdin); required")
        p.add_argument("--scheme", metavar="FILE",
                       help="decoy scheme JSON (default: demonstration scheme)")

    def common_confidence(p):
        p.add_argument("--confidence", type=float, metavar="EPS",
                       help="per-bound failure probability (default 1e-7)")
        p.add_argument("--photon-cutoff", type=int, metavar="N",
                       help="photon-number truncation of the yield system (default 10)")
        p.add_argument("--no-vacuum-pinning", dest="vacuum_pinning",
                       action="store_false",
                       help="drop the vacuum-level error-pinning constraints")

    def common_session(p):
        p.add_argument("--model", metavar="FILE",
                       help="channel model JSON (default: demonstration link)")
        p.add_argument("--distance-km", type=float, metavar="KM",
                       help="override the model's fiber length")
        p.add_argument("--duration-h", type=float, metavar="H",
                       help="acquisition time; converted to pulses via the duty cycle")
        p.add_argument("--pulses", type=int, metavar="N",
                       help="pulse count (alternative to --duration-h)")
        p.add_argument("--duty-cycle", type=float, metavar="F",
                       help=f"clock-slot occupancy for --duration-h "
                            f"(default {REFERENCE_DUTY_CYCLE:.6f})")

    p = add("simulate", _cmd_simulate, "Monte-Carlo sample one session")
    common_session(p)
    p.add_argument("--scheme", metavar="FILE",
                   help="decoy scheme JSON (default: demonstration scheme)")
    p.add_argument("--seed", type=int, metavar="N", help="RNG seed; required")
    p.add_argument("--zero-bias", type=float, metavar="Z",
                   help="P(bit = 0) of the prepared key bits (default 0.5)")
    p.add_argument("--keys-out", metavar="PREFIX",
                   help="write PREFIX.{alice,bob}.{X,Z}.bits raw key files")

    p = add("analyze", _cmd_analyze, "Decoy bounds and key budget for a tally")
    common_tally(p)
    common_confidence(p)
    p.add_argument("--f-ec", type=float, metavar="F",
                   help="reconciliation inefficiency (default 1.07)")
    p.add_argument("--f-ds", type=float, metavar="F",
                   help="deskewing inefficiency (default 1.05)")
    p.add_argument("--pa-epsilon", type=float, metavar="EPS",
                   help="typical-set coverage confidence (default 1e-3)")

    p = add("distill", _cmd_distill,
            "Reconcile, deskew, and hash raw keys into the final key")
    common_tally(p)
    common_confidence(p)
    p.add_argument("--keys", metavar="PREFIX",
                   help="prefix of the four raw key files from simulate; required")
    p.add_argument("--seed", type=int, metavar="N",
                   help="seed for the reconciliation shuffles and hash; required")
    p.add_argument("--depth", type=int, metavar="D",
                   help="deskewing iteration depth (default 12)")
    p.add_argument("--variant", choices=("tight", "worst"),
                   help="which error-bound variant sizes the final key "
                        "(default worst)")
    p.add_argument("--qber-estimate", type=float, metavar="Q",
                   help="override the error-rate estimate fed to reconciliation")
    p.add_argument("--pa-epsilon", type=float, metavar="EPS",
                   help="typical-set coverage confidence (default 1e-3)")
    p.add_argument("--key-out", metavar="FILE",
                   help="also write the final key as raw bytes")

    p = add("optimize", _cmd_optimize, "Search the best intensity scheme")
    common_session(p)
    common_confidence(p)
    p.add_argument("--scheme", metavar="FILE",
                   help="initial scheme JSON (default: demonstration scheme)")
    p.add_argument("--extinction-db", type=float, metavar="DB",
                   help="vacuum-level extinction below the signal (default 23.5)")
    p.add_argument("--stages", type=int, metavar="N",
                   help="refinement stages (default 3)")
    p.add_argument("--points-per-stage", type=int, metavar="N",
                   help="grid points per coordinate scan (default 7)")
    p.add_argument("--f-ec", type=float, metavar="F",
                   help="reconciliation inefficiency (default 1.07)")
    p.add_argument("--f-ds", type=float, metavar="F",
                   help="deskewing inefficiency (default 1.05)")
    p.add_argument("--sift-ratio", type=float, metavar="R",
                   help=f"sifted/detected ratio (default {REFERENCE_SIFT_RATIO:.5f})")
    p.add_argument("--zero-fraction", type=float, metavar="Z",
                   help=f"key-bit zero fraction (default {REFERENCE_ZERO_FRACTION})")
    p.add_argument("--trace", action="store_true",
                   help="include the full evaluation trace in the report")

    p = add("curve", _cmd_curve, "Key total versus distance as CSV",
            formatter_class=argparse.RawDescriptionHelpFormatter,
            epilog=_CURVE_EPILOG)
    common_session(p)
    common_confidence(p)
    p.add_argument("--scheme", metavar="FILE",
                   help="fixed scheme JSON, or the first-point seed with --optimize")
    p.add_argument("--distances", metavar="SPEC",
                   help="MIN:MAX:STEP in km, or a comma list (default 100:170:2)")
    p.add_argument("--optimize", action="store_true",
                   help="re-optimize the scheme at every distance")
    p.add_argument("--extinction-db", type=float, metavar="DB",
                   help="vacuum-level extinction below the signal (default 23.5)")
    p.add_argument("--stages", type=int, metavar="N",
                   help="refinement stages per optimized point (default 3)")
    p.add_argument("--f-ec", type=float, metavar="F",
                   help="reconciliation inefficiency (default 1.07)")
    p.add_argument("--f-ds", type=float, metavar="F",
                   help="deskewing inefficiency (default 1.05)")
    p.add_argument("--sift-ratio", type=float, metavar="R",
                   help=f"sifted/detected ratio (default {REFERENCE_SIFT_RATIO:.5f})")
    p.add_argument("--zero-fraction", type=float, metavar="Z",
                   help=f"key-bit zero fraction (default {REFERENCE_ZERO_FRACTION})")
    p.add_argument("--detector-efficiency", type=float, metavar="E",
                   help="what-if override of the model's detector efficiency")

    p = add("calibrate", _cmd_calibrate,
            "Recover link parameters from published session totals")
    p.add_argument("--duration-h", type=float, metavar="H",
                   help="acquisition time of the totals (default 5.6)")
    p.add_argument("--detections", type=int, nargs=3, metavar="N",
                   help="per-level detection totals, ascending intensity")
    p.add_argument("--sifted", type=int, metavar="N",
                   help="total sifted bits")
    p.add_argument("--targets", type=int, nargs=2, metavar="N",
                   help="tight and worst-case key totals to land on")
    p.add_argument("--zero-fraction", type=float, metavar="Z",
                   help=f"key-bit zero fraction (default {REFERENCE_ZERO_FRACTION})")
    p.add_argument("--f-ec", type=float, metavar="F",
                   help="assumed reconciliation inefficiency (default 1.07)")
    p.add_argument("--f-ds", type=float, metavar="F",
                   help="assumed deskewing inefficiency (default 1.05)")
    common_confidence(p)
    p.add_argument("--out-model", metavar="FILE",
                   help="write the fitted channel model JSON")
    p.add_argument("--out-tally", metavar="FILE",
                   help="write the reconstructed tally JSON")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _note(f"error: {exc}")
        return 1
    try:
        return args.handler(args)
    except (ValidationError, ValueError, OSError) as exc:
        command = getattr(args, "command", "decoyqkd")
        _note(f"decoyqkd {command}: error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
