"""Recover synthesizer patches from recorded notes."""

from ._core import (
    SAMPLE_RATE,
    InputError,
    OptimizationAborted,
    Patch,
    Tier,
    composite_loss,
    denormalize,
    detect_onsets,
    detect_pitch,
    dimension,
    format_preset,
    load_preset,
    match_file,
    match_notes,
    midi_to_hz,
    minimize,
    normalize,
    param_names,
    parse_preset,
    parse_tier,
    read_wav,
    render,
    save_preset,
    spectral_centroid,
    tier_label,
    write_wav,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
