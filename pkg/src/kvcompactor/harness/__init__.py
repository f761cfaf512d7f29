"""Experiment harness: synthetic data, bound verification, benchmarks, sweeps, CLI."""

from .bench import bench_scaling
from .report import write_csv
from .sweep import sweep_policies
from .synth import SYNTH_KINDS, SynthProfile, planted_needles, synth_bundle
from .verify import (
    conditioned_matrix,
    leverage_sample,
    sample_size,
    sandwich_margins,
    tightest_epsilon,
    verify_spectral,
    verify_thm2,
)

__all__ = [
    "SYNTH_KINDS",
    "SynthProfile",
    "bench_scaling",
    "conditioned_matrix",
    "leverage_sample",
    "planted_needles",
    "sample_size",
    "sandwich_margins",
    "sweep_policies",
    "synth_bundle",
    "tightest_epsilon",
    "verify_spectral",
    "verify_thm2",
    "write_csv",
]
