"""Heterodyne fluorescence spectra, laser cooling and Bloch-equation fits for a single trapped Ba+ ion."""

from ._core import (
    ConfigError,
    DomainError,
    Error,
    NumericalError,
    bessel_j,
    cooling_rate,
    default_parameters,
    fit_sideband_pair,
    lorentzian_mod_index,
    micromotion_amplitude_m,
    min_detectable_micromotion_m,
    p_population,
    recoil_frequency_hz,
    scan_650,
    synthesize_sideband_traces,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "NumericalError",
    "bessel_j",
    "cooling_rate",
    "default_parameters",
    "fit_sideband_pair",
    "lorentzian_mod_index",
    "micromotion_amplitude_m",
    "min_detectable_micromotion_m",
    "p_population",
    "recoil_frequency_hz",
    "scan_650",
    "synthesize_sideband_traces",
]
