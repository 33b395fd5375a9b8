"""Learned sRGB <-> RAW camera pipeline, realistic noise synthesis and denoisers."""
from .bayer import BayerPattern, PackedRaw, RawMosaic, bayer_flip, mosaic, pack, unify_pattern, unpack
from .errors import (ArgumentError, ChecksumError, ConfigError, CycleISPError, DataError,
                     DimensionError, NonFiniteLossError, PatternError)
from .models import (BranchConfig, ColorConfig, CycleConfig, CycleISP, Denoiser, DenoiserConfig,
                     RAW2RGB, RGB2RAW, ColorCorrection)
from .noise import (NoiseParams, NoiseResidue, NoiseSampling, apply_residue, extract_residue, inject_noise,
                    noise_level_map, sample_noise_params)

__version__ = "0.1.0"
