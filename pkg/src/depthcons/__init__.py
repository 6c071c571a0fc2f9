"""Frequency-domain consistency analysis for video depth, with a two-stage
surrogate pipeline (pairwise global alignment, then temporal spectral
denoising) and a synthetic benchmark."""

from .fusion import (DenoiserConfig, SpectralDenoiser, TwoStageEstimator, WindowPlan,
                     blend_windows, denoise_video, plan_windows, run_two_stage,
                     spectral_denoise_window)
from .metrics import (AffineAligner, AffineFit, MetricReport, apply_affine, compute_metrics,
                      fit_affine_per_frame, fit_affine_shared, region_split_metrics)
from .model import (CameraTrack, DepthVideo, RegionMasks, read_container, resize_nearest,
                    write_container)
from .registration import (GlobalAligner, PairGraph, PairwisePrediction, SimilarityTransform,
                           align_global, enumerate_pairs, max_confidence_spanning_tree,
                           procrustes_similarity, weiszfeld_focal)
from .schedule import build_schedule, make_spacing, mean_shift_diagnostic, q_sample, snr
from .spectral import (BandPartition, ErrorSequence, ErrorSpectrum, amplitude_ratio,
                       band_metric, band_reconstruction, dft, idft, lowpass_error_model,
                       make_band_partition, magnitude_spectrum, parseval_check)
from .synth import EstimatorSurrogateSpec, SceneSpec, corrupt, make_pairwise, render_gt
from .tempcons import TempConsReport, temporal_consistency

__version__ = "0.1.0"

__all__ = [
    "DepthVideo", "CameraTrack", "RegionMasks", "read_container", "write_container",
    "resize_nearest",
    "AffineFit", "MetricReport", "AffineAligner", "fit_affine_shared", "fit_affine_per_frame",
    "apply_affine", "compute_metrics", "region_split_metrics",
    "ErrorSequence", "ErrorSpectrum", "BandPartition", "dft", "idft", "make_band_partition",
    "band_reconstruction", "band_metric", "magnitude_spectrum", "amplitude_ratio",
    "lowpass_error_model", "parseval_check",
    "build_schedule", "snr", "make_spacing", "q_sample", "mean_shift_diagnostic",
    "PairwisePrediction", "PairGraph", "SimilarityTransform", "GlobalAligner",
    "enumerate_pairs", "max_confidence_spanning_tree", "procrustes_similarity",
    "weiszfeld_focal", "align_global",
    "WindowPlan", "DenoiserConfig", "SpectralDenoiser", "TwoStageEstimator", "plan_windows",
    "spectral_denoise_window", "blend_windows", "denoise_video", "run_two_stage",
    "SceneSpec", "EstimatorSurrogateSpec", "render_gt", "corrupt", "make_pairwise",
    "TempConsReport", "temporal_consistency",
]
