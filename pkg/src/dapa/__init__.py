"""Distribution-aware piecewise-linear activation approximation."""
from .distribution import EmpiricalDistribution, SampleSet, cdf_at, from_samples, merge, pdf_at, quantile
from .fitter import DapaConfig, DapaTable, build_dapa, compute_knots, eval_piecewise, fit_segment_wls
from .metrics import ApproxReport, CorrelationReport, approx_report, correlations, dwmse, fisher_ci, mse
from .quantizer import (
    FixedPointFormat,
    QuantizedTable,
    encode_decode,
    eval_fixed,
    quantize_table,
    select_format,
)
from .reference import ActivationKind, eval_exact, eval_exact_derivative, softmax_exact

__version__ = "0.1.0"
