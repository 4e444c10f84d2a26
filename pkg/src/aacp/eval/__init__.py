from .fid import GaussianStats, fid
from .metrics import (
    UndefinedMetricError,
    average_ranks,
    emd_1d,
    emd_attributes,
    emd_hist,
    lcc,
    mse_metric,
    score_histogram,
    srcc,
)
from .report import METRIC_KEYS, MetricReport, evaluate_scores
from .saliency import SaliencyWarning, grad_cam, smooth_grad_cam, write_heatmap

__all__ = [
    "GaussianStats", "fid", "UndefinedMetricError", "average_ranks", "emd_1d", "emd_attributes",
    "emd_hist", "lcc", "mse_metric", "score_histogram", "srcc", "METRIC_KEYS", "MetricReport",
    "evaluate_scores", "SaliencyWarning", "grad_cam", "smooth_grad_cam", "write_heatmap",
]
