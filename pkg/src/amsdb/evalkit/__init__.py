from .metrics import (MetricsReport, UndefinedMetricError, confusion, evaluate, f_measure,
                      mean_report, pseudo_f_measure, psnr)
from .skeleton import skeletonize
from .thresholds import bradley, otsu, sauvola

__all__ = [
    "MetricsReport", "UndefinedMetricError", "confusion", "evaluate", "f_measure", "mean_report",
    "pseudo_f_measure", "psnr", "skeletonize", "otsu", "sauvola", "bradley",
]
