from .metrics import (CONVENTIONS, Detection, MetricsReport, compute_metrics, confusion_matrix,
                      format_table, gt_repeat, ave_repeat, naive_baselines)
from .sweeps import TAU_GRID, WINDOW_GRID, SweepCell, SweepResult, sweep_tau, sweep_window
