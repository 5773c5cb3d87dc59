from .scatter import get_metric_layout, get_metric_scatters, get_scatter, metric_log_figure  # noqa: F401 unused imports
from .heatmap import depth_error_heatmap, heatmapify  # noqa: F401 unused imports

# Q: What code should live here?
# A: Anything that turns a run's outputs into a plot for a notebook
