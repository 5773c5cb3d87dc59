import plotly.graph_objs as go

from depth_splat.evaluate import METRIC_COLUMNS

# Y axis for each metric-log column; the two depth errors share an axis
AXES_BY_METRIC = {"loss": 1, "psnr": 2, "ssim": 3, "depth_mae": 4, "depth_rmse": 4}
AXIS_TITLES = {1: "loss", 2: "PSNR (dB)", 3: "SSIM", 4: "depth error"}
LOG_COLUMNS = ["loss"] + METRIC_COLUMNS

# Overlaid right-hand axes are stacked into the space to the right of the plot area
PLOT_AREA_RIGHT = 0.8
RIGHT_AXIS_SPACING = 0.07


def get_scatter(
    y_values, x_values=None, dataset_name=None, y_axis_number=1, marker_overrides=None, scatter_overrides=None
):
    """Quick way to get a go.Scatter for one metric series.

    Args:
        y_values: pandas Series of values, indexed by iteration unless x_values is given
        x_values: Optional, X values to go along with those
        dataset_name: Optional, legend name. Defaults to the Series name
        y_axis_number: Optional, Y-axis number. Defaults to the primary (1) Y axis
        marker_overrides: Optional, dict of go.Scatter.Marker attributes
        scatter_overrides: Optional, dict of go.Scatter attributes
    """
    marker_overrides = marker_overrides or {}
    scatter_overrides = scatter_overrides or {}

    scatter_kwargs = dict(
        x=x_values if x_values is not None else y_values.index,
        y=y_values,
        name=dataset_name or y_values.name,
        mode="lines+markers",
        marker={"symbol": "circle", "size": 5, **marker_overrides},
        opacity=0.8,
        yaxis=f"y{y_axis_number}",
    )
    scatter_kwargs.update(scatter_overrides)
    return go.Scatter(**scatter_kwargs)


def get_metric_scatters(log, columns=LOG_COLUMNS, run_name=None, marker_overrides=None, scatter_overrides=None):
    """One go.Scatter per metric-log column, each on its metric's axis.

    example usage:
    >>> result = fit(config, dataset)
    >>> go.Figure(get_metric_scatters(result.log), layout=get_metric_layout())

    Args:
        log: DataFrame indexed by iteration, as FitResult.log
        columns: Optional subset of LOG_COLUMNS. Columns that are missing or entirely NaN are skipped
        run_name: Optional, prefix for legend labels, to tell several runs apart on one figure
        marker_overrides, scatter_overrides: Optional, passed through to get_scatter
    """
    return [
        get_scatter(
            log[column],
            dataset_name=f"{run_name} - {column}" if run_name is not None else column,
            y_axis_number=AXES_BY_METRIC[column],
            marker_overrides=marker_overrides,
            scatter_overrides=scatter_overrides,
        )
        for column in columns
        if column in log and log[column].notna().any()
    ]


def _axis_kwargs(axis_number, title, **y_axis_params):
    key = "yaxis" if axis_number == 1 else f"yaxis{axis_number}"
    return {key: {"title": title, **y_axis_params}}


def get_metric_layout(x_axis_title="Iteration", events=None, **additional_layout_kwargs):
    """go.Layout with the loss on the left axis and PSNR, SSIM and depth error on overlaid right axes.

    Args:
        x_axis_title: Optional, default "Iteration"
        events: Optional dictionary of {"annotation": iteration}, e.g. {"soft depth on": 1000}, drawn as arrows
            along the top of the plot
        additional_layout_kwargs: passed to go.Layout, overriding the defaults here
    """
    events = events or {}

    right_axes = {}
    for axis_number in (2, 3, 4):
        right_axes.update(
            _axis_kwargs(
                axis_number,
                AXIS_TITLES[axis_number],
                overlaying="y",
                side="right",
                anchor="free",
                position=PLOT_AREA_RIGHT + RIGHT_AXIS_SPACING * (axis_number - 2),
            )
        )

    event_annotations = [
        {
            "x": iteration,
            "y": 0.95,
            "xref": "x",
            "yref": "paper",
            "text": title,
            "showarrow": True,
            "textangle": -55,
            "ax": 1,
        }
        for title, iteration in events.items()
    ]

    layout_kwargs = {
        "xaxis": {"title": x_axis_title, "domain": [0, PLOT_AREA_RIGHT]},
        "annotations": event_annotations,
        **_axis_kwargs(1, AXIS_TITLES[1]),
        **right_axes,
        **additional_layout_kwargs,
    }
    return go.Layout(**layout_kwargs)


def metric_log_figure(log, columns=LOG_COLUMNS, events=None, title="Training"):
    """Figure of a fit's metric log: the curves from get_metric_scatters on the get_metric_layout axes"""
    return go.Figure(get_metric_scatters(log, columns), layout=get_metric_layout(events=events, title=title))
