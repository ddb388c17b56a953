"""Bubble and negative-bubble detection with LPPL fits and pattern-recognition alarms."""

from bubblealarm.market_data import PriceSeries, RateSeries, load_price_series, load_riskfree
from bubblealarm.windows import Window, generate_windows
from bubblealarm.lppl import FitConfig, FitResult, LpplParams, fit_window
from bubblealarm.events import EventLabels, label_events
from bubblealarm.patrec import AlarmSeries, FeatureSet
from bubblealarm.evaluation import ErrorDiagram, error_diagram, skill_summary

__version__ = "0.1.0"

__all__ = [
    "AlarmSeries",
    "ErrorDiagram",
    "EventLabels",
    "FeatureSet",
    "FitConfig",
    "FitResult",
    "LpplParams",
    "PriceSeries",
    "RateSeries",
    "Window",
    "error_diagram",
    "fit_window",
    "generate_windows",
    "label_events",
    "load_price_series",
    "load_riskfree",
    "skill_summary",
]
