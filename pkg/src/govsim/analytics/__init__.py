"""Pluggable governance analytics: leg delays, statistics, assessments, drift."""

from .assess import (  # noqa: F401
    Alert,
    AssessmentRule,
    Incident,
    Observation,
    assess,
    correlate_alerts,
)
from .drift import DesiredState, DriftItem, DriftReport, detect_drift  # noqa: F401
from .legs import (  # noqa: F401
    DEFAULT_LEG_SETS,
    LegDef,
    LegDelayRecord,
    compute_legs,
    leg_records,
)
from .stats import (  # noqa: F401
    SummaryStats,
    export_boxplot_csv,
    export_report,
    export_stats_json,
    group_delays,
    summarize_stats,
)
