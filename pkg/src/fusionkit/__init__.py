"""Statistical matching of a recipient and a donor survey file."""

from .data_model import (
    DataTable, FusionSchema, ScaleLevel, StackedFrame, Variable, VariableRole, categorise, categorise_frame,
    load_schema, load_table, split_population, stack,
)
from .errors import DataError, FusionError, MatchingError, RegressionError, SchemaError, SimulationAborted
from .evaluation import cia_corr, pearson_corr, summarize
from .matchers import MatchAssignment, PmmConfig, RhdConfig, fuse, gower_match, impute, pmm_match, rhd_match
from .regression import backward_select, dummy_expand, max_subset_select, ols_fit
from .simulation import McConfig, MCResult, load_scenarios, run_mc, write_outputs

__version__ = "0.1.0"

__all__ = [
    "DataTable", "FusionSchema", "ScaleLevel", "StackedFrame", "Variable", "VariableRole", "categorise",
    "categorise_frame", "load_schema", "load_table", "split_population", "stack",
    "DataError", "FusionError", "MatchingError", "RegressionError", "SchemaError", "SimulationAborted",
    "cia_corr", "pearson_corr", "summarize",
    "MatchAssignment", "PmmConfig", "RhdConfig", "fuse", "gower_match", "impute", "pmm_match", "rhd_match",
    "backward_select", "dummy_expand", "max_subset_select", "ols_fit",
    "McConfig", "MCResult", "load_scenarios", "run_mc", "write_outputs",
]
