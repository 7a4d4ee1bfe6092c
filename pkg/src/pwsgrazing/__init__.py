"""Planar Filippov piecewise-smooth systems with grazing-loop unfoldings."""

from . import expr, flow, maps, scenarios, system, unfold
from .expr import parse
from .fields import ExprField
from .flow import Controls, DEFAULT, LoopRecord, Orbit, detect_and_classify_loop
from .flow import flow as integrate
from .maps import Section, count_bifurcations, find_fixed_points, return_map, transition_record
from .scenarios import make_scenario, run_m3_construction, run_theorem1
from .system import PWSSystem, classify_point, decompose, find_tangencies, load_system, tangency_at
from .unfold import NormalForm, UnfoldingParams, build_transition, build_unfolded, c1_distance, check_admissible

__version__ = "0.1.0"
