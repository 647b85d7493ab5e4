"""Deterministic AS-level routing simulator for hijack experiments."""

from .engine import (EventTrace, Route, Simulator, SimnetRouter, decide, export_path,
                     read_markers, run)
from .metrics import infected_fraction, infected_set, infection_series, is_infected, ribs_at
from .oracle import OracleDivergence, fixpoint_oracle
from .scenario import MitigationPolicy, Scenario, ScenarioError, load_scenario, parse_scenario
from .topology import (SITE_PROFILES, HierarchyParams, Rel, SiteProfile, Topology, TopologyError,
                       attach_site, bind_default_sources, build_topology, generate_hierarchy,
                       parse_topology)

__all__ = [
    "EventTrace", "Route", "Simulator", "SimnetRouter", "decide", "export_path", "read_markers", "run",
    "infected_fraction", "infected_set", "infection_series", "is_infected", "ribs_at",
    "OracleDivergence", "fixpoint_oracle",
    "MitigationPolicy", "Scenario", "ScenarioError", "load_scenario", "parse_scenario",
    "SITE_PROFILES", "HierarchyParams", "Rel", "SiteProfile", "Topology", "TopologyError",
    "attach_site", "bind_default_sources", "build_topology", "generate_hierarchy", "parse_topology",
]
