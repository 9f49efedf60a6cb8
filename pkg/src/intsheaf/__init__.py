"""Hybrid systems as interval sheaves: sections, machines, wiring and contracts."""

from .acas import (
    AcasParams,
    AircraftParams,
    Scenario,
    ScenarioError,
    build_acas_lts,
    load_scenario,
    run_scenario,
)
from .composition import (
    CausalityError,
    ComposedMachine,
    Wire,
    WiringError,
    WiringTypeError,
    check_compatibility,
    compose_series,
    parse_wiring,
)
from .contracts import Channel, FormulaError, SatisfactionResult, check, parse_formula, window_table
from .graphs import Graph, PathSheaf, complete_graph, graph_of_sheaf, loop_graph, transition_graph
from .hybrid import HybridSheafDatum, RealizedSheaf, gamma, realize
from .intervals import TranslationMap, duration, sub_interval, window
from .linsys import LinearSystem, NumericFailure
from .machines import (
    CDSMachine,
    LinearCDS,
    LTSMachine,
    LTSSpec,
    Machine,
    MapMachine,
    SamplerMachine,
    SheafMorphism,
    parse_cds,
    parse_lts,
)
from .sections import (
    AffineODEFlow,
    FlowCell,
    HybridSection,
    JumpEdge,
    SymbolicConstant,
    canonicalize,
    glue,
    restrict,
    splice,
)

__version__ = "0.1.0"
