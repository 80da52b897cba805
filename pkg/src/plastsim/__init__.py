"""plastsim: structural-plasticity network simulator.

Neurons grow and retract synaptic elements through calcium-driven
homeostasis and pair vacant elements through distance-dependent Gaussian
attraction, searched hierarchically over an octree with truncated series
expansions (exact all-pairs and point-to-box tree walks serve as baselines
and oracles).
"""

from .config import RunConfig, load_config, parse_config
from .connectivity import (DispatchMethod, DispatchThresholds, SynapseRequest,
                           SynapseResponse, choose_source, choose_target,
                           dispatch_method, find_synapses, init_stack,
                           resolve_conflicts)
from .kernel import (ExpansionCoefficients, KernelParams, PointSet,
                     direct_field, hermite_evaluate, hermite_expand,
                     hermite_h, taylor_evaluate, taylor_expand)
from .model import (ModelParams, NeuronState, Population, apply_element_update,
                    baseline_spike_rate, calibrated_calcium_decay, growth_delta,
                    prune_synapses, update_activity, update_calcium)
from .octree import Box, NodeSummary, Octree, OctreeError, shared_top, subtree_level
from .simulation import MetricsRow, RunResult, Simulation, TimingRow, run_simulation

__version__ = "0.1.0"
