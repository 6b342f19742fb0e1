"""Fast weight layers: sequence models whose weights are rewritten per step.

A slow network (ordinary trained parameters) emits rank-one updates that
program a fast network (matrices rewritten at every timestep) — the additive
variant is linear attention, the error-correcting variant is the delta rule,
and the recurrent family feeds the fast net's own output back in. The package
bundles the layer zoo, a tape autodiff core, two synthetic algorithmic tasks,
a training engine, and a scaling/throughput benchmark harness behind one CLI.
"""

__version__ = "0.1.0"
