"""argosim: deterministic head-to-head autonomous racing simulator.

A supervisory automaton network (race supervisor, overtake automaton,
position-defense automaton) drives a quintic-spline local planner and an MPC
path tracker over a kinematic bicycle model. Every run emits a transition
trace that a built-in verifier checks against the framework's state-machine
and conservation properties.
"""

__version__ = "0.1.0"
