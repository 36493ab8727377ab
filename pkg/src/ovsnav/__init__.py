"""Target-aware visual servoing for multirotors.

Plans a trajectory that keeps a target framed by the onboard camera while
flying to a goal pose, tracks it with a receding-horizon NMPC, and
benchmarks both against a straight-line PBVS baseline in a deterministic
closed-loop simulator.
"""

__version__ = "0.1.0"
