"""Contact skill workbench.

Learns force/torque assembly skills from demonstrations recorded in a
quasi-static contact simulator and executes them through a
robot-independent Cartesian force controller.
"""

__version__ = "0.1.0"
