"""Ballistic hop mobility on small bodies.

Polyhedral gravity, rotating-frame hop propagation and shooting, scan-matching
localization, multi-hop route planning and swarm spreading. Modules:

- :mod:`asterhop.mesh` and :mod:`asterhop.shapes`: shape models and queries
- :mod:`asterhop.gravity`: constant-density polyhedron gravity field
- :mod:`asterhop.dynamics`: body-frame hop propagation
- :mod:`asterhop.lambert`: hop boundary-value solver
- :mod:`asterhop.localization`: scan simulation and ICP pose chaining
- :mod:`asterhop.planner`: RRT seeding plus evolutionary route refinement
- :mod:`asterhop.swarm`: virtual-force swarm spreading
- :mod:`asterhop.cli`: scenario-driven command line
"""

__version__ = "0.1.0"
