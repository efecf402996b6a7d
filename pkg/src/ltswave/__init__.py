"""Explicit local time-stepping integrators for the 1-D damped wave equation.

The package is organized as:

- ``numkit``: matrix types, deterministic products, symmetric eigensolvers
- ``coefficients``: exact-rational multistep/substep coefficient tables
- ``fem1d``: two-scale meshes and the three semi-discretizations
- ``integrators``: leap-frog family and Adams-Bashforth family steppers
- ``stability``: CFL scans and empirical maximum-step searches
- ``harness``: convergence / energy / stability experiment drivers
- ``cli``: command line front end writing CSV, JSON manifests and figures
"""

__version__ = "0.1.0"
