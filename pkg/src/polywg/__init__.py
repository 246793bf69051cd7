"""Weak Galerkin solver for stationary Stokes flow on polygonal meshes.

Two discretizations share one stiffness matrix: a stabilizer-free scheme whose
body load is tested against the interior velocity component, and a
pressure-robust scheme whose load is tested against an H(div)-conforming
velocity reconstruction built from piecewise Raviart-Thomas fields on a cell
subtriangulation.
"""

__version__ = "0.1.0"
