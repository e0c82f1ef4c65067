"""Discretely self-similar solutions of the Boussinesq system with Newtonian gravity.

The package builds heat-flow profiles of scaling-critical data, revises them
into compactly perturbed backgrounds, and solves the time-periodic Leray
system for the finite-energy deviation on a truncated periodic box.
"""

__version__ = "0.1.0"
