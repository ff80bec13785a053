"""
sparse_eta package.

A CLI tool that jointly estimates per-road-segment travel-time distributions
and recovers routes from sparse (low-sampling-rate) GPS trajectories with an
EM procedure, plus a synthetic traffic simulator that provides ground truth.
"""

__version__ = "0.1.0"
__author__ = "sparse_eta Team"
__description__ = "Travel-time estimation and route recovery from sparse GPS trajectories"
