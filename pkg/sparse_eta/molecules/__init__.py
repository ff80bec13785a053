"""
Molecules module for sparse_eta.

Molecules combine atoms into self-contained pieces: the road network and its
relational adjacency, shortest and diverse candidate routing, the reverse-mode
gradient tape, and trajectory files.
"""

from sparse_eta.molecules.road_network import RoadNetwork, RoadSegment, load_network, write_network, snap_point
from sparse_eta.molecules.routing import Route, CandidateSet, shortest_path, k_shortest_paths, candidate_set
from sparse_eta.molecules.autodiff import GradientTape, Variable, AdamState, adam_step
from sparse_eta.molecules.trajectories import (
    SparseTrajectory,
    DenseTrajectory,
    read_trajectories,
    write_trajectories
)

__all__ = [
    'RoadNetwork', 'RoadSegment', 'load_network', 'write_network', 'snap_point',
    'Route', 'CandidateSet', 'shortest_path', 'k_shortest_paths', 'candidate_set',
    'GradientTape', 'Variable', 'AdamState', 'adam_step',
    'SparseTrajectory', 'DenseTrajectory', 'read_trajectories', 'write_trajectories',
]
