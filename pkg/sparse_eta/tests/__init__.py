"""
Test suite for sparse_eta package.
"""
