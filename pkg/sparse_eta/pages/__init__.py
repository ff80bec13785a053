"""
Pages module for sparse_eta.

Pages are the entry points: the ``sparse-eta`` click command group that
wires configuration, logging and the experiment pipeline together.
"""
