"""Network reconstruction and completion from dynamical time series.

Simulates voter and coupled-map-lattice dynamics on small-world graphs and
recovers the hidden adjacency matrix (fully, or for missing nodes only) by
jointly training a Gumbel-softmax graph generator, a message-passing
dynamics learner, and, for completion, a table of learnable initial states.
"""

__version__ = "0.1.0"
