"""Sparse attentive memory network for CTR prediction over long sequences.

Submodules: ``kernels`` (tensors, reverse-mode tape), ``gru``, ``encoder``,
``model`` (forward pass and variants), ``training``, ``data``,
``evaluation``, ``benchmark``, ``cli``. Kept import-light so the CLI can
pin BLAS thread counts before numpy loads.
"""

__version__ = "0.1.0"
