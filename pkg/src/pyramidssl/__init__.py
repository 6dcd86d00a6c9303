"""Multi-resolution self-supervised pretraining for pyramidal images, at desk scale.

Submodules: ``pyramid`` (geometry and I/O), ``synth`` (synthetic cohorts),
``pretext`` (location/pair sampling and shards), ``nncore`` (autodiff),
``model``, ``train``, ``downstream``, ``evaluation``, ``config`` and ``cli``.
"""

from .errors import ConfigError, DataError, NumericalError, PyramidSSLError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericalError", "PyramidSSLError", "__version__"]
