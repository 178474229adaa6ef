"""Hierarchical Convolutional Fusion Transformer for EEG decoding, in numpy."""

import os

# BLAS thread pools are sized when numpy loads, so the bound has to be in place first.
_threads = os.environ.get("HCFT_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
