"""Diffeomorphic surface flows and the volumetric pipeline around them."""

import os

# numba's TBB layer is too old in some environments; workqueue is always available
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
