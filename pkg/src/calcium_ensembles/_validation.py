"""Input checks shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_traces(X):
    """Finite float ``(n, T)`` array with at least one neuron and one frame."""
    return check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)


def check_locations(locations, n):
    if locations is None:
        return None
    loc = check_array(locations, dtype=np.float64, ensure_all_finite=True)
    if loc.shape != (n, 2):
        raise ValueError(f"locations must have shape ({n}, 2), got {loc.shape}")
    return loc
