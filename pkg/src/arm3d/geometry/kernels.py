"""Geometry kernel backend selection.

The compiled Cython module is preferred when it was built; otherwise the
numpy fallback is used. Both expose the same functions with identical
semantics, and the test suite cross-checks them whenever both import.
"""

try:
    from . import _kernels_cy as _impl
    BACKEND = "compiled"
except ImportError:  # extension not built
    from . import _kernels_py as _impl
    BACKEND = "numpy"

pairwise_iou = _impl.pairwise_iou
spatial_pair_stats = _impl.spatial_pair_stats
spatial_pair_labels = _impl.spatial_pair_labels
nearest_gt = _impl.nearest_gt
nms_greedy = _impl.nms_greedy


def available_backends():
    """Importable backends by name; used by tests and the benchmark."""
    from . import _kernels_py
    backends = {"numpy": _kernels_py}
    try:
        from . import _kernels_cy
        backends["compiled"] = _kernels_cy
    except ImportError:
        pass
    return backends
