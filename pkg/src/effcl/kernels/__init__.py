"""Hot-kernel dispatch.

Binds the module-level kernel names to either the numba or the numpy
implementation, according to :func:`effcl.backend.active_backend`.
Import either submodule directly to pin a specific implementation
(the benchmark and the cross-backend tests do).
"""

from ..backend import active_backend

if active_backend() == "numba":
    from .numba_impl import (
        adamw_update,
        attn_softmax_bwd,
        attn_softmax_fwd,
        gelu_bwd,
        gelu_fwd,
        layer_norm_bwd,
        layer_norm_fwd,
        softmax_xent_bwd,
        softmax_xent_fwd,
    )
else:
    from .numpy_impl import (
        adamw_update,
        attn_softmax_bwd,
        attn_softmax_fwd,
        gelu_bwd,
        gelu_fwd,
        layer_norm_bwd,
        layer_norm_fwd,
        softmax_xent_bwd,
        softmax_xent_fwd,
    )

__all__ = [
    "adamw_update",
    "attn_softmax_bwd",
    "attn_softmax_fwd",
    "gelu_bwd",
    "gelu_fwd",
    "layer_norm_bwd",
    "layer_norm_fwd",
    "softmax_xent_bwd",
    "softmax_xent_fwd",
]
