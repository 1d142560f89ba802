"""Split-search kernels with import-time backend selection.

The compiled extension is preferred when present; the numpy fallback is
bit-for-bit equivalent (same accumulation order, same tie-breaks), so a
source-only install produces identical models, just slower. Set
``SHIFTLENS_KERNELS=py`` to force the fallback.
"""

from __future__ import annotations

import os

_forced = os.environ.get("SHIFTLENS_KERNELS", "").strip().lower()

if _forced in ("py", "python"):
    from . import _pykernels as _impl

    BACKEND = "python"
elif _forced in ("c", "compiled"):
    from . import _ckernels as _impl  # type: ignore[attr-defined]

    BACKEND = "compiled"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        from . import _pykernels as _impl

        BACKEND = "python"

best_split_logistic = _impl.best_split_logistic
best_split_gini = _impl.best_split_gini

__all__ = ["BACKEND", "best_split_logistic", "best_split_gini"]
