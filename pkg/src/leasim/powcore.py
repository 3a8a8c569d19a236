"""PoW kernel selection: compiled extension when built, hashlib fallback otherwise.

Set LEASIM_PURE=1 to force the fallback (used by the benchmark and the
cross-backend equivalence tests). Both backends are bit-identical.
"""
from __future__ import annotations

import os

if os.environ.get("LEASIM_PURE") == "1":
    from leasim import _powcore_py as _impl
else:
    try:
        from leasim import _powcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        from leasim import _powcore_py as _impl

BACKEND: str = _impl.BACKEND
header_digest = _impl.header_digest
meets_target = _impl.meets_target
mine_nonce = _impl.mine_nonce
