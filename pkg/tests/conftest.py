"""Shared fixtures and chain factory helpers."""
from __future__ import annotations

import pytest

from leasim import ledger


def mk_chain(difficulty_bits: int = 8, issuance: dict[str, int] | None = None,
             seed_tag: str = "test") -> ledger.Chain:
    if issuance is None:
        issuance = {"renter:r1": 100 * 1_000_000}
    return ledger.Chain.genesis(issuance, difficulty_bits=difficulty_bits, seed_tag=seed_tag)


def extend(chain: ledger.Chain, n_blocks: int, txs_per_block=None) -> ledger.Chain:
    for i in range(n_blocks):
        txs = txs_per_block[i] if txs_per_block else []
        chain = chain.append_block(txs)
    return chain


@pytest.fixture
def base_chain() -> ledger.Chain:
    return mk_chain()
