"""Deterministic virtual-time simulator of an identity-lease marketplace:
attested enclaves broker rented account actions, settle escrowed rewards on a
simulated anonymous ledger, and scripted adversaries probe the fairness of the
exchange.
"""

__version__ = "0.1.0"
