"""Link-level simulator and analysis toolkit for a two-node energy
harvesting sensor link with adaptive ACK/NAKx retransmission, belief-based
transmit power control, and an exact Markov-chain drop-probability
analysis for the fixed power policy."""

__version__ = "0.1.0"
