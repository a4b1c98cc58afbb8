"""Batched alternating minimization for phase retrieval with random initialization."""
