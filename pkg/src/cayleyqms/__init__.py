"""Quantum Markov states on Cayley trees: construction, checks and decompositions."""
