"""Topological microwave-to-optical transduction on a Fock-state lattice.

A two-level atom couples to a microwave mode and an optical mode. With a fixed
excitation number the dual-mode Jaynes-Cummings model reduces to a ``2N+1``-site
chain whose hoppings grow as ``sqrt(n)``; sweeping the two couplings moves the
chain's zero-energy mode from the microwave end to the optical end.
"""

__version__ = "0.1.0"
