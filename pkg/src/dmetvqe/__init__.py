"""Desk-scale workbench for embedding-based variational quantum chemistry:
FCIDUMP ingestion, fermion-to-qubit mapping with Z2 tapering, noisy
density-matrix simulation, SPSA-driven VQE, Schmidt-bath embedding with
democratic energy partitioning, and Gaussian-process parameter refinement,
all checked against dense-diagonalization oracles."""

__version__ = "0.1.0"
