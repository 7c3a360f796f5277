"""Continuous time crystals beyond the symmetric subspace: exact block
Liouvillian spectra, mean-field networks and synchronization diagnostics."""

__version__ = "0.1.0"
