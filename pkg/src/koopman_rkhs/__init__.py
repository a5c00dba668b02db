"""Koopman eigenfrequency detection from time series via RKHS norms of Fourier functions."""
