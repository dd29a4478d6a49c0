"""Numerical laboratory for Riesz transforms of the Bessel operator on the
weighted half-line and its square: kernels, commutators, oscillation norms,
Haar paraproducts, atomic Hardy-space decompositions and weak factorization."""

__version__ = "0.1.0"
