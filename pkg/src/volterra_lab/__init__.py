"""Numerical laboratory for stochastic Volterra dynamics lifted to W^{1,2}.

Subpackages map onto the main machinery: the discretised Sobolev space
(`sobolev`), Monte Carlo simulation of direct / lifted Volterra dynamics
(`simulate`), the finite-dimensional Markovian truncation (`markov`), the
linear-quadratic Riccati field (`lq`), the weak-formulation backward-SDE
value (`bsde`), the multi-exponential contract reduction (`contracts`) and
the experiment CLI (`cli`).
"""

__version__ = "0.1.0"
