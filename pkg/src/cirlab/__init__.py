"""cirlab: a desk-scale laboratory for class-interference regularization.

Trains small embedding networks on synthetic Gaussian-mixture data and
perturbs each training embedding toward the running average embedding of a
randomly drawn *wrong* class. The package keeps every numeric step explicit
(plain numpy forward/backward passes, hand-rolled losses) so the effect of
the perturbation on generalization can be measured and reproduced exactly.
"""

__version__ = "0.1.0"
