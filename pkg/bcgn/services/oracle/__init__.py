"""
Exact discrete-distribution oracle for the optimal discriminators, criterion
extrema and divergence decompositions.
"""

from .checks import run_oracle
from .theory_oracle import (
    DiscreteDist,
    DomainTriple,
    c_of_g_ls,
    c_of_g_standard,
    equality_witness,
    f_div,
    jsd,
    kl,
    ls_equilibrium,
    opt_d_ls,
    opt_d_standard,
    random_dist,
    standard_minimum,
    v_ls,
    v_standard,
)

__all__ = [
    "DiscreteDist",
    "DomainTriple",
    "c_of_g_ls",
    "c_of_g_standard",
    "equality_witness",
    "f_div",
    "jsd",
    "kl",
    "ls_equilibrium",
    "opt_d_ls",
    "opt_d_standard",
    "random_dist",
    "run_oracle",
    "standard_minimum",
    "v_ls",
    "v_standard",
]
