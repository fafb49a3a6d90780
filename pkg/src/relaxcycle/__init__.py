"""Relaxation cycles of a spring-block model with rate-and-state friction.

Modules
-------
model        vector fields, critical manifold, reduced flow, Hamiltonian
compactify   Poincare sphere and its charts at infinity
integrate    stiff integrator with events and chart switching
atlas        blowup charts, coordinate changes and their verification
singular     invariant manifolds and the singular cycle
returnmap    sections, return maps and limit cycles
experiments  sweeps behind the command-line interface
"""
from .model import Params, vf_slow, vf_fast, vf_reduced, hamiltonian, locate_hopf
from .integrate import IntegratorConfig, Section, Trajectory, integrate, integrate_multichart
from .singular import build_gamma0, wcu_q6, wcs_q3, separation_function, hausdorff_to_cycle
from .returnmap import LimitCycle, find_limit_cycle, pi0, pi1, pi0_reduced, section_specs

__version__ = "0.1.0"

__all__ = [
    "Params", "vf_slow", "vf_fast", "vf_reduced", "hamiltonian", "locate_hopf",
    "IntegratorConfig", "Section", "Trajectory", "integrate", "integrate_multichart",
    "build_gamma0", "wcu_q6", "wcs_q3", "separation_function", "hausdorff_to_cycle",
    "LimitCycle", "find_limit_cycle", "pi0", "pi1", "pi0_reduced", "section_specs",
]
