"""Python access to the resexp core library."""

import json

from ._resexp import (
    ResexpError,
    __version__,
    coupled_risk_curve,
    hoeffding_failure,
    power_law_envelope,
    run_recursion,
    scaling_exponent,
    simulate_alignment,
    spearman,
    theorem2_bound,
    wilson_upper,
)
from . import _resexp


def eps_gen_norm(constants, m, delta=0.05, rho=0.0):
    return _resexp.eps_gen_norm(json.dumps(constants), m, delta, rho)


def data_requirement(eps, delta, constants):
    return _resexp.data_requirement(eps, delta, json.dumps(constants))


def certify(margins, constants, M, K, delta=0.05, rho=0.0, margins_route_a=None):
    """Certificate record (dict) for a margin report and bound constants given as dicts."""
    a = None if margins_route_a is None else json.dumps(margins_route_a)
    return json.loads(_resexp.certify_json(json.dumps(margins), json.dumps(constants), M, K, delta, rho, a))


__all__ = [
    "ResexpError",
    "__version__",
    "certify",
    "coupled_risk_curve",
    "data_requirement",
    "eps_gen_norm",
    "hoeffding_failure",
    "power_law_envelope",
    "run_recursion",
    "scaling_exponent",
    "simulate_alignment",
    "spearman",
    "theorem2_bound",
    "wilson_upper",
]
