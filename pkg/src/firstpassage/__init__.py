"""Exact evaluation and Monte Carlo verification for Poisson first-passage counts.

The exit count ``N(t)`` is the largest ``n`` with ``pi_1 + ... + pi_n <= t``
for the arrival times ``pi_j`` of a unit-rate Poisson process. The package
computes its law and moments exactly, simulates it and its relatives
(entrance count, urn, waiting integrals, online and offline selection), and
checks the identities between them statistically.
"""

from .analytic import (
    DistributionTable,
    SeriesEval,
    birth_distribution,
    borel_pmf,
    centered_exponential_moment,
    entrance_cdf,
    exit_variance,
    log_waiting_time_mgf,
    mean_bounds,
    mean_exit_count,
    waiting_time_mgf,
    zeta_moments,
)
from .coupling import CouplingResult, surgery_step, transform, verify_coupling
from .errors import (
    DomainError,
    HorizonError,
    InvariantViolation,
    MonteCarloError,
    RangeError,
    SeriesConvergenceError,
    TruncationError,
)
from .policies import ControlFunction, PlanarSample, SelectionTrace, run_b_policy, run_i_policy
from .processes import ArrivalSequence, exit_count, sample_arrivals
from .rng import RngStream
from .stats import SummaryStats, mc_estimate

__version__ = "0.1.0"
