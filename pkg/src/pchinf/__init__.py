"""H-infinity static output-feedback synthesis under probabilistic polynomial uncertainty.

Library layout:

- ``polychaos``: orthonormal bases, quadrature, exact monomial/matrix expansions
- ``plant``: uncertain plant model, closed-loop evaluation, parameter sampling
- ``galerkin``: expanded (PCE-transformed) closed-loop systems, both transform routes
- ``sdp``: dense primal-dual interior-point solver for small LMI/SDP problems
- ``hinf``: H-infinity analysis and LMI constraint assembly
- ``synth``: alternating-SDP gain synthesis, stability post-analysis, robustness bisection
- ``evaluation``: norm distributions, trajectory statistics, transform-error comparison
- ``report``: CSV and figure emitters
- ``cli``: command-line front end
"""

__version__ = "0.1.0"

from . import polychaos, plant, galerkin, sdp, hinf, synth, evaluation, report  # noqa: F401,E402
