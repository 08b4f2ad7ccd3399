"""Distributed Riemannian stochastic proximal methods on embedded submanifolds.

Modules: :mod:`~drsp.geometry` (manifolds), :mod:`~drsp.network` (graphs and
mixing), :mod:`~drsp.problems` and :mod:`~drsp.models` (losses and prox
steps), :mod:`~drsp.solver` (the synchronous rounds), :mod:`~drsp.metrics`
(stationarity), :mod:`~drsp.oracle` (test references) and :mod:`~drsp.cli`.
"""

__version__ = "0.1.0"
