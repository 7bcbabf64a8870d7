"""Hierarchical frequency-regulation control for a commercial-building HVAC fan.

Three control levels share one building model and one set of fan curves:

* day-ahead robust reserve scheduling (:mod:`fanreg.scheduler`),
* a 15-minute robust MPC with an extended Kalman filter (:mod:`fanreg.climate`),
* a 4-second switched feedforward/PI fan-power tracker (:mod:`fanreg.regulation`).

:mod:`fanreg.harness` closes all three loops around a simulated twin-cell
building.
"""

__version__ = "0.1.0"
