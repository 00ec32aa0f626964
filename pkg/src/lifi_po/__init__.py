"""Desk-scale toolkit for proactive optimization of mobile indoor LiFi.

Simulates walking users and their optical channels, predicts posterior
poses from windows of prior uplink SNR vectors with a recurrent network,
forms predicted channel matrices, and solves a QoS-constrained
zero-forcing sum-rate maximization ahead of the service slot.
"""

__version__ = "0.1.0"
