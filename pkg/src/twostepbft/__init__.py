"""Two-step Byzantine fault tolerant replication, simulated deterministically.

The package splits into a replica state machine (replica, pacemaker), the
value and certificate types it exchanges (messages, crypto, wire), a
discrete-event network simulator with adversaries and invariant checkers
(simnet, adversaries, invariants, explore), and a scenario-driven command
line harness (scenarios, cli).
"""

__version__ = "0.1.0"
