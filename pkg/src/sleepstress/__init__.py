"""Stress detection, prediction and control from sleep physiology.

Subpackages cover the full pipeline: the physiological data model and
crisp characterization table (`physio`), fuzzy and neural classifiers
(`fuzzy`, `neural`), the sleep-session state machine (`session`), and
the privacy layer: keypairs and sealed envelopes (`crypto`), the
permissioned proof-of-work ledger (`ledger`), on-chain access-policy
and data-management contracts (`contracts`), and the upload/retrieve
protocol gateway with its threat harness (`gateway`).
"""

__version__ = "0.1.0"
