"""Deterministic single-process simulator of federated learning under
label-skew non-IID data, with both plain federated averaging and
adversarial-image weighted aggregation."""

__version__ = "0.1.0"
