"""fedcirc: federated training of a compact analog topology generator.

The pipeline parses netlists into pin-level graphs, compresses them via
pruning, frequent-subgraph tokenization and Chinese-Postman eulerization
into token walks, trains a small autoregressive generator under simulated
federated averaging, and evaluates heterogeneity, poisoning attacks and
anomaly-based defense.
"""

__version__ = "0.1.0"
