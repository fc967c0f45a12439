"""Knowledge-graph anomaly scoring for IT/OT event streams.

Subpackages and modules:

* :mod:`kgsec.graph_store` triple storage with counts and negative sampling
* :mod:`kgsec.embedding` RESCAL model, MSE and energy trainers
* :mod:`kgsec.ingestion` log parsers and event-to-triple mapping
* :mod:`kgsec.testbed` simulated industrial testbed and attack scenarios
* :mod:`kgsec.evaluation` scoring and severity-ordering reports
* :mod:`kgsec.pipeline` / :mod:`kgsec.cli` end-to-end runs
"""

__version__ = "0.1.0"
