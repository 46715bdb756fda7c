"""Sub-KSG partitioning and graph-augmented ranking for KG question answering."""

__version__ = "0.1.0"
