"""kindersafe: detect and remove images of children from image datasets.

Pipeline stages: manifest ingestion, near-duplicate and similarity cleaning,
prompt-driven visual question answering against a pluggable backend,
checkpointed whole-dataset classification, Recall/FPR evaluation, annotation
auditing, energy accounting, and a human review service whose adjudications
refine the final removal manifest.
"""

__version__ = "0.1.0"
