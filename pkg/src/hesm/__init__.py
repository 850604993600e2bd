"""Hierarchical ensembles of summarization models.

Token-level ensembling of conditional sequence models, constrained beam
search, minimum Bayes risk selection under ROUGE rewards, extractive oracle
baselines and a cross-validation harness, all runnable on CPU with small
trainable summarizers.
"""

__version__ = "0.1.0"
