"""Disambiguate-and-discriminate engine for visual word sense disambiguation.

Pipeline: gloss matching over a sense inventory, prompt construction,
supporting-image retrieval by embedding KNN, multi-modal fusion, and
ranked evaluation with HIT@1 / MRR.
"""

__version__ = "0.1.0"
