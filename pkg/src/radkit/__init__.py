"""Relevance-map attacks on toy single-shot detectors.

Subpackages: recorded-graph tensor math (:mod:`radkit.tensors`), toy
detectors (:mod:`radkit.detector`), synthetic corpora (:mod:`radkit.corpus`),
relevance propagation (:mod:`radkit.relevance`), the attack loop and
baselines (:mod:`radkit.attack`), detection metrics (:mod:`radkit.metrics`)
and the command line front end (:mod:`radkit.cli`).
"""

__version__ = "0.1.0"
