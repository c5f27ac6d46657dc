"""Biomedical entity linking pipeline: dense candidate retrieval, listwise
LLM re-ranking, distillation dataset generation, and Acc@k evaluation."""

__version__ = "0.1.0"
