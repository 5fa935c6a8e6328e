"""Knowledge-graph completion by reranking embedding-model candidates.

The pipeline: load a knowledge graph with text attributes, train a
translational embedding model, rank completion queries, build selection
prompts over the top-m candidates, and evaluate a candidate-selection
policy (the discriminator) with the move-to-top rerank protocol.
"""

__version__ = "0.1.0"
