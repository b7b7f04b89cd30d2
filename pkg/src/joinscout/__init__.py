"""Semantic join discovery over table repositories.

Columns are embedded by projecting their cell vectors onto learned proxy
columns; joinable columns are found by similarity search over those
embeddings and verified against an exact cell-level oracle.
"""

from .embedder import (EmbedderConfig, EmbeddingError, HashedNgramEmbedder,
                       WordVectorEmbedder, load_word_vectors, make_embedder)
from .matching import (JoinabilityScore, MatchConfig, cells_match,
                       exact_topk, joinability, joinability_sim_form)
from .projection import (column_embedding, exact_matching_score,
                         load_proxy_checkpoint, pooled_projection,
                         save_proxy_checkpoint)
from .training import (TrainConfig, TrainingExample, infonce_loss,
                       momentum_update, rank_aware_loss, train)
from .datagen import (RankingList, SynthConfig, build_ranking_list,
                      split_column, synth_embed_positive,
                      synth_text_positive)
from .index import (AnnIndex, AnnIndexConfig, VectorStore, build_ann,
                    knn_approx, knn_exact)
from .repository import (Column, Repository, SynthBenchSpec, ingest_tables,
                         synth_benchmark)
from .evaluation import (RankedResult, ndcg_at_k, recall_at_k,
                         spearman_shift)

__version__ = "0.1.0"

__all__ = [
    "AnnIndex", "AnnIndexConfig", "Column", "EmbedderConfig",
    "EmbeddingError", "HashedNgramEmbedder", "JoinabilityScore",
    "MatchConfig", "RankedResult", "RankingList", "Repository",
    "SynthBenchSpec", "SynthConfig", "TrainConfig", "TrainingExample",
    "VectorStore", "WordVectorEmbedder", "build_ann", "build_ranking_list",
    "cells_match", "column_embedding", "exact_matching_score", "exact_topk",
    "infonce_loss", "ingest_tables", "joinability", "joinability_sim_form",
    "knn_approx", "knn_exact", "load_proxy_checkpoint", "load_word_vectors",
    "make_embedder", "momentum_update", "ndcg_at_k", "pooled_projection",
    "rank_aware_loss", "recall_at_k", "save_proxy_checkpoint",
    "spearman_shift", "split_column", "synth_benchmark",
    "synth_embed_positive", "synth_text_positive", "train",
]
