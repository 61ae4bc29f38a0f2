"""Knowledge-aware path recurrent network for explainable recommendation."""

from ._backend import BACKEND
from .errors import DataError, KprnError, NumericError
from .evaluate import build_eval_lists, evaluate, hit_at_k, ndcg_at_k
from .explain import explain, render_explanation
from .graph import (
    EnrichedGraph,
    InteractionSet,
    build_enriched_graph,
    load_graph,
    load_interactions,
    load_triplets,
    save_graph,
    split_interactions,
)
from .model import ModelDims, ModelParams, PoolConfig, init_params, pool, predict
from .paths import Path, PathCorpus, PathSet, extract_corpus, extract_paths
from .train import TrainConfig, adam_step, loss, train

__version__ = "0.1.0"
