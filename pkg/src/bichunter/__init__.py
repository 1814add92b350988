"""Rank the deleted lines of bug-fixing commits by root-cause likelihood.

The pipeline: load a nodes/edges corpus, embed each line, assemble per-commit
graphs, optionally prune mislabeled root-cause annotations with confident
learning, train a weighted GCN scorer pairwise, and report Recall@N / MFR.
"""

from .baseclf import ClassifierSpec, fit, predict_proba
from .dataset import (
    DatasetError,
    DatasetIndex,
    EdgeRecord,
    LineNode,
    cross_project_split,
    kfold_split,
    load_dataset,
    save_dataset,
)
from .denoise import (
    NoiseReport,
    compute_thresholds,
    confident_joint,
    denoise_dataset,
    estimate_joint,
    oof_probabilities,
    select_noise,
)
from .embedding import (
    EmbeddingMatrix,
    embed_index,
    hash_embed,
    load_precomputed,
    write_embeddings,
)
from .gcnrank import (
    RankModel,
    backward,
    forward,
    init_rank_model,
    load_checkpoint,
    pair_loss,
    pair_prob,
    pair_targets,
    save_checkpoint,
)
from .graphbuild import (
    CommitGraph,
    build_commit_graph,
    derive_edges_by_reachability,
    normalized_operator,
)
from .metrics import (
    EvalReport,
    RankingResult,
    evaluate,
    evaluate_model,
    mfr,
    rank_commit,
    recall_at_n,
)
from .trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    generate_pairs,
    run_cross_project,
    run_kfold,
    train,
)

__version__ = "0.1.0"
