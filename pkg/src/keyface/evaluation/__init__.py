from .metrics import (
    GaussianStats,
    as_matrix,
    batched_retrieval,
    diversity,
    diversity_report,
    fid,
    fit_gaussian,
    frechet_distance,
    match_ranks,
    mmd,
    r_precision,
    similarity_matrix,
    wasserstein_dist,
)
from .retrieval import (
    AdamW,
    RetrievalModel,
    TrainConfig,
    bag_of_tokens,
    cosine_lr,
    encode_motion,
    encode_text,
    infonce_loss,
    train_encoder,
)
from .report import evaluate_sets
