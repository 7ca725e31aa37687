"""Open-set face recognition: single-shot class-embedding fine-tuning over a
frozen image encoder, with a softmax-confidence rule for unknown rejection."""

from .core import (
    ConfusionCounts,
    Embedding,
    Gallery,
    HyperParams,
    IdentityLabel,
    TargetBatch,
    cosine_similarity,
    l2_normalize,
    load_config,
    save_config,
)
from .encoder import (
    EmbeddingCache,
    EncoderBackend,
    MockBackend,
    OnnxBackend,
    embed_dataset,
    embed_image,
    equiangular_centers,
    load_backend,
    mock_backend,
    pairwise_cosine_stats,
)
from .errors import FaceGalleryError
from .evaluate import (
    EvaluationReport,
    Session,
    accuracy,
    decide_session,
    fnr,
    fpr,
    load_sessions,
    make_report,
    render_report,
    report_csv,
    score_sessions,
    training_accuracy,
)
from .finetune import (
    OptimizerState,
    RandomInit,
    TrainHistory,
    adamw_step,
    adamw_update,
    build_prompts,
    compute_logits,
    cosine_lr,
    cross_entropy_loss,
    finetune_single_shot,
    init_gallery,
    load_gallery,
    loss_gradient,
    read_prompt_embeddings,
    save_gallery,
    write_prompt_embeddings,
)
from .preprocess import (
    ALIGNMENT_TEMPLATE_224,
    DatasetIndex,
    FaceImage,
    Landmarks5,
    SimilarityTransform,
    align_face,
    estimate_similarity_transform,
    ingest_dataset,
    prepare_face,
    split_dataset,
)
from .recognize import RecognitionDecision, predict, softmax

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
