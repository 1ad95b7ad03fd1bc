"""Graph node classification with semantic label embeddings as training targets."""

__version__ = "0.1.0"

from .errors import SemlabelError
from .evaluation import (CrossValReport, EvalReport, collect_paired_scores, cross_validate,
                         evaluate, report_from_confusion)
from .graph_data import (Dataset, FoldSpec, SynthConfig, generate_synthetic, load_dataset,
                         make_folds, neighbors)
from .label_encoding import (EmbeddingEndpointConfig, EncodingKind, EncodingTable,
                             LabelVocabulary, compact, cosine_similarity, decode_nearest,
                             fetch_embeddings, load_embedding_table, one_hot_table,
                             synth_hierarchical_table, building_vocabulary)
from .sage_model import SageLayer, SageModel, forward, init_model
from .stats import (ComparisonResult, TestKind, TestResult, compare_encodings, paired_t_test,
                    shapiro_wilk, wilcoxon_signed_rank)
from .training import (LossKind, TrainConfig, TrainedModel, backward, cosine_embedding_loss,
                       cosine_loss_grad, softmax_cross_entropy, train)
