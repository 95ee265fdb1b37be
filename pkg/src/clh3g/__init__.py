"""Style-aware headline generation: a transformer pointer-generator conditioned on an
author's historical headlines, trained with an auxiliary contrastive loss."""

from .corpus import AuthorRecord, HeadlineDataset, SplitManifest, Vocabulary, generate_synthetic_corpus, make_split
from .decoder import FusionConfig
from .evaluation import MetricReport, StyleReport, bleu, rouge_l, rouge_n
from .inference import InferenceConfig, beam_search, generate_headline
from .model import HeadlineGenerator, ModelConfig, load_model, save_model
from .trainer import TrainConfig, fit, run_ablation_grid, total_loss

__version__ = "0.1.0"
