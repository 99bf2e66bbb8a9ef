"""Sequential domain adaptation with elastic weight consolidation, on a numpy autodiff core."""

from sdalab.data import DomainDataset, Split, Vocab, encode_text, load_embeddings, load_mdsd
from sdalab.models import ArchConfig, Model, bce_loss, build_model, forward_predict
from sdalab.orchestrator import (
    DifficultyRanking, RunResult, evaluate_accuracy, make_orderings, rank_difficulty, run_sda,
)
from sdalab.strategies import (
    EWC, Anchor, Combined, EwcConfig, FisherDiag, IMMMean, IMMMode, Init, estimate_fisher_diag,
    ewc_penalty, imm_mean_merge, imm_mode_merge, train_combined, train_on_domain,
)
from sdalab.synthetic import SyntheticSpec, gen_synthetic

__version__ = "0.1.0"
