"""Counterfactual explanations for small collaborative-filtering
recommenders: which of a user's own past ratings made the model recommend
what it did?

The library trains two small recommenders (an embedding-MLP scorer and a
factorization machine) on user-item rating logs, estimates how each training
interaction influences a recommendation score (by Hessian-based parameter
perturbation or by continued training on the reduced log), searches for a
minimal set of interactions whose removal flips the top-1 recommendation,
and verifies explanations by actually retraining without them.
"""

from .data import (Dataset, DatasetError, Interaction, ParseError,
                   SynthConfig, filter_min_actions, parse_movielens,
                   read_csv, synth_generate)
from .evaluation import (ExperimentReport, ExplainerSpec,
                         VerifiedExplanation, aes, esp, evaluate_explainers,
                         retrain_verify, sample_users, sweep_correlations,
                         sweep_embedding)
from .explain import (Explanation, SearchConfig, explain_user,
                      greedy_explain, iterative_greedy_explain,
                      write_explanations_jsonl)
from .influence import (IllConditionedError, InfluenceConfig,
                        InfluenceEstimate, InfluenceTable, hessian_block,
                        influence_table, pair_influence, perturbed_params,
                        score_after_removal, write_influence_csv)
from .models import (DivergenceError, FmParams, NcfParams, Prediction,
                     TrainConfig, forward, init, load_checkpoint,
                     loss_and_grad, mse, save_checkpoint, top_k, train)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DatasetError", "Interaction", "ParseError", "SynthConfig",
    "filter_min_actions", "parse_movielens", "read_csv", "synth_generate",
    "ExperimentReport", "ExplainerSpec", "VerifiedExplanation", "aes", "esp",
    "evaluate_explainers", "retrain_verify", "sample_users",
    "sweep_correlations", "sweep_embedding",
    "Explanation", "SearchConfig", "explain_user", "greedy_explain",
    "iterative_greedy_explain", "write_explanations_jsonl",
    "IllConditionedError", "InfluenceConfig", "InfluenceEstimate",
    "InfluenceTable", "hessian_block", "influence_table", "pair_influence",
    "perturbed_params", "score_after_removal", "write_influence_csv",
    "DivergenceError", "FmParams", "NcfParams", "Prediction", "TrainConfig",
    "forward", "init", "load_checkpoint", "loss_and_grad", "mse",
    "save_checkpoint", "top_k", "train",
    "derive_seed",
]
