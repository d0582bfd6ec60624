"""Tri-subject (child versus both parents) kinship verification."""
from .datakit import (
    FeatureStore,
    TSKINFACE_PLAN,
    even_plan,
    generate_negatives,
    kfold_split,
    load_manifest,
    synth_generate,
    synth_patch_generate,
)
from .evalkit import ProtocolConfig, accuracy, roc_auc, run_protocol
from .facefeat import extract_patch_grid, face_feature, patch_descriptor
from .models import (
    Triples,
    bilinear_score,
    compute_priors,
    fit_abm,
    fit_block_ensemble,
    fit_model,
    fit_rsbm,
    fit_sbm,
    permute_roles,
    predict,
    predict_pair,
    stabilize_priors,
)
from .optim import (
    SolverConfig,
    fit_l1_logistic,
    fit_trace_norm_bilinear,
    prox_trace_norm,
    sigmoid,
    soft_threshold,
)
from .select import GroupMap, fit_selection, select_top_k, vote_patches

__version__ = "0.1.0"
