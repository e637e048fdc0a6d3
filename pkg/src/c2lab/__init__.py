"""Encrypted-C2 flow detection and evasion lab.

Pipeline pieces: pcap ingest and TCP flow assembly, Tstat-indexed flow
features, an MLP detector with exact input gradients, constraint-limited
FGSM attacks, pcap-level crafting of longer flows, adversarial hardening,
and the iterative attack-hardening loop.
"""

from .attack import AttackSpec, DurationMultiplier, generate_attack_set
from .craft import apply_craft, plan_craft, verify_craft
from .detector import ModelConfig, TrainConfig, init_model, load_model, predict, save_model, train
from .evaluation import LoopConfig, cross_matrix, evaluate, harden, prepare_dataset, run_loop
from .features import compute_features, denormalize, fit_normalizer, normalize
from .pcap import assemble_flows, filter_complete, parse_pcap

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "DurationMultiplier", "generate_attack_set",
    "apply_craft", "plan_craft", "verify_craft",
    "ModelConfig", "TrainConfig", "init_model", "load_model", "predict",
    "save_model", "train",
    "LoopConfig", "cross_matrix", "evaluate", "harden", "prepare_dataset",
    "run_loop",
    "compute_features", "denormalize", "fit_normalizer", "normalize",
    "assemble_flows", "filter_complete", "parse_pcap",
]
