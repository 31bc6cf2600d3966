"""Poisoning attacks; importing this package fills the attack registry."""
from .base import Attack, AttackContext
from . import model_poisoning, data_poisoning  # noqa: F401  (registration)
from .model_poisoning import alie_z_max, perturbation
from .data_poisoning import neurotoxin_mask, altermin_train

__all__ = ["Attack", "AttackContext", "alie_z_max", "perturbation", "neurotoxin_mask", "altermin_train"]
