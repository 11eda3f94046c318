"""Verifiable rewards and GRPO training for structured document QA."""

from docrl.grpo import GrpoConfig, compute_advantages, grpo_loss_clipped, grpo_loss_simplified, kl_estimate
from docrl.rewards import GroundTruth, RewardBreakdown, RewardConfig, RewardWeights, iou, score
from docrl.structured_output import BoundingBox, ParseFailure, StructuredResponse, build_prompt, parse, render

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "GroundTruth", "GrpoConfig", "ParseFailure", "RewardBreakdown", "RewardConfig",
    "RewardWeights", "StructuredResponse", "build_prompt", "compute_advantages", "grpo_loss_clipped",
    "grpo_loss_simplified", "iou", "kl_estimate", "parse", "render", "score",
]
