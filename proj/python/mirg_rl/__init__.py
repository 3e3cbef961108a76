"""Multi-image grounding trajectories, rewards and GRPO training."""

import json

from . import _core
from ._core import ParseError, canonicalize, check_format, iou, normalize_advantages

__all__ = [
    "ParseError",
    "canonicalize",
    "check_format",
    "evaluate",
    "extract_groundings",
    "generate_task",
    "iou",
    "is_correct",
    "normalize_advantages",
    "parse_trajectory",
    "run_pipeline_mock",
    "score_response",
    "train",
]


def parse_trajectory(text):
    return json.loads(_core.parse_trajectory(text))


def extract_groundings(text):
    return json.loads(_core.extract_groundings(text))


def score_response(text, ground_truth):
    return json.loads(_core.score_response(text, json.dumps(ground_truth)))


def is_correct(text, ground_truth):
    return _core.is_correct(text, json.dumps(ground_truth))


def evaluate(samples):
    lines = "\n".join(json.dumps(s) for s in samples)
    return json.loads(_core.evaluate(lines))


def generate_task(seed):
    return json.loads(_core.generate_task(seed))


def train(iterations=300, seed=7, image_reward=True, eval_tasks=200):
    return json.loads(_core.train(iterations, seed, image_reward, eval_tasks))


def run_pipeline_mock(input_path, output_path, rejects_path, max_in_flight=4):
    return json.loads(_core.run_pipeline_mock(str(input_path), str(output_path), str(rejects_path), max_in_flight))
