"""Shared fixtures: record builders and a small deterministic campaign."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any

import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
SCRIPTS_DIR = REPO_ROOT / "scripts"
if str(SCRIPTS_DIR) not in sys.path:
    sys.path.insert(0, str(SCRIPTS_DIR))

from evalkit.rollout import ConditionTag, RolloutRecord


def make_record(
    rollout_id: str = "ro-0001",
    task: str = "stack-dishes",
    policy: str = "policy-a",
    success: bool = True,
    **overrides: Any,
) -> RolloutRecord:
    fields: dict[str, Any] = {
        "rollout_id": rollout_id,
        "task": task,
        "policy": policy,
        "condition": ConditionTag(kind="nominal"),
        "station": "station-01",
        "started_at": "2026-07-01T08:00:00+00:00",
        "ended_at": "2026-07-01T08:05:00+00:00",
        "success": success,
        "terminal_reason": "success" if success else "timeout",
    }
    fields.update(overrides)
    return RolloutRecord(**fields)


@pytest.fixture
def record() -> RolloutRecord:
    return make_record()


@pytest.fixture
def demo_campaign(tmp_path: Path) -> Path:
    """A tiny 3-policy, 3-task campaign directory; returns the config path."""
    from make_demo_campaign import build_campaign

    return build_campaign(tmp_path / "campaign", seed=424242, n_bundles=12)
