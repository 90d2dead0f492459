"""Shared fixtures.

The expensive ones (trained skill policies) are session scoped so the unit
tests and the acceptance suite reuse a single training run.
"""
from __future__ import annotations

import numpy as np
import pytest

from combilearn.dataset import generate_demoset
from combilearn.domain import ExperimentConfig, seeded_rng
from combilearn.geometry import bundled_geometry
from combilearn.imitation import train_policy


@pytest.fixture(scope="session")
def cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def l_geometry():
    return bundled_geometry("l-insertion")


@pytest.fixture(scope="session")
def channel_geometry():
    return bundled_geometry("friction-channel")


@pytest.fixture(scope="session")
def demos(cfg, l_geometry):
    return generate_demoset(l_geometry, seeded_rng(cfg.seed))


@pytest.fixture(scope="session")
def il_policies(cfg, l_geometry, demos):
    """HGCIL and both baselines trained with the default imitation settings."""
    ws = np.asarray(l_geometry.workspace)
    return {kind: train_policy(kind, demos.train, demos.validation, cfg.imitation,
                               cfg.ws_frac, cfg.wm_frac, random_state=cfg.seed, workspace=ws)
            for kind in ("hgcil", "gcbc-flat", "bc")}


# ---------------------------------------------------------------------------
# acceptance verdicts, echoed once at the end of the run

VERDICTS: dict = {}


@pytest.fixture(scope="session")
def verdicts():
    return VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[n])
