import numpy as np
import pytest
import torch

from prd.generator import GeneratorConfig, generate_problems

torch.set_num_threads(1)


def make_problem(rng: np.random.Generator, resolution: int = 8):
    """A structurally valid problem with random pixel cells (no metadata)."""
    from prd.problems import Configuration, RpmProblem

    cells = [
        rng.integers(0, 256, size=(resolution, resolution), dtype=np.uint8)
        for _ in range(16)
    ]
    return RpmProblem(
        context=tuple(cells[:8]),
        candidates=tuple(cells[8:]),
        configuration=Configuration.CENTER,
    )


@pytest.fixture(scope="session")
def center_pool():
    """48 small generated Center problems, labels stripped."""
    config = GeneratorConfig(configurations=("center",), resolution=48, seed=7)
    return tuple(p.without_labels() for p in generate_problems(config, 48))


@pytest.fixture(scope="session")
def labeled_mixed():
    """30 small labeled problems over two configurations."""
    config = GeneratorConfig(configurations=("center", "2x2grid"), resolution=48, seed=9)
    return tuple(generate_problems(config, 30))
