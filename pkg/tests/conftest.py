import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from pdediscovery.cli import main
from pdediscovery.derivnet import Mlp
from pdediscovery.discover import model_from_dict
from pdediscovery.features import LibrarySpec, build_design_matrix
from pdediscovery.ingest import read_dataset_csv


@dataclass
class PipelineRun:
    """Artifacts of one default ``simulate -> fit -> discover`` run."""

    out: Path
    seconds: float
    net: Mlp
    points: np.ndarray
    _designs: dict = field(default_factory=dict)

    @property
    def model(self):
        return model_from_dict(json.loads((self.out / "model.json").read_text())["model"])

    def design(self, m: int = 2, k: int = 2):
        if (m, k) not in self._designs:
            self._designs[(m, k)] = build_design_matrix(self.net, self.points, LibrarySpec(m=m, k=k))
        return self._designs[(m, k)]


def sample_points(data, n_rows: int, seed: int = 0) -> np.ndarray:
    """Same row sample the command line uses for discovery."""
    order = data.canonical_order()
    rng = np.random.default_rng(seed)
    if len(order) > n_rows:
        order = np.sort(order[rng.choice(len(order), n_rows, replace=False)])
    return data.inputs[order]


@pytest.fixture(scope="session")
def burgers_run(tmp_path_factory) -> PipelineRun:
    out = tmp_path_factory.mktemp("burgers")
    start = time.perf_counter()
    for stage in ("simulate", "fit", "discover"):
        assert main([stage, "--out", str(out)]) == 0
    seconds = time.perf_counter() - start
    net = Mlp.from_dict(json.loads((out / "network.json").read_text())["network"])
    points = sample_points(read_dataset_csv(out / "dataset.csv"), 50000)
    return PipelineRun(out, seconds, net, points)
