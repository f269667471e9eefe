import json

import numpy as np
import pytest
import torch

from das_exporter.detector import build_detector

NUM_CLASSES = 3
FEATURE_DIM = 12
CHANNELS = 8
GRID = 3


@pytest.fixture(scope="session")
def export_workspace(tmp_path_factory):
    """Checkpoints, images and a config file for a small export run."""
    root = tmp_path_factory.mktemp("export-inputs")

    checkpoints = []
    for i, seed in enumerate((101, 202, 303)):
        torch.manual_seed(seed)
        model = build_detector(NUM_CLASSES, FEATURE_DIM, CHANNELS, GRID)
        rel = f"checkpoint_{i}.pt"
        torch.save(model.state_dict(), root / rel)
        checkpoints.append(rel)

    rng = np.random.default_rng(0)
    def image_list(prefix, count):
        rels = []
        for i in range(count):
            rel = f"{prefix}_{i:02d}.npy"
            np.save(root / rel, rng.uniform(0, 1, (24, 24, 3)).astype(np.float32))
            rels.append(rel)
        return rels

    config_doc = {
        "run_id": "torch-export",
        "checkpoints": checkpoints,
        "source_images": image_list("src", 4),
        "target_images": image_list("tgt", 4),
        "num_classes": NUM_CLASSES,
        "feature_dim": FEATURE_DIM,
        "channels": CHANNELS,
        "grid": GRID,
        "gamma": 1.0,
        "perturbation_seed": 7,
    }
    config_path = root / "export_config.json"
    config_path.write_text(json.dumps(config_doc, indent=2))
    return root, config_path, config_doc
