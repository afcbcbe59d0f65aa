"""Regenerate the packaged quadrotor controller.

The controller is a randomly initialised 6x32x32x3 tanh network with a fixed
seed; imitation training is not part of this toolkit.
"""

from pathlib import Path

import numpy as np

from hitab.io import save_network
from hitab.net import random_network

SEED = 2024

if __name__ == "__main__":
    net = random_network([6, 32, 32, 3], np.random.default_rng(SEED), out_vector=np.array([1.0, 0.0, 0.0]))
    out = Path(__file__).resolve().parents[1] / "src" / "hitab" / "data" / "quadrotor_controller.json"
    save_network(net, out)
    print(f"wrote {out}")
