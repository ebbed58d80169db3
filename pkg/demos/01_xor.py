"""XOR with a monotone network.

XOR is not monotone in either input, yet a MonoNet fits it: the free layers
before the interpretable bottleneck can bend the inputs into features that the
monotone head combines monotonically.  Run with ``python3 demos/01_xor.py``.
"""
import numpy as np

from mononet import Dataset, TrainConfig, build_mononet, mononet_spec, train
from mononet.interpretation import interpretable_activations
from mononet.model import monotone_signs
from mononet.training import predict
from mononet.verification import probe_monotonicity

data = Dataset(np.array([[0, 0], [0, 1], [1, 0], [1, 1]], float), np.array([0, 1, 1, 0]), ("x1", "x2"), "xor")

# %% 8 free units, 2 interpretable units, 8 monotone units
model = build_mononet(mononet_spec([8], 2, [8]), 2, seed=0)
model, hist = train(model, data, TrainConfig(epochs=300, batch_size=4, learning_rate=1e-2))
print("predictions", predict(model, data.features), "labels", data.labels)
print(f"final loss {hist.loss[-1]:.4f}")

# %% the two interpretable units, one row per input
z = interpretable_activations(model, data)
for x, row in zip(data.features.astype(int), z):
    print(x, np.round(row, 3))

# %% sign of each interpretable unit's effect on the output logit
print("signs", monotone_signs(model).entries.ravel())

# %% the monotone head really is monotone
report = probe_monotonicity(model, 2000, seed=0)
print(f"{report.probes_run} probes, {len(report.violations)} violations")
