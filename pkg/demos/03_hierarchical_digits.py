"""Hierarchical monotone features on handwritten digits.

Convolution filters are summarised by their global maximum; a monotone block
maps the summaries to hidden features and a second one maps the features to
class logits.  For a misclassified image we then trace which features pushed
the predicted class up and which filters pushed those features up.

Uses MNIST from ``MONONET_DATA`` when present, otherwise the small 8x8 digits
set that ships with scikit-learn (needed only for this demo).
"""
from pathlib import Path

import numpy as np

from mononet import TrainConfig, bench, split, train
from mononet.dataio import Dataset
from mononet.hierarchy import ConvSpec, build_hierarchical, dump_trace, trace_explanation
from mononet.training import predict
from mononet.verification import probe_monotonicity

try:
    train_data, test_data = bench.load_mnist()
    conv, epochs = ConvSpec(bench.MNIST_FILTERS), 3
    train_data = train_data.subset(np.arange(10_000))
except bench.DatasetMissing:
    from sklearn.datasets import load_digits

    d = load_digits()
    data = Dataset(d.images / 16.0, d.target, tuple(f"p{i}" for i in range(64)), "digits8x8")
    train_data, test_data = split(data, 0.2, seed=0)
    conv, epochs = ConvSpec(16, kernel=(3, 3)), 40
print(f"{train_data.name}: {len(train_data)} train, {len(test_data)} test, images {train_data.features.shape[1:]}")

# %% 16 filters -> 16 hidden features -> 10 classes
model = build_hierarchical(conv, bench.MNIST_MONO1, bench.MNIST_MONO2, classes=10,
                           image_shape=train_data.features.shape[1:], seed=0)
model, hist = train(model, train_data, TrainConfig(epochs=epochs, batch_size=64, learning_rate=1e-2), test_data)
print(f"test accuracy {hist.test_accuracy:.4f}")

# %% both monotone stages pass the probe
print("violations:", len(probe_monotonicity(model, 5000, seed=0).violations))

# %% explain the first misclassified test image
pred = predict(model, test_data.features)
wrong = np.flatnonzero(pred != test_data.labels)
i = int(wrong[0]) if len(wrong) else 0
trace = trace_explanation(model, test_data.features[i], int(pred[i]), i, int(test_data.labels[i]),
                          max_features=3, max_filters=3)
print(trace.render())

# %% image, activation maps and JSON written as PGM files
out = Path("demo_trace")
print("wrote", len(dump_trace(trace, test_data.features[i], out)), "files to", out)
