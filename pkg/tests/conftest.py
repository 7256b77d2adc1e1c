import numpy as np
import pytest

from relurepair.network import Layer, Network

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def binary_classifier_net():
    """Two-layer 2-2-2 classifier used as a worked example throughout."""
    return Network([
        Layer([[0.2, 1.0], [0.01, 1.0]], [0.2, -0.11]),
        Layer([[0.5, 1.0], [2.0, -1.0]], [-0.2, -1.0]),
    ])


def reference_forward(layers, x0):
    """Plain-loop forward pass, independent of the library implementation."""
    x = list(map(float, x0))
    for li, (W, b) in enumerate(layers):
        z = []
        for j in range(len(W)):
            acc = b[j]
            for k in range(len(W[j])):
                acc += W[j][k] * x[k]
            z.append(acc)
        if li < len(layers) - 1:
            x = [max(0.0, v) for v in z]
        else:
            x = z
    return np.array(x)


def layers_as_lists(net):
    return [(l.weights.tolist(), l.bias.tolist()) for l in net.layers]
