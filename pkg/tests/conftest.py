import numpy as np
import pytest

from defrost import network as nn


def numeric_gradient(spec, params, X, targets, loss, h=1e-5):
    """Central differences over every weight and bias coordinate."""
    lossfn = nn.cross_entropy if loss == "cross_entropy" else nn.mean_squared_error

    def value():
        return lossfn(nn.forward(spec, params, X)[-1], targets)

    out = []
    for store in (params.weights, params.biases):
        grads = []
        for arr in store:
            g = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + h
                up = value()
                arr[idx] = orig - h
                down = value()
                arr[idx] = orig
                g[idx] = (up - down) / (2 * h)
            grads.append(g)
        out.append(grads)
    return out


def max_relative_error(analytic, numeric, floor=1e-4):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all coordinates.

    The floor stops differencing roundoff (about 1e-11 absolute) on vanishing
    gradients from reading as a large relative error.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a, n = np.ravel(a), np.ravel(n)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def random_small_network(rng, max_layers=3, max_width=8, activations=("relu", "tanh", "gelu", "identity")):
    n_layers = int(rng.integers(2, max_layers + 1))
    widths = [int(w) for w in rng.integers(1, max_width + 1, size=n_layers + 1)]
    layers = [nn.Layer(widths[i], widths[i + 1], str(rng.choice(activations))) for i in range(n_layers - 1)]
    layers.append(nn.Layer(widths[-2], widths[-1], "identity"))
    spec = nn.NetworkSpec(tuple(layers))
    params = nn.he_init(spec, rng)
    for b in params.biases:
        b[:] = rng.normal(0, 0.5, size=b.shape)
    return spec, params


@pytest.fixture
def blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 1, (100, 2)), rng.normal(3, 1, (100, 2))])
    y = np.repeat([0, 1], 100)
    return X, y


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def verdicts(request):
    """Collects one ``(label, passed, detail)`` line per acceptance criterion."""
    return request.config.stash.setdefault(_VERDICTS, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in sorted(lines, key=lambda t: int(t[0][1:])):
        terminalreporter.write_line(f"{label} {'PASS' if passed else 'FAIL'}  {detail}")
