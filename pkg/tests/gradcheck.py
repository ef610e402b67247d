"""Central finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from riskfusion.models import build_model

H = 1e-5
RTOL = 1e-4
ATOL = 1e-7

# scaled-down dims for gradient checks
SMALL = dict(d_u=7, d_v=5, hidden=4, n_classes=3, d_z=4)

# (kind, inputs, extra model kwargs)
GRAD_CONFIGS = [
    ("fcn", "uv", {}),
    ("feature_dfnn", "uv", {"d_z": 4}),
    ("feature_dfnn", "vu", {"d_z": 4}),
    ("model_dfnn", "uv", {"d_z_u": 4, "d_z_v": 4}),
    ("cnne", "uv", {}),
]


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """d f / d x by central differences; ``x`` is perturbed in place and restored."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_mismatch(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """Entries violating ``|a - n| <= ATOL + RTOL * |n|``."""
    return np.abs(analytic - numeric) > ATOL + RTOL * np.abs(numeric)


def check_model_grads(kind: str, inputs: str, seed: int, bias: bool = False,
                      batch: int = 6, **kw) -> dict[str, int]:
    """Number of mismatching gradient entries per parameter tensor."""
    rng = np.random.default_rng(seed)
    d_u, d_v = SMALL["d_u"], SMALL["d_v"]
    model = build_model(kind, d_u, d_v, seed, inputs=inputs, hidden=SMALL["hidden"],
                        n_classes=SMALL["n_classes"], bias=bias, **kw)
    model.eval()
    if bias:
        for p in model.params.values():
            if p.value.ndim == 1:
                p.value = rng.normal(0, 0.1, p.shape)
    xu = rng.normal(size=(batch, d_u))
    xv = rng.normal(size=(batch, d_v))
    y = rng.integers(0, SMALL["n_classes"], size=batch)

    def loss_value():
        return float(model.loss(model.forward(xu, xv), y).value)

    for p in model.params.values():
        p.grad = None
    loss = model.loss(model.forward(xu, xv), y)
    loss.backward()
    bad = {}
    for name, p in model.params.items():
        analytic = np.zeros_like(p.value) if p.grad is None else p.grad
        bad[name] = int(grad_mismatch(analytic, numeric_grad(loss_value, p.value)).sum())
    return bad
