"""Fusion classifiers: FCN baseline, Feature-DFNN, Model-DFNN and CNNE.

All models consume the spatio-temporal block ``xu`` and the visual block
``xv`` as separate batches of rows and return class probabilities.  Which
block feeds which branch is a constructor argument, so the same classes
cover the single-modality and swapped variants used in evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

N_CLASSES = 3
MODEL_KINDS = ("fcn", "feature_dfnn", "model_dfnn", "cnne")


# ---------------------------------------------------------------------------
# parameter prediction network (low-rank hypernetwork)


@dataclass
class PPNetParams:
    """``W_z`` (D_z x D_in), ``P`` (d_out x D_z), ``Q`` (D_z x d_in)."""

    W_z: Tensor
    P: Tensor
    Q: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_z: int, d_out: int,
             d_cols: int) -> "PPNetParams":
        return cls(
            W_z=Tensor(ad.glorot_uniform(rng, (d_z, d_in)), requires_grad=True),
            P=Tensor(ad.glorot_uniform(rng, (d_out, d_z)), requires_grad=True),
            Q=Tensor(ad.glorot_uniform(rng, (d_z, d_cols)), requires_grad=True),
        )

    def check(self, d_in: int) -> None:
        d_z = self.W_z.shape[0]
        if self.W_z.shape[1] != d_in or self.P.shape[1] != d_z or self.Q.shape[0] != d_z:
            raise ShapeError(
                f"ppnet: W_z {self.W_z.shape}, P {self.P.shape}, Q {self.Q.shape} "
                f"inconsistent with input of length {d_in}")


def _as_params(params) -> PPNetParams:
    if isinstance(params, PPNetParams):
        return params
    return PPNetParams(*(ad.as_tensor(params[k]) for k in ("W_z", "P", "Q")))


def ppnet_matrix(x, params) -> Tensor:
    """Dynamic weight matrix ``P @ Diag(relu(W_z @ x)) @ Q`` for one input vector."""
    params = _as_params(params)
    x = ad.as_tensor(x)
    if x.value.ndim != 1:
        raise ShapeError(f"ppnet_matrix: expected a vector, got shape {x.shape}")
    params.check(x.shape[0])
    gate = ad.relu(ad.matmul(params.W_z, x))
    return ad.matmul(ad.matmul(params.P, ad.diag(gate)), params.Q)


def ppnet_vector(x_hat, params) -> Tensor:
    """Apply the low-rank dynamic matrix generated from ``x_hat`` to ``x_hat`` itself.

    Works on a single vector or a batch of rows; returns pre-softmax scores
    of length ``P.shape[0]``.
    """
    params = _as_params(params)
    x_hat = ad.as_tensor(x_hat)
    params.check(x_hat.shape[-1])
    if params.Q.shape[1] != x_hat.shape[-1]:
        raise ShapeError(f"ppnet_vector: Q {params.Q.shape} cannot act on input {x_hat.shape}")
    gate = ad.relu(ad.linear(x_hat, params.W_z))
    return ad.linear(gate * ad.linear(x_hat, params.Q), params.P)


# ---------------------------------------------------------------------------
# parameter accounting


def ppnet_param_count(d_in: int, d_z: int, d_out: int, d_cols: int | None = None) -> int:
    d_cols = d_out if d_cols is None else d_cols
    return d_z * d_in + d_out * d_z + d_z * d_cols


def hypernetwork_param_count(d_in: int, d_out: int, d_cols: int | None = None) -> int:
    """A linear hypernetwork regressing every entry of a d_out x d_cols matrix."""
    d_cols = d_out if d_cols is None else d_cols
    return d_in * d_out * d_cols


def param_count(kind: str, dims: dict) -> int:
    """Exact number of learnable scalars of a model (biases off unless ``dims['bias']``).

    ``dims`` keys by kind: ``ppnet`` needs ``d_in``, ``d_z``, ``d``;
    ``hypernetwork`` needs ``d_in``, ``d``; ``fcn`` needs ``d_in``;
    ``feature_dfnn`` needs ``d_cls`` and ``d_pp`` (classifier and PPNet input
    widths) plus ``d_z``; ``model_dfnn``/``cnne`` need ``d_u``, ``d_v`` (branch
    input widths) plus ``d_z_u``/``d_z_v``.  ``hidden`` and ``n_classes``
    default to 64 and 3.
    """
    C = dims.get("n_classes", N_CLASSES)
    h = dims.get("hidden", 64)
    bias = dims.get("bias", False)
    if kind == "ppnet":
        return ppnet_param_count(dims["d_in"], dims["d_z"], dims["d"])
    if kind == "hypernetwork":
        return hypernetwork_param_count(dims["d_in"], dims["d"])
    if kind == "fcn":
        d = dims["d_in"]
        return h * d + h * h + C * h + (2 * h + C if bias else 0)
    if kind == "feature_dfnn":
        d_c, d_p, d_z = dims["d_cls"], dims["d_pp"], dims.get("d_z", 64)
        return (h * d_c + ppnet_param_count(d_p, d_z, h) + C * h
                + (h + d_z + h + C if bias else 0))
    if kind in ("model_dfnn", "cnne"):
        heads = sum(h * d + C * h + (h + C if bias else 0) for d in (dims["d_u"], dims["d_v"]))
        if kind == "cnne":
            weighting = sum(h * (d + C) + C * h + (h + C if bias else 0)
                            for d in (dims["d_u"], dims["d_v"]))
        else:
            weighting = sum(ppnet_param_count(d + C, d_z, C, d + C) + (d_z if bias else 0)
                            for d, d_z in ((dims["d_u"], dims.get("d_z_u", 32)),
                                           (dims["d_v"], dims.get("d_z_v", 64))))
        return heads + weighting
    raise ValueError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# input preprocessing


@dataclass
class Preprocessor:
    """Fixed (non-learned) input transform: optional log1p on counts, then z-score.

    Statistics are fitted on training rows only.  Living inside the graph
    keeps attributions expressed in raw-feature units.
    """

    mean_u: np.ndarray
    std_u: np.ndarray
    mean_v: np.ndarray
    std_v: np.ndarray
    log_u: bool = True

    @classmethod
    def fit(cls, xu: np.ndarray, xv: np.ndarray, log_u: bool = True) -> "Preprocessor":
        if log_u and xu.size and xu.min() < 0:
            raise ValueError("log1p preprocessing needs non-negative X_u counts; "
                             "disable log_counts for signed inputs")
        tu = np.log1p(xu) if log_u else xu
        su, sv = tu.std(axis=0), xv.std(axis=0)
        return cls(tu.mean(axis=0), np.where(su > 1e-12, su, 1.0),
                   xv.mean(axis=0), np.where(sv > 1e-12, sv, 1.0), log_u)

    @classmethod
    def identity(cls, d_u: int, d_v: int) -> "Preprocessor":
        return cls(np.zeros(d_u), np.ones(d_u), np.zeros(d_v), np.ones(d_v), log_u=False)

    def __call__(self, xu: Tensor, xv: Tensor) -> tuple[Tensor, Tensor]:
        if xu.shape[-1] != self.mean_u.shape[0] or xv.shape[-1] != self.mean_v.shape[0]:
            raise ShapeError(
                f"preprocess: inputs {xu.shape}/{xv.shape} but fitted on "
                f"{self.mean_u.shape[0]}/{self.mean_v.shape[0]} features")
        if self.log_u:
            xu = ad.log1p(xu)
        return (xu - self.mean_u) / self.std_u, (xv - self.mean_v) / self.std_v

    def state(self) -> dict[str, np.ndarray]:
        return {"pre.mean_u": self.mean_u, "pre.std_u": self.std_u,
                "pre.mean_v": self.mean_v, "pre.std_v": self.std_v,
                "pre.log_u": np.array(float(self.log_u))}


# ---------------------------------------------------------------------------
# models


@dataclass
class Output:
    probs: Tensor
    logits: Tensor | None = None
    branch_probs: tuple[Tensor, Tensor] | None = None


def _select(xu: Tensor, xv: Tensor, which: str) -> Tensor:
    if which == "u":
        return xu
    if which == "v":
        return xv
    if which == "uv":
        return ad.concat([xu, xv])
    raise ValueError(f"unknown input selector {which!r}")


def _width(d_u: int, d_v: int, which: str) -> int:
    return {"u": d_u, "v": d_v, "uv": d_u + d_v}[which]


class Model:
    kind = "base"

    def __init__(self, d_u: int, d_v: int, rng: np.random.Generator, hidden: int = 64,
                 n_classes: int = N_CLASSES, bias: bool = False, dropout: float = 0.4):
        self.d_u, self.d_v = d_u, d_v
        self.hidden = hidden
        self.n_classes = n_classes
        self.bias = bias
        self.dropout = dropout
        self.params: dict[str, Tensor] = {}
        self.pre = Preprocessor.identity(d_u, d_v)
        self.training = False
        self._rng = rng

    # parameter helpers
    def _weight(self, name: str, shape: tuple[int, int]) -> Tensor:
        t = Tensor(ad.glorot_uniform(self._rng, shape), requires_grad=True)
        self.params[name] = t
        return t

    def _bias(self, name: str, n: int) -> None:
        if self.bias:
            self.params[name] = Tensor(np.zeros(n), requires_grad=True)

    def _dense(self, x: Tensor, w: str, b: str) -> Tensor:
        out = ad.linear(x, self.params[w])
        return out + self.params[b] if b in self.params else out

    def _drop(self, x: Tensor, rng) -> Tensor:
        return ad.dropout(x, self.dropout, rng, self.training)

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def config(self) -> dict:
        return {"kind": self.kind, "d_u": self.d_u, "d_v": self.d_v, "hidden": self.hidden,
                "n_classes": self.n_classes, "bias": self.bias, "dropout": self.dropout}

    def train(self) -> "Model":
        self.training = True
        return self

    def eval(self) -> "Model":
        self.training = False
        return self

    # forward API
    def forward(self, xu, xv, rng: np.random.Generator | None = None) -> Output:
        xu, xv = ad.as_tensor(xu), ad.as_tensor(xv)
        if xu.value.ndim == 1:
            xu = Tensor(xu.value[None, :]) if not xu.requires_grad else xu
        if xv.value.ndim == 1:
            xv = Tensor(xv.value[None, :]) if not xv.requires_grad else xv
        pu, pv = self.pre(xu, xv)
        return self._forward(pu, pv, rng)

    def forward_standardized(self, pu, pv, rng: np.random.Generator | None = None) -> Output:
        """Forward pass on inputs that already went through ``self.pre``."""
        return self._forward(ad.as_tensor(pu), ad.as_tensor(pv), rng)

    def standardize(self, xu: np.ndarray, xv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pu, pv = self.pre(Tensor(np.atleast_2d(xu)), Tensor(np.atleast_2d(xv)))
        return pu.value, pv.value

    def _forward(self, xu: Tensor, xv: Tensor, rng) -> Output:
        raise NotImplementedError

    def loss(self, out: Output, y) -> Tensor:
        return ad.cross_entropy(out.probs, y)

    def score(self, out: Output) -> Tensor:
        """Per-row class scores used for attribution (pre-softmax logits)."""
        return out.logits

    def predict_proba(self, xu: np.ndarray, xv: np.ndarray) -> np.ndarray:
        was = self.training
        self.training = False
        try:
            return self.forward(Tensor(np.atleast_2d(xu)), Tensor(np.atleast_2d(xv))).probs.value
        finally:
            self.training = was

    def predict(self, xu: np.ndarray, xv: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(xu, xv), axis=1)

    def state(self) -> dict[str, np.ndarray]:
        out = {k: t.value.copy() for k, t in self.params.items()}
        out.update(self.pre.state())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ShapeError(f"checkpoint tensor {k}: shape {state[k].shape} != {t.shape}")
            t.value = np.array(state[k], dtype=np.float64)
        if "pre.mean_u" in state:
            self.pre = Preprocessor(state["pre.mean_u"], state["pre.std_u"],
                                    state["pre.mean_v"], state["pre.std_v"],
                                    bool(state["pre.log_u"]))


class FCN(Model):
    """Static three-layer perceptron over one block or their concatenation."""

    kind = "fcn"

    def __init__(self, d_u, d_v, rng, inputs: str = "uv", **kw):
        super().__init__(d_u, d_v, rng, **kw)
        self.inputs = inputs
        h, d = self.hidden, _width(d_u, d_v, inputs)
        self._weight("W1", (h, d))
        self._weight("Ws", (h, h))
        self._weight("W2", (self.n_classes, h))
        self._bias("b1", h)
        self._bias("bs", h)
        self._bias("b2", self.n_classes)

    def config(self):
        return {**super().config(), "inputs": self.inputs}

    def _forward(self, xu, xv, rng):
        x = _select(xu, xv, self.inputs)
        h1 = self._drop(ad.relu(self._dense(x, "W1", "b1")), rng)
        h2 = self._drop(ad.relu(self._dense(h1, "Ws", "bs")), rng)
        logits = self._dense(h2, "W2", "b2")
        return Output(ad.softmax(logits), logits)


class FeatureDFNN(Model):
    """Classifier whose middle weight matrix is emitted by a PPNet on another block."""

    kind = "feature_dfnn"

    def __init__(self, d_u, d_v, rng, classifier: str = "u", ppnet: str = "v",
                 d_z: int = 64, **kw):
        super().__init__(d_u, d_v, rng, **kw)
        self.classifier, self.ppnet_input, self.d_z = classifier, ppnet, d_z
        h = self.hidden
        self._weight("W1", (h, _width(d_u, d_v, classifier)))
        pp = PPNetParams.init(self._rng, _width(d_u, d_v, ppnet), d_z, h, h)
        self.params.update({"pp.W_z": pp.W_z, "pp.P": pp.P, "pp.Q": pp.Q})
        self._weight("W2", (self.n_classes, h))
        self._bias("b1", h)
        self._bias("pp.b_z", d_z)
        self._bias("bs", h)
        self._bias("b2", self.n_classes)

    def config(self):
        return {**super().config(), "classifier": self.classifier,
                "ppnet": self.ppnet_input, "d_z": self.d_z}

    def _pp(self) -> PPNetParams:
        return PPNetParams(self.params["pp.W_z"], self.params["pp.P"], self.params["pp.Q"])

    def _forward(self, xu, xv, rng):
        xc = _select(xu, xv, self.classifier)
        xp = _select(xu, xv, self.ppnet_input)
        pp = self._pp()
        h1 = self._drop(ad.relu(self._dense(xc, "W1", "b1")), rng)
        gate = self._dense(xp, "pp.W_z", "pp.b_z")
        dyn = ad.linear(ad.relu(gate) * ad.linear(h1, pp.Q), pp.P)
        if "bs" in self.params:
            dyn = dyn + self.params["bs"]
        h2 = self._drop(ad.relu(dyn), rng)
        logits = self._dense(h2, "W2", "b2")
        return Output(ad.softmax(logits), logits)

    def dynamic_matrix(self, xp_row: np.ndarray) -> np.ndarray:
        """Materialised d x d weight matrix for one (already preprocessed) PPNet input."""
        return ppnet_matrix(xp_row, self._pp()).value


class ModelDFNN(Model):
    """Two-branch ensemble with input-and-output-conditioned per-class weights.

    ``variant='dfnn'`` generates the weights with low-rank PPNets,
    ``variant='cnne'`` with plain two-layer weighting heads.
    """

    kind = "model_dfnn"

    def __init__(self, d_u, d_v, rng, variant: str = "dfnn", first: str = "u",
                 second: str = "v", d_z_u: int = 32, d_z_v: int = 64,
                 renormalize: bool = True, **kw):
        super().__init__(d_u, d_v, rng, **kw)
        if variant not in ("dfnn", "cnne"):
            raise ValueError(f"unknown Model-DFNN variant {variant!r}")
        self.variant, self.first, self.second = variant, first, second
        self.d_z_u, self.d_z_v = d_z_u, d_z_v
        self.renormalize = renormalize
        if variant == "cnne":
            self.kind = "cnne"
        h, C = self.hidden, self.n_classes
        for tag, which, d_z in (("u", first, d_z_u), ("v", second, d_z_v)):
            d = _width(d_u, d_v, which)
            self._weight(f"{tag}.W1", (h, d))
            self._weight(f"{tag}.W2", (C, h))
            self._bias(f"{tag}.b1", h)
            self._bias(f"{tag}.b2", C)
            if variant == "cnne":
                self._weight(f"{tag}.Wh1", (h, d + C))
                self._weight(f"{tag}.Wh2", (C, h))
                self._bias(f"{tag}.bh1", h)
                self._bias(f"{tag}.bh2", C)
            else:
                pp = PPNetParams.init(self._rng, d + C, d_z, C, d + C)
                self.params.update({f"{tag}.pp.W_z": pp.W_z, f"{tag}.pp.P": pp.P,
                                    f"{tag}.pp.Q": pp.Q})
                self._bias(f"{tag}.pp.b_z", d_z)

    def config(self):
        return {**super().config(), "variant": self.variant, "first": self.first,
                "second": self.second, "d_z_u": self.d_z_u, "d_z_v": self.d_z_v,
                "renormalize": self.renormalize}

    def _branch(self, tag: str, x: Tensor, rng) -> tuple[Tensor, Tensor]:
        h = self._drop(ad.relu(self._dense(x, f"{tag}.W1", f"{tag}.b1")), rng)
        y_hat = ad.softmax(self._dense(h, f"{tag}.W2", f"{tag}.b2"))
        # dropout on the weighting head's input keeps it from memorising the
        # branch outputs on the training cells
        x_hat = self._drop(ad.concat([x, y_hat]), rng)
        if self.variant == "cnne":
            hw = ad.relu(self._dense(x_hat, f"{tag}.Wh1", f"{tag}.bh1"))
            scores = self._dense(hw, f"{tag}.Wh2", f"{tag}.bh2")
        else:
            p = self.params
            gate = ad.relu(self._dense(x_hat, f"{tag}.pp.W_z", f"{tag}.pp.b_z"))
            scores = ad.linear(gate * ad.linear(x_hat, p[f"{tag}.pp.Q"]), p[f"{tag}.pp.P"])
        return y_hat, ad.softmax(scores)

    def _forward(self, xu, xv, rng):
        y_u, w_u = self._branch("u", _select(xu, xv, self.first), rng)
        y_v, w_v = self._branch("v", _select(xu, xv, self.second), rng)
        combined = w_u * y_u + w_v * y_v
        if self.renormalize:
            combined = combined / ad.reduce_sum(combined, axis=-1, keepdims=True)
        return Output(combined, None, (y_u, y_v))

    def loss(self, out, y):
        y_u, y_v = out.branch_probs
        return ad.cross_entropy(y_v, y) + ad.cross_entropy(y_u, y) + ad.cross_entropy(out.probs, y)

    def score(self, out):
        """Log of the combined class probability (no softmax precedes the fusion)."""
        return ad.log(out.probs)


def build_model(kind: str, d_u: int, d_v: int, seed: int, inputs: str = "uv",
                **kw) -> Model:
    """Construct a model by kind name.

    ``inputs`` picks the feature set: ``uv`` (multimodal), ``u`` or ``v``
    (single modality: every branch sees that block), or ``vu`` (swapped
    Feature-DFNN: classifier on the visual block, PPNet on the other).
    """
    rng = np.random.default_rng(seed)
    if kind == "fcn":
        return FCN(d_u, d_v, rng, inputs="uv" if inputs == "vu" else inputs, **kw)
    first, second = {"uv": ("u", "v"), "vu": ("v", "u"), "u": ("u", "u"), "v": ("v", "v")}[inputs]
    if kind == "feature_dfnn":
        return FeatureDFNN(d_u, d_v, rng, classifier=first, ppnet=second, **kw)
    if kind in ("model_dfnn", "cnne"):
        variant = "cnne" if kind == "cnne" else "dfnn"
        return ModelDFNN(d_u, d_v, rng, variant=variant, first=first, second=second, **kw)
    raise ValueError(f"unknown model kind {kind!r}")


def model_from_config(config: dict, seed: int = 0) -> Model:
    """Rebuild an (untrained) model from ``Model.config()`` output."""
    cfg = dict(config)
    kind = cfg.pop("kind")
    d_u, d_v = cfg.pop("d_u"), cfg.pop("d_v")
    rng = np.random.default_rng(seed)
    if kind == "fcn":
        return FCN(d_u, d_v, rng, **cfg)
    if kind == "feature_dfnn":
        return FeatureDFNN(d_u, d_v, rng, **cfg)
    return ModelDFNN(d_u, d_v, rng, **cfg)
