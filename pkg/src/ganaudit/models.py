"""Decoder zoo: linear (PPCA), MLP, constant and spiral generators.

Every generator maps latents ``z ~ N(0, I_d)`` to outputs of a fixed shape.
Forward passes are expressed on a :class:`~ganaudit.autodiff.Tape` so that
latent gradients come for free.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ganaudit.autodiff import ShapeError, Tape, forward_eval

logger = logging.getLogger(__name__)

KINDS = ("linear", "mlp", "constant", "spiral")
ACTIVATIONS = ("tanh", "relu", "leaky_relu", "sigmoid")

SPIRAL_DEFAULTS = {"a": 2.5 * math.pi / 3, "b": math.pi / 2, "c": 0.35}


class DegenerateCovarianceError(ValueError):
    pass


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class GeneratorModel:
    """A decoder ``z -> x`` with a standard-normal latent prior.

    ``params`` holds kind-specific parameters:

    * linear: ``weight`` (D x d) and ``mean`` (D,)
    * mlp: ``layers``, a list of layer dicts (see :func:`mlp_model`)
    * constant: ``value`` with ``output_shape``
    * spiral: scalars ``a``, ``b``, ``c``
    """

    kind: str
    latent_dim: int
    output_shape: tuple
    params: dict
    name: str = ""
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        object.__setattr__(self, "output_shape", tuple(int(s) for s in self.output_shape))
        if self.kind == "spiral" and (self.latent_dim != 1 or self.output_shape != (2,)):
            raise ValueError("spiral model maps R^1 to R^2")

    @property
    def output_dim(self) -> int:
        return int(np.prod(self.output_shape))

    @property
    def prior(self) -> "LatentPrior":
        return LatentPrior(self.latent_dim)

    def trace(self, tape: Tape, z):
        """Record ``G(z)`` for a batch node ``z`` of shape ``(n, d)``."""
        p = self.params
        if self.kind == "linear":
            flat = z @ tape.const(p["weight"].T) + tape.const(p["mean"])
        elif self.kind == "constant":
            zero = np.zeros((self.latent_dim, self.output_dim))
            flat = z @ tape.const(zero) + tape.const(p["value"].reshape(-1))
        elif self.kind == "spiral":
            theta = z * p["a"] + p["b"]
            r = theta * p["c"]
            xs = (r * tape.cos(theta)) @ tape.const([[1.0, 0.0]])
            ys = (r * tape.sin(theta)) @ tape.const([[0.0, 1.0]])
            return xs + ys
        else:
            return _trace_layers(tape, z, p["layers"])
        n = z.shape[0]
        if len(self.output_shape) == 1:
            return flat
        return tape.reshape(flat, (n,) + self.output_shape)

    def __call__(self, z) -> np.ndarray:
        return forward_eval(self, z)

    def describe(self) -> str:
        return self.name or f"{self.kind}(d={self.latent_dim}, out={self.output_shape})"


def _trace_layers(tape: Tape, h, layers):
    for layer in layers:
        t = layer["type"]
        if t == "dense":
            h = h @ tape.const(layer["weight"].T) + tape.const(layer["bias"])
        elif t == "leaky_relu":
            h = tape.leaky_relu(h, layer.get("slope", 0.2))
        elif t in ACTIVATIONS:
            h = getattr(tape, t)(h)
        elif t == "reshape":
            h = tape.reshape(h, (h.shape[0],) + tuple(layer["shape"]))
        else:
            raise ValueError(f"unsupported layer type {t!r}")
    return h


def linear_model(weight, mean=None, name: str = "", output_shape=None) -> GeneratorModel:
    w = _frozen(weight)
    if w.ndim != 2:
        raise ShapeError("linear weight must be a matrix (D x d)")
    mu = _frozen(np.zeros(w.shape[0]) if mean is None else np.reshape(mean, -1))
    if mu.shape != (w.shape[0],):
        raise ShapeError("mean length must match weight rows")
    shape = (w.shape[0],) if output_shape is None else tuple(output_shape)
    if int(np.prod(shape)) != w.shape[0]:
        raise ShapeError("output_shape does not match weight rows")
    return GeneratorModel("linear", w.shape[1], shape, {"weight": w, "mean": mu}, name)


def constant_model(value, latent_dim: int = 1, name: str = "") -> GeneratorModel:
    g0 = _frozen(value)
    if g0.ndim == 0:
        g0 = _frozen(g0.reshape(1))
    return GeneratorModel("constant", latent_dim, g0.shape, {"value": g0}, name)


def spiral_model(a: float = SPIRAL_DEFAULTS["a"], b: float = SPIRAL_DEFAULTS["b"],
                 c: float = SPIRAL_DEFAULTS["c"], name: str = "") -> GeneratorModel:
    """1-D latent traced along ``(r cos t, r sin t)`` with ``t = a z + b``, ``r = c t``."""
    return GeneratorModel("spiral", 1, (2,), {"a": float(a), "b": float(b), "c": float(c)}, name)


def mlp_model(layers, latent_dim: int, name: str = "") -> GeneratorModel:
    """Build an MLP decoder from a layer list.

    Layers are dicts with ``type`` one of ``dense`` (with ``weight`` of shape
    (out, in) and ``bias``), ``tanh``, ``relu``, ``leaky_relu``, ``sigmoid``
    or ``reshape`` (with ``shape``, excluding the batch axis).
    """
    frozen = []
    width = latent_dim
    shape: tuple = (latent_dim,)
    for layer in layers:
        layer = dict(layer)
        if layer["type"] == "dense":
            layer["weight"] = _frozen(layer["weight"])
            layer["bias"] = _frozen(layer["bias"])
            if layer["weight"].shape[1] != width or len(shape) != 1:
                raise ShapeError(f"dense layer expects flat input of width {layer['weight'].shape[1]}, got {shape}")
            if layer["bias"].shape != (layer["weight"].shape[0],):
                raise ShapeError("dense bias length must match weight rows")
            width = layer["weight"].shape[0]
            shape = (width,)
        elif layer["type"] == "reshape":
            layer["shape"] = tuple(int(s) for s in layer["shape"])
            if int(np.prod(layer["shape"])) != int(np.prod(shape)):
                raise ShapeError(f"cannot reshape {shape} to {layer['shape']}")
            shape = layer["shape"]
            width = int(np.prod(shape))
        elif layer["type"] not in ACTIVATIONS:
            raise ValueError(f"unsupported layer type {layer['type']!r}")
        frozen.append(layer)
    return GeneratorModel("mlp", latent_dim, shape, {"layers": frozen}, name)


def random_mlp(latent_dim: int, hidden, output_dim: int, activation: str = "tanh",
               seed: int = 0, gain: float = 1.0, output_shape=None, name: str = "") -> GeneratorModel:
    """MLP with Gaussian weights scaled by ``gain / sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    sizes = [latent_dim, *hidden, output_dim]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append({
            "type": "dense",
            "weight": rng.standard_normal((fan_out, fan_in)) * gain / math.sqrt(fan_in),
            "bias": 0.1 * rng.standard_normal(fan_out),
        })
        if i < len(sizes) - 2:
            layers.append({"type": activation})
    if output_shape is not None and tuple(output_shape) != (output_dim,):
        layers.append({"type": "reshape", "shape": tuple(output_shape)})
    return mlp_model(layers, latent_dim, name=name)


def preactivations(model: GeneratorModel, z) -> list:
    """Inputs to every activation layer of an MLP, for kink checks."""
    if model.kind != "mlp":
        return []
    h = np.atleast_2d(np.asarray(z, dtype=np.float64))
    out = []
    for layer in model.params["layers"]:
        tape = Tape()
        if layer["type"] in ACTIVATIONS:
            out.append(h.copy())
        h = _trace_layers(tape, tape.const(h), [layer]).value
    return out


@dataclass(frozen=True)
class LatentPrior:
    """Standard normal over ``R^dimension``."""

    dimension: int

    def log_density(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return -0.5 * self.dimension * math.log(2 * math.pi) - 0.5 * np.sum(z * z, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.dimension))


def sample_prior(prior: LatentPrior, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. latents as rows of an ``(n, d)`` array."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return prior.sample(n, np.random.default_rng(seed))


def sample_dataset(model: GeneratorModel, sigma2: float, n: int, seed: int) -> np.ndarray:
    """Draw ``x = G(z) + eps`` with ``eps ~ N(0, sigma2 I)``; returns ``(n, *output_shape)``."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be non-negative")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = model.prior.sample(n, rng)
    x = forward_eval(model, z)
    if sigma2 > 0:
        x = x + math.sqrt(sigma2) * rng.standard_normal(x.shape)
    return x


def ppca_fit(data, k: int, name: str = "ppca") -> tuple[GeneratorModel, float]:
    """Closed-form maximum-likelihood probabilistic PCA.

    Eigendecomposes the (1/n) sample covariance. The noise variance is the
    mean of the trailing ``D - k`` eigenvalues and the loading matrix is
    ``U_k (L_k - sigma2 I)^(1/2)``. When all eigenvalues coincide the loading
    is zero and the returned model carries ``info["degenerate"] = True``.
    """
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    sample_shape = x.shape[1:]
    x = x.reshape(n, -1)
    dim = x.shape[1]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= dim:
        raise ValueError(f"k={k} must be smaller than the data dimension {dim}")
    if n <= k:
        raise ValueError("need more samples than latent dimensions")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    sigma2 = float(evals[k:].mean())
    scale = float(evals[0]) if evals[0] > 0 else 1.0
    if evals[0] <= 1e-12 * max(1.0, float(np.abs(mean).max())):
        raise DegenerateCovarianceError("data has zero variance; PPCA density undefined")
    lead = np.clip(evals[:k] - sigma2, 0.0, None)
    degenerate = bool(np.all(lead <= 1e-9 * scale))
    weight = evecs[:, :k] * np.sqrt(lead)
    model = linear_model(weight, mean, name=name, output_shape=sample_shape)
    model.info.update({"sigma2": sigma2, "degenerate": degenerate})
    if degenerate:
        logger.warning("ppca_fit: all eigenvalues equal; loading matrix is zero")
    return model, sigma2


def generate_grid(model: GeneratorModel, z_min: float, z_max: float, steps: int):
    """Uniform latent grid over ``[z_min, z_max]^d`` (d <= 2) and its decodings.

    Returns ``(zs, xs)`` with ``zs`` of shape ``(steps**d, d)``; 2-D grids are
    in row-major ``ij`` order.
    """
    if model.latent_dim > 2:
        raise ValueError("grids are limited to latent_dim <= 2")
    if steps < 2:
        raise ValueError("steps must be >= 2")
    axis = np.linspace(z_min, z_max, steps)
    if model.latent_dim == 1:
        zs = axis[:, None]
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        zs = np.stack([a.ravel(), b.ravel()], axis=1)
    return zs, forward_eval(model, zs)
