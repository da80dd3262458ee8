"""Trainable model: affine projector into the ball, prototype banks, and a
distance-based logistic classifier."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from poinhier import __version__
from poinhier.config import TrainConfig
from poinhier.errors import ConfigError, FormatError, InvalidInput, UnsupportedVersion
from poinhier.geometry import GeometryConfig, distance_matrix, exp_map0, exp_map0_vjp
from poinhier.hierarchy import Triplets, build_triplets, hsl_terms
from poinhier.io import atomic_write
from poinhier.prototypes import PrototypeBank, aug_terms, proto_terms
from poinhier.whitening import pfw_terms

TENSOR_ORDER = ("projector_weight", "projector_bias", "theta_data", "theta_top",
                "cls_weight", "cls_bias")
GROUP_OF = {"projector_weight": "projector", "projector_bias": "projector",
            "theta_data": "prototypes", "theta_top": "prototypes",
            "cls_weight": "cls", "cls_bias": "cls"}


@dataclass
class ModelParams:
    projector_weight: np.ndarray
    projector_bias: np.ndarray
    bank: PrototypeBank
    cls_weight: np.ndarray
    cls_bias: np.ndarray  # 0-d array so it can be updated in place
    use_bias: bool = True

    @classmethod
    def init(cls, cfg: TrainConfig, d_in: int, rng: np.random.Generator) -> "ModelParams":
        g = cfg.g
        weight = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(g.dim, d_in))
        bank = PrototypeBank.init(cfg.K_b, cfg.K_s, cfg.K_top, g, rng, cfg.init_scale)
        return cls(weight, np.zeros(g.dim), bank, np.zeros(cfg.K_b + cfg.K_s),
                   np.array(0.0), cfg.cls_bias)

    @property
    def g(self) -> GeometryConfig:
        return self.bank.g

    @property
    def d_in(self) -> int:
        return self.projector_weight.shape[1]

    def tensors(self) -> dict:
        """Live views of every trainable tensor, in serialization order."""
        return {
            "projector_weight": self.projector_weight,
            "projector_bias": self.projector_bias,
            "theta_data": self.bank.theta_data,
            "theta_top": self.bank.theta_top,
            "cls_weight": self.cls_weight,
            "cls_bias": self.cls_bias,
        }

    def copy(self) -> "ModelParams":
        bank = PrototypeBank(self.bank.theta_data.copy(), self.bank.class_of.copy(),
                             self.bank.theta_top.copy(), self.bank.g)
        return ModelParams(self.projector_weight.copy(), self.projector_bias.copy(), bank,
                           self.cls_weight.copy(), self.cls_bias.copy(), self.use_bias)


def _check_features(X, params: ModelParams) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.d_in:
        raise InvalidInput(f"expected {params.d_in} input features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("features contain non-finite values")
    return X


def forward_embed(X, params: ModelParams) -> np.ndarray:
    """Ball embedding ``exp_map0(W x + b)`` of each row of ``X``."""
    X = _check_features(X, params)
    return exp_map0(X @ params.projector_weight.T + params.projector_bias, params.g)


def classifier_logit(z, params: ModelParams) -> np.ndarray:
    """Logit of P(spoof): weighted distances to all data prototypes plus bias."""
    protos, _ = params.bank.materialize()
    d, _ = distance_matrix(np.atleast_2d(z), protos, params.g)
    bias = float(params.cls_bias) if params.use_bias else 0.0
    return d @ params.cls_weight + bias


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def cls_terms(z, y, protos, params: ModelParams):
    """Mean BCE of the distance classifier.

    Returns (value, grad_z, grad_protos, grad_cls_weight, grad_cls_bias).
    """
    d, back = distance_matrix(z, protos, params.g)
    bias = float(params.cls_bias) if params.use_bias else 0.0
    logit = d @ params.cls_weight + bias
    n = len(y)
    value = float(np.mean(_softplus(logit) - y * logit))
    G = (_sigmoid(logit) - y) / n
    gz, gp = back(G[:, None] * params.cls_weight[None, :])
    g_bias = float(G.sum()) if params.use_bias else 0.0
    return value, gz, gp, d.T @ G, g_bias


def loss_cls(X, y, params: ModelParams):
    """BCE on original samples; returns (value, grads keyed like ``tensors()``)."""
    X = _check_features(X, params)
    y = np.asarray(y, dtype=np.float64)
    H = X @ params.projector_weight.T + params.projector_bias
    z = exp_map0(H, params.g)
    protos, _ = params.bank.materialize()
    value, gz, gp, gw, gb = cls_terms(z, y, protos, params)
    gH = exp_map0_vjp(H, gz, params.g)
    g_data, g_top = params.bank.pullback(gp)
    grads = {
        "projector_weight": gH.T @ X,
        "projector_bias": gH.sum(axis=0),
        "theta_data": g_data,
        "theta_top": g_top,
        "cls_weight": gw,
        "cls_bias": np.array(gb),
    }
    return value, grads


@dataclass
class StepRandom:
    """Generators consumed by the stochastic parts of one objective evaluation."""

    triplets: Optional[np.random.Generator] = None
    gumbel: Optional[np.random.Generator] = None


TERMS = ("cls", "proto", "aug", "hsl", "pfw")


def enabled_terms(cfg: TrainConfig) -> tuple:
    t = cfg.loss_toggles
    return ("cls",) + (("proto", "aug") if t.ppl else ()) + (("hsl",) if t.hsl else ()) \
        + (("pfw",) if t.pfw else ())


def total_loss(X, X_aug, y, params: ModelParams, cfg: TrainConfig,
               rand: Optional[StepRandom] = None, triplets: Optional[Triplets] = None,
               terms: Optional[tuple] = None, need_grad: bool = True):
    """Unit-weighted sum of the enabled loss terms.

    ``terms`` overrides the config toggles with an explicit subset of
    ``TERMS`` (used by the gradient checks).  Returns ``(value, grads,
    breakdown)``; ``breakdown`` maps ``cls``/``proto``/``aug``/``ppl``/``hsl``/
    ``pfw`` to term values and carries the triplets used, so a caller can
    replay the exact same objective.  With ``need_grad=False`` the final
    pullbacks are skipped and ``grads`` is None.
    """
    X = _check_features(X, params)
    X_aug = _check_features(X_aug, params)
    y = np.asarray(y, dtype=np.int64)
    g = params.g
    terms = enabled_terms(cfg) if terms is None else tuple(terms)
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise InvalidInput(f"unknown loss terms: {sorted(unknown)}")

    H = X @ params.projector_weight.T + params.projector_bias
    Ha = X_aug @ params.projector_weight.T + params.projector_bias
    z = exp_map0(H, g)
    za = exp_map0(Ha, g)
    protos, tops = params.bank.materialize()
    class_of = params.bank.class_of

    gz = np.zeros_like(z)
    gza = np.zeros_like(za)
    gp = np.zeros_like(protos)
    gt = np.zeros_like(tops)
    breakdown = {"cls": 0.0, "proto": 0.0, "aug": 0.0, "ppl": 0.0, "hsl": 0.0, "pfw": 0.0}

    gw = np.zeros_like(params.cls_weight)
    gb = 0.0
    if "cls" in terms:
        if cfg.cls_on_augmented:
            zc, yc = np.concatenate([z, za]), np.concatenate([y, y])
        else:
            zc, yc = z, y
        v, g_zc, g_p, gw, gb = cls_terms(zc, yc.astype(np.float64), protos, params)
        breakdown["cls"] = v
        gz += g_zc[: len(z)]
        if cfg.cls_on_augmented:
            gza += g_zc[len(z):]
        gp += g_p

    if "proto" in terms:
        v, g_z1, g_p1 = proto_terms(z, y, protos, class_of, g)
        breakdown["proto"] = v
        gz += g_z1
        gp += g_p1
    if "aug" in terms:
        v, g_z2, g_za2, g_p2 = aug_terms(z, za, y, protos, class_of, g)
        breakdown["aug"] = v
        gz += g_z2
        gza += g_za2
        gp += g_p2
    breakdown["ppl"] = breakdown["proto"] + breakdown["aug"]

    if "hsl" in terms:
        if triplets is None:
            rand = rand or StepRandom()
            if rand.triplets is None:
                raise InvalidInput("HSL term needs a triplet generator or fixed triplets")
            triplets = build_triplets(protos, tops, cfg.hsl, g, rand.triplets, rand.gumbel)
        v, g_p3, g_t3 = hsl_terms(triplets, protos, tops, cfg.hsl.delta, g)
        breakdown["hsl"] = v
        gp += g_p3
        gt += g_t3
    breakdown["triplets"] = triplets

    if "pfw" in terms:
        v, g_z4, g_za4, _ = pfw_terms(z, za, y, g, cfg.k_b, cfg.k_s)
        breakdown["pfw"] = v
        gz += g_z4
        gza += g_za4

    value = breakdown["cls"] + breakdown["ppl"] + breakdown["hsl"] + breakdown["pfw"]
    if not need_grad:
        return value, None, breakdown
    gH = exp_map0_vjp(H, gz, g)
    gHa = exp_map0_vjp(Ha, gza, g)
    g_data, g_top = params.bank.pullback(gp, gt)
    grads = {
        "projector_weight": gH.T @ X + gHa.T @ X_aug,
        "projector_bias": gH.sum(axis=0) + gHa.sum(axis=0),
        "theta_data": g_data,
        "theta_top": g_top,
        "cls_weight": gw,
        "cls_bias": np.array(gb),
    }
    return value, grads, breakdown


# ---------------------------------------------------------------------------
# serialization

MODEL_MAGIC = b"PHNM"
MODEL_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def model_to_bytes(params: ModelParams, cfg: Optional[TrainConfig] = None) -> bytes:
    tensors = params.tensors()
    header = {
        "format_version": MODEL_VERSION,
        "package_version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "geometry": {"c": params.g.c, "eps_ball": params.g.eps_ball, "dim": params.g.dim},
        "class_of": params.bank.class_of.tolist(),
        "use_bias": params.use_bias,
        "tensors": [{"name": name, "shape": list(tensors[name].shape)} for name in TENSOR_ORDER],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(tensors[name], dtype="<f8").tobytes()
                       for name in TENSOR_ORDER)
    return _PREFIX.pack(MODEL_MAGIC, MODEL_VERSION, len(blob)) + blob + payload


def model_from_bytes(data: bytes):
    """Inverse of :func:`model_to_bytes`; returns ``(params, config or None)``."""
    if len(data) < _PREFIX.size:
        raise FormatError("model file truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MODEL_MAGIC:
        raise FormatError("not a model file (bad magic)")
    if version != MODEL_VERSION:
        raise UnsupportedVersion(f"model format version {version} not supported")
    if len(data) < _PREFIX.size + hlen:
        raise FormatError("model file truncated inside header")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
        specs = [(t["name"], tuple(int(s) for s in t["shape"])) for t in header["tensors"]]
        geo = GeometryConfig(**header["geometry"])
        class_of = np.array(header["class_of"], dtype=np.int64)
        use_bias = bool(header["use_bias"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise FormatError(f"corrupt model header: {exc}") from exc
    if [name for name, _ in specs] != list(TENSOR_ORDER):
        raise FormatError("unexpected tensor layout in model header")
    sizes = [int(np.prod(shape)) for _, shape in specs]
    offset = _PREFIX.size + hlen
    if len(data) != offset + 8 * sum(sizes):
        raise FormatError("model payload length does not match header")
    arrays = {}
    for (name, shape), size in zip(specs, sizes):
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset) \
            .astype(np.float64).reshape(shape)
        offset += 8 * size
    try:
        bank = PrototypeBank(arrays["theta_data"], class_of, arrays["theta_top"], geo)
    except InvalidInput as exc:
        raise FormatError(str(exc)) from exc
    params = ModelParams(arrays["projector_weight"], arrays["projector_bias"], bank,
                         arrays["cls_weight"], arrays["cls_bias"], use_bias)
    try:
        cfg = TrainConfig.from_dict(header["config"]) if header.get("config") else None
    except ConfigError as exc:
        raise FormatError(f"corrupt config echo in model header: {exc}") from exc
    return params, cfg


def save_model(params: ModelParams, path, cfg: Optional[TrainConfig] = None):
    with atomic_write(path) as fh:
        fh.write(model_to_bytes(params, cfg))


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
