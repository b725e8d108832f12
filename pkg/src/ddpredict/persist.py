"""Save and load any fitted method through the named-tensor checkpoint archive."""
from __future__ import annotations

from dataclasses import asdict

from sklearn.utils.validation import check_is_fitted

from .baselines import LinearARPredictor, PersistencePredictor, TMLPPredictor
from .errors import FormatError, ShapeMismatchError
from .model import PhysicsAwarePredictor, Predictor, PredictorConfig
from .nn import autograd as ag
from .nn import checkpoint
from .nn.layers import ParamGroup

_CLASSES = {c.__name__: c for c in (PhysicsAwarePredictor, TMLPPredictor, LinearARPredictor, PersistencePredictor)}
_SHAPE_ATTRS = ("n_p_", "n_f_", "k_d_")


def _jsonable(params):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in params.items()}


def estimator_bytes(est):
    check_is_fitted(est)
    name = type(est).__name__
    if name not in _CLASSES:
        raise TypeError(f"cannot serialise {name}")
    extra = {
        "class": name,
        "params": _jsonable(est.get_params()),
        "fitted": {a: int(getattr(est, a)) for a in _SHAPE_ATTRS},
    }
    config = None
    if isinstance(est, PhysicsAwarePredictor):
        groups = est.net_.groups
        config = asdict(est.net_.cfg)
    elif isinstance(est, TMLPPredictor):
        groups = [est.params_]
    elif isinstance(est, LinearARPredictor):
        groups = [ParamGroup("ar", {"coef": ag.Tensor(est.coef_)}, trainable=False)]
        extra["fitted"]["ridge_features_"] = list(est.ridge_features_)
    else:
        groups = []
    return checkpoint.dump_archive(groups, config=config, extra=extra)


def estimator_from_bytes(buf):
    header, arrays = checkpoint.parse_archive(buf)
    extra = header.get("extra", {})
    cls = _CLASSES.get(extra.get("class"))
    if cls is None:
        raise FormatError(f"checkpoint does not describe a known estimator ({extra.get('class')!r})")
    params = dict(extra["params"])
    if params.get("descriptor_rows") is not None:
        params["descriptor_rows"] = tuple(params["descriptor_rows"])
    est = cls(**params)
    fitted = dict(extra["fitted"])
    if cls is PhysicsAwarePredictor:
        est.net_ = Predictor(PredictorConfig(**header["config"]))
        checkpoint.load_into(est.net_.groups, header, arrays)
    elif cls is TMLPPredictor:
        est.params_ = _group_from(header, arrays, "tmlp")
    elif cls is LinearARPredictor:
        est.coef_ = _group_from(header, arrays, "ar").tensors["coef"].data
        est.ridge_features_ = list(fitted.pop("ridge_features_"))
    for a in _SHAPE_ATTRS:
        setattr(est, a, int(fitted[a]))
    return est


def _group_from(header, arrays, name):
    meta = {g["name"]: g for g in header["groups"]}
    if name not in meta:
        raise ShapeMismatchError(f"group {name!r} missing from checkpoint")
    flag = bool(meta[name]["trainable"])
    return ParamGroup(name, {k: ag.Tensor(v, flag) for k, v in arrays[name].items()}, flag)


def save_estimator(est, path):
    data = estimator_bytes(est)
    with open(path, "wb") as fh:
        fh.write(data)


def load_estimator(path):
    with open(path, "rb") as fh:
        return estimator_from_bytes(fh.read())
