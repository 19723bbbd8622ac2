"""Flat ``key = value`` configuration with typed defaults.

Values are coerced to the type of the default: ints, floats, bools,
strings, or comma-separated tuples. Unknown keys are rejected.
"""

from __future__ import annotations

from typing import Any, Dict, Iterable, Mapping, Tuple

OBJECT_CLASSES = ("table", "chair", "sofa", "bed", "cabinet", "lamp", "desk", "shelf",
                  "tv_stand", "nightstand", "wardrobe", "plant")
PREDICATES = ("left", "right", "front", "behind", "smaller", "larger", "taller",
              "shorter", "close_by", "symmetrical")

DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    # synthetic data
    "synth.num_scenes": 32,
    "synth.min_objects": 8,
    "synth.max_objects": 12,
    "synth.room": (6.0, 6.0),
    "synth.objects": OBJECT_CLASSES,
    "synth.predicates": PREDICATES,
    "synth.image_dim": 32,
    "synth.image_noise": 0.3,
    "synth.points": 32,
    "synth.point_noise": 0.01,
    "synth.split": (0.75, 0.25),
    "synth.anchor_prob": 0.6,
    "synth.twin_prob": 0.25,
    "synth.yaw_jitter_deg": 2.0,
    "synth.shape_noise": 0.0,
    "synth.timesteps": 4,
    "synth.visibility": 0.7,
    "synth.obs_jitter": 0.01,
    # relation geometry
    "relations.close_by": 0.45,
    "relations.sym_ratio": 1.1,
    "relations.sym_yaw_tol": 0.45,
    "graph.margin": 0.5,
    # shape catalog
    "catalog.per_class": 3,
    "catalog.seed": 7,
    # scene graph predictor
    "sgp.model_dim": 256,
    "sgp.image_proj_dim": 256,
    "sgp.point_dim": 256,
    "sgp.heads": 4,
    "sgp.layers": 2,
    "sgp.lr": 0.001,
    "sgp.lr_min_ratio": 0.05,
    "sgp.epochs": 20,
    "sgp.batch_size": 8,
    "sgp.seed": 0,
    # scene generator
    "vae.model_dim": 256,
    "vae.embed_dim": 128,
    "vae.latent_dim": 64,
    "vae.shape_dim": 8,
    "vae.yaw_bins": 24,
    "vae.gcn_layers": 5,
    "vae.lambda_recon": 1.0,
    "vae.lambda_kl": 0.1,
    "vae.lr": 0.001,
    "vae.lr_min_ratio": 0.05,
    "vae.epochs": 350,
    "vae.batch_size": 8,
    "vae.seed": 0,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [t.strip() for t in raw.split(",") if t.strip()]
            kind = type(default[0]) if default else str
            return tuple(kind(t) for t in items)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_lines(lines: Iterable[str], base: Mapping[str, Any] | None = None,
                source: str = "<config>") -> Dict[str, Any]:
    cfg = dict(DEFAULTS if base is None else base)
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        cfg[key] = _coerce(key, value, DEFAULTS[key])
    return cfg


def load_config(path=None, overrides: Iterable[str] = ()) -> Dict[str, Any]:
    cfg = dict(DEFAULTS)
    if path:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_lines(fh, cfg, str(path))
    cfg = parse_lines(overrides, cfg, "<override>")
    split_fractions(cfg)
    return cfg


def format_value(v: Any) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def dump_config(cfg: Mapping[str, Any]) -> str:
    return "".join(f"{k} = {format_value(cfg[k])}\n" for k in DEFAULTS)


def section(cfg: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    """Keys under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in cfg.items() if k.startswith(p)}


def split_fractions(cfg: Mapping[str, Any]) -> Tuple[float, float]:
    tr, va = cfg["synth.split"]
    if abs(tr + va - 1.0) > 1e-9 or tr < 0 or va < 0:
        raise ConfigError("synth.split fractions must be non-negative and sum to 1")
    return tr, va
