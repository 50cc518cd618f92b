"""Flat key=value run configuration and manifests.

A config file is one `key=value` per line (# comments allowed); CLI flags
override file values; unrecognized keys are errors.  The manifest written
next to every run re-emits the fully resolved config plus seed, code
version, and start time, and is itself loadable as a config, so a run can
be repeated exactly from its manifest.
"""

from dataclasses import asdict, dataclass, fields

from . import __version__


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algorithm: str = "bptt"
    seed: int = 1
    cell: str = "lstm"
    n: int = 512
    d: int = 8
    steps: int = 4
    batch: int = 256
    updates: int = 1000
    lr: float = 2e-4
    lr_end: float = -1.0          # -1 means lr/100
    momentum: float = 0.0
    clip: float = 13.0
    alpha: float = 0.235
    mae_batch_normalized: bool = False
    k_top: int = 2
    k_attn: int = 1
    trunc: int = 1
    state_activation: str = "tanh"
    eval_every: int = 100
    quality: float = 1.0
    dataset: str = ""
    eval_images: str = ""

    def resolved_lr_end(self):
        return self.lr / 100.0 if self.lr_end < 0 else self.lr_end


# desk-scale profile: same protocol, sizes that finish on a workstation
PROFILES = {
    "paper": {},
    "desk": {"n": 16, "batch": 32, "updates": 2000, "eval_every": 200},
}

_BOOL_STRINGS = {"true": True, "false": False, "1": True, "0": False,
                 "yes": True, "no": False}


def _parse_value(field_type, raw, key):
    raw = raw.strip()
    if field_type is bool:
        try:
            return _BOOL_STRINGS[raw.lower()]
        except KeyError:
            raise ConfigError(f"bad boolean for {key}: {raw!r}") from None
    try:
        return field_type(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text, source="<config>"):
    """key=value lines -> dict of typed values; unknown keys are errors."""
    types = {f.name: f.type for f in fields(RunConfig)}
    typemap = {"str": str, "int": int, "float": float, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key.startswith("eval.") or key in ("code_version", "start_time",
                                              "status", "log", "checkpoint",
                                              "blocks", "images"):
            continue  # manifest bookkeeping, not configuration
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        ftype = typemap.get(types[key], types[key]) if isinstance(types[key], str) \
            else types[key]
        values[key] = _parse_value(ftype, raw, key)
    return values


def load_config(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_config_text(fh.read(), source=str(path))


def build_config(profile="paper", file_values=None, overrides=None):
    """Defaults <- profile <- config file <- CLI flags, unknown keys rejected."""
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    merged = dict(PROFILES[profile])
    merged.update(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    return RunConfig(**merged)


def config_lines(cfg):
    return [f"{key}={value}" for key, value in asdict(cfg).items()]


def write_manifest(path, cfg, start_time, extra=()):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"code_version={__version__}\n")
        fh.write(f"start_time={start_time}\n")
        for line in config_lines(cfg):
            fh.write(line + "\n")
        for line in extra:
            fh.write(line + "\n")
