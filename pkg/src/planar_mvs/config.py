"""Pipeline configuration: defaults, flat key=value files and overrides."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .fusion import FusionParams
from .patchmatch import EngineParams
from .photometric import PatchSpec


@dataclass(frozen=True)
class PipelineConfig:
    eps: float = 0.1
    alpha: float = 0.18
    gamma: float = 0.5
    lambda_n_deg: float = 5.0
    sigma: float = 0.3
    eta: float = 0.9
    lambda_geo: float = 0.1
    tau_geo: float = 5.0
    lambda_d_divisor: float = 64.0
    top_k: int = 4
    patch_radius: int = 5
    patch_step: int = 2
    t_photo: int = 3
    t_pphoto: int = 3
    t_geo: int = 2
    geo_rounds: int = 2
    depth_perturb: float = 0.05
    normal_perturb_deg: float = 30.0
    fusion_rel_depth: float = 0.01
    fusion_normal_deg: float = 10.0
    fusion_reproj_px: float = 2.0
    fusion_min_consistent: int = 2
    seed: int = 0
    threads: int = 1
    max_dim: int = 0  # 0 keeps the input resolution
    use_prior: bool = True
    use_geom: bool = True
    prior_corruption: float = 0.0  # fraction of prior triangles given wrong depths (testing aid)
    cap_credible_density: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        pos = ("alpha", "sigma", "tau_geo", "lambda_d_divisor", "lambda_n_deg",
               "fusion_rel_depth", "fusion_normal_deg", "fusion_reproj_px")
        for name in pos:
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0 < self.eps:
            raise ValidationError("eps must be positive")
        if not 0 <= self.eta <= 1:
            raise ValidationError("eta must lie in [0, 1]")
        if self.gamma < 0 or self.lambda_geo < 0:
            raise ValidationError("gamma and lambda_geo must be non-negative")
        if self.top_k < 1 or self.fusion_min_consistent < 1:
            raise ValidationError("top_k and fusion_min_consistent must be >= 1")
        if self.t_photo < 1:
            raise ValidationError("t_photo must be >= 1: the photometric phase produces the costs the prior is built from")
        if min(self.t_pphoto, self.t_geo, self.geo_rounds) < 0:
            raise ValidationError("iteration counts must be non-negative")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.max_dim < 0:
            raise ValidationError("max_dim must be >= 0")
        if not 0 <= self.prior_corruption <= 1:
            raise ValidationError("prior_corruption must lie in [0, 1]")
        try:
            PatchSpec(self.patch_radius, self.patch_step)
        except ValueError as exc:
            raise ValidationError(str(exc)) from exc

    # --- derived parameter bundles -------------------------------------------------

    def engine_params(self) -> EngineParams:
        return EngineParams(
            sigma=self.sigma, eta=self.eta, alpha=self.alpha, gamma=self.gamma,
            lambda_n_deg=self.lambda_n_deg, lambda_d_divisor=self.lambda_d_divisor,
            lambda_geo=self.lambda_geo, tau_geo=self.tau_geo, top_k=self.top_k,
            depth_perturb=self.depth_perturb, normal_perturb_deg=self.normal_perturb_deg,
            patch=PatchSpec(self.patch_radius, self.patch_step),
        )

    def fusion_params(self) -> FusionParams:
        return FusionParams(
            self.fusion_rel_depth, self.fusion_normal_deg, self.fusion_reproj_px, self.fusion_min_consistent
        )

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: _coerce(k, v) for k, v in changes.items() if v is not None})

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v)


def _coerce(key: str, value):
    if key not in _TYPES:
        raise ValidationError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    if not isinstance(value, str):
        return value
    try:
        if kind == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        return float(value)
    except ValueError as exc:
        raise ValidationError(f"{key}: cannot parse {value!r} as {kind}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key, value)
    return out


def load_config(path=None, **overrides) -> PipelineConfig:
    """Defaults, then the file at ``path``, then non-None ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    values.update({k: _coerce(k, v) for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)
