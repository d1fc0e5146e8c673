"""Run configuration: defaults, YAML file loading, validation, digests.

The config file is YAML with nested sections::

    pipeline:
      enabled_steps: [interpreter, aligner, scholar, solver]
      critic: true
      max_iterations: 3
      pass_threshold: 5
    backend:
      kind: replay            # replay | openai
      replay_path: script.jsonl
    run:
      jobs: 4
    judge:
      float_abs_tol: 1.0e-3
    prompts:
      template_dir: null
      overrides: {}
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .prompts import TemplateCatalog, load_catalog
from .steps import PIPELINE_ORDER, SCORE_MAX, SCORE_MIN, Step


@dataclass
class BackendSettings:
    kind: str = "replay"
    model_id: str = "gpt-4o"
    base_url: str = "https://api.openai.com/v1"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_tokens: int = 2048
    timeout_s: float = 120.0
    max_attempts: int = 5
    pool_size: int = 8
    replay_path: str | None = None
    replay_strict: bool = False
    record_to: str | None = None


@dataclass
class JudgeSettings:
    float_abs_tol: float = 1e-3
    float_rel_tol: float = 1e-2
    casefold: bool = True
    strip_punctuation: bool = True
    collapse_whitespace: bool = True


def _apply_section(instance, section: dict, name: str):
    known = {f.name for f in fields(instance)}
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {name} config keys: {sorted(unknown)}")
    return replace(instance, **section)


@dataclass
class RunConfig:
    enabled_steps: tuple[Step, ...] = PIPELINE_ORDER
    critic_enabled: bool = True
    max_iterations: int = 3
    pass_threshold: int = 5
    jobs: int = 4
    backend: BackendSettings = field(default_factory=BackendSettings)
    judge: JudgeSettings = field(default_factory=JudgeSettings)
    template_dir: str | None = None
    template_overrides: dict[str, str] = field(default_factory=dict)

    _catalog: TemplateCatalog | None = field(
        default=None, init=False, repr=False, compare=False
    )

    def validate(self) -> None:
        if not self.enabled_steps:
            raise ConfigError("no pipeline steps enabled")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not SCORE_MIN <= self.pass_threshold <= SCORE_MAX:
            raise ConfigError(f"pass_threshold must be in [{SCORE_MIN}, {SCORE_MAX}]")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.judge.float_abs_tol < 0 or self.judge.float_rel_tol < 0:
            raise ConfigError("judge tolerances must be >= 0")

    def templates(self) -> TemplateCatalog:
        if self._catalog is None:
            self._catalog = load_catalog(self.template_dir, self.template_overrides)
        return self._catalog

    def ablate(self, target: str) -> "RunConfig":
        """Return a copy with one pipeline step (or the critic) disabled."""
        if target == "critic":
            return replace(self, critic_enabled=False)
        step = Step.from_label(target)
        if step is Step.SOLVER:
            raise ConfigError("the solver cannot be ablated")
        remaining = tuple(s for s in self.enabled_steps if s is not step)
        return replace(self, enabled_steps=remaining)

    def digest(self) -> str:
        payload = {
            "enabled_steps": [s.label for s in self.enabled_steps],
            "critic_enabled": self.critic_enabled,
            "max_iterations": self.max_iterations,
            "pass_threshold": self.pass_threshold,
            "jobs": self.jobs,
            "backend": {
                "kind": self.backend.kind,
                "model_id": self.backend.model_id,
                "base_url": self.backend.base_url,
                "temperature": self.backend.temperature,
                "max_tokens": self.backend.max_tokens,
            },
            "judge": {
                "float_abs_tol": self.judge.float_abs_tol,
                "float_rel_tol": self.judge.float_rel_tol,
                "casefold": self.judge.casefold,
                "strip_punctuation": self.judge.strip_punctuation,
                "collapse_whitespace": self.judge.collapse_whitespace,
            },
            "template_dir": self.template_dir,
            "template_overrides": dict(sorted(self.template_overrides.items())),
        }
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known_sections = {"pipeline", "backend", "run", "judge", "prompts"}
        unknown = set(data) - known_sections
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

        config = cls()
        pipeline = dict(data.get("pipeline") or {})
        if "enabled_steps" in pipeline:
            labels = pipeline.pop("enabled_steps")
            try:
                steps = tuple(Step.from_label(str(label)) for label in labels)
            except Exception as exc:
                raise ConfigError(f"bad enabled_steps: {exc}") from exc
            config = replace(config, enabled_steps=tuple(sorted(set(steps), key=lambda s: s.ordinal)))
        if "critic" in pipeline:
            config = replace(config, critic_enabled=bool(pipeline.pop("critic")))
        if "max_iterations" in pipeline:
            config = replace(config, max_iterations=int(pipeline.pop("max_iterations")))
        if "pass_threshold" in pipeline:
            config = replace(config, pass_threshold=int(pipeline.pop("pass_threshold")))
        if pipeline:
            raise ConfigError(f"unknown pipeline config keys: {sorted(pipeline)}")

        config = replace(config, backend=_apply_section(config.backend, dict(data.get("backend") or {}), "backend"))
        config = replace(config, judge=_apply_section(config.judge, dict(data.get("judge") or {}), "judge"))

        run_section = dict(data.get("run") or {})
        if "jobs" in run_section:
            config = replace(config, jobs=int(run_section.pop("jobs")))
        if run_section:
            raise ConfigError(f"unknown run config keys: {sorted(run_section)}")

        prompts = dict(data.get("prompts") or {})
        if "template_dir" in prompts:
            value = prompts.pop("template_dir")
            config = replace(config, template_dir=str(value) if value else None)
        if "overrides" in prompts:
            overrides = prompts.pop("overrides") or {}
            config = replace(config, template_overrides={str(k): str(v) for k, v in overrides.items()})
        if prompts:
            raise ConfigError(f"unknown prompts config keys: {sorted(prompts)}")

        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping of sections")
        return cls.from_dict(data)
