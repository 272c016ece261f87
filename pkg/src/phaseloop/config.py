"""Flat, line-oriented `key = value` configuration with [sections].

Chosen over richer formats because it is trivially diffable and needs no
parser dependency. parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields

from .agent import AgentConfig
from .errors import ConfigError
from .phase import PredictorConfig
from .session import CONDITIONS, SessionConfig
from .subject import SubjectParams


def parse_config_text(text: str, source: str = "<config>") -> dict[str, dict[str, str]]:
    """Sections of key/value strings; raises ConfigError with line diagnostics."""
    sections: dict[str, dict[str, str]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip()
            if not name:
                raise ConfigError(f"{source}:{lineno}: empty section name")
            if name in sections:
                raise ConfigError(f"{source}:{lineno}: duplicate section [{name}]")
            sections[name] = {}
            current = name
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in sections[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = value.strip()
    return sections


def serialize_config(sections: dict[str, dict[str, str]]) -> str:
    out = []
    for name, kv in sections.items():
        out.append(f"[{name}]")
        for key, value in kv.items():
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)


def read_config_file(path) -> dict[str, dict[str, str]]:
    try:
        with open(path) as fh:
            return parse_config_text(fh.read(), source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


class _Section:
    def __init__(self, name: str, data: dict[str, str]):
        self.name = name
        self.data = dict(data)
        self.used: set[str] = set()

    def _get(self, key, cast, default):
        if key not in self.data:
            return default
        self.used.add(key)
        raw = self.data[key]
        try:
            return cast(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{self.name}] {key} = {raw!r}: {exc}") from exc

    def get_float(self, key, default=None):
        return self._get(key, float, default)

    def get_int(self, key, default=None):
        return self._get(key, int, default)

    def get_str(self, key, default=None):
        return self._get(key, str, default)

    def get_bool(self, key, default=None):
        def cast(v):
            lv = v.lower()
            if lv in ("1", "true", "yes"):
                return True
            if lv in ("0", "false", "no"):
                return False
            raise ValueError(f"not a boolean: {v!r}")

        return self._get(key, cast, default)

    def get_pair(self, key, default=None):
        def cast(v):
            parts = [p.strip() for p in v.split(",")]
            if len(parts) != 2:
                raise ValueError("expected 'low, high'")
            return (float(parts[0]), float(parts[1]))

        return self._get(key, cast, default)

    def check_exhausted(self):
        unknown = set(self.data) - self.used
        if unknown:
            raise ConfigError(
                f"[{self.name}]: unknown keys: {', '.join(sorted(unknown))}"
            )


def _dataclass_from_section(cls, section: _Section, special=()):
    kwargs = {}
    for f in fields(cls):
        if f.name in special:
            continue
        if f.type in ("float", "float | None"):
            v = section.get_float(f.name)
        elif f.type == "int":
            v = section.get_int(f.name)
        elif f.type == "str":
            v = section.get_str(f.name)
        elif f.type.startswith("tuple[float, float]"):
            v = section.get_pair(f.name)
        else:
            continue
        if v is not None:
            kwargs[f.name] = v
    return kwargs


def session_config_from_sections(sections: dict[str, dict[str, str]]) -> SessionConfig:
    """Build a SessionConfig; unknown sections or keys are named errors."""
    known = {"session", "subject", "agent", "predictor"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")

    sess = _Section("session", sections.get("session", {}))
    subj = _Section("subject", sections.get("subject", {}))
    agent = _Section("agent", sections.get("agent", {}))
    pred = _Section("predictor", sections.get("predictor", {}))

    subj_kwargs = _dataclass_from_section(SubjectParams, subj)
    agent_kwargs = _dataclass_from_section(AgentConfig, agent)
    pred_kwargs = _dataclass_from_section(PredictorConfig, pred, special=("freq_band",))
    if pred.get_pair("freq_band") is not None:
        pred_kwargs["freq_band"] = pred.get_pair("freq_band")

    cond = sess.get_str("condition", "INCREASE")
    if cond not in CONDITIONS:
        raise ConfigError(f"[session] condition = {cond!r}: must be one of {CONDITIONS}")
    sess_kwargs = dict(
        condition=cond,
        seed=sess.get_int("seed", 0),
        subject_id=sess.get_str("subject_id", "S00"),
    )
    for key in ("n_baseline_pp", "n_baseline_sp", "epochs", "steps_per_epoch",
                "n_eval_pp", "n_eval_sp"):
        v = sess.get_int(key)
        if v is not None:
            sess_kwargs[key] = v
    for key in ("isi_ms", "rest_eeg_s", "post_gap_min"):
        v = sess.get_float(key)
        if v is not None:
            sess_kwargs[key] = v
    iti = sess.get_pair("iti_s")
    if iti is not None:
        sess_kwargs["iti_s"] = iti

    for sec in (sess, subj, agent, pred):
        sec.check_exhausted()

    try:
        return SessionConfig(
            subject=SubjectParams(**subj_kwargs),
            agent=AgentConfig(**agent_kwargs),
            predictor=PredictorConfig(**pred_kwargs),
            **sess_kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


@dataclass(frozen=True)
class CohortDraws:
    """Per-session ground-truth draws for a simulated cohort."""

    snr_db_mean: float = 10.0
    snr_db_sd: float = 0.0
    phi_kappa: float = 0.0  # von Mises concentration around the subject mean; 0 = uniform


@dataclass(frozen=True)
class RunManifest:
    """Cohort specification: who gets simulated, with which overrides."""

    n_subjects: int = 25
    sessions_per_condition: int = 1
    conditions: tuple[str, ...] = ("INCREASE", "DECREASE", "RANDOM")
    master_seed: int = 1
    rest_signals: str = "summary"
    draws: CohortDraws = field(default_factory=CohortDraws)
    subject: SubjectParams = field(default_factory=SubjectParams)
    agent: AgentConfig = field(default_factory=AgentConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    session_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_subjects < 0:
            raise ConfigError("n_subjects must be >= 0")
        for c in self.conditions:
            if c not in CONDITIONS:
                raise ConfigError(f"unknown condition {c!r} in manifest")


def manifest_from_sections(sections: dict[str, dict[str, str]]) -> RunManifest:
    known = {"cohort", "draws", "subject", "agent", "predictor", "session"}
    unknown = set(sections) - known
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")

    coh = _Section("cohort", sections.get("cohort", {}))
    draws = _Section("draws", sections.get("draws", {}))
    subj = _Section("subject", sections.get("subject", {}))
    agent = _Section("agent", sections.get("agent", {}))
    pred = _Section("predictor", sections.get("predictor", {}))
    sess = _Section("session", sections.get("session", {}))

    conditions = coh.get_str("conditions", "INCREASE,DECREASE,RANDOM")
    conditions = tuple(c.strip() for c in conditions.split(",") if c.strip())

    manifest = RunManifest(
        n_subjects=coh.get_int("n_subjects", 25),
        sessions_per_condition=coh.get_int("sessions_per_condition", 1),
        conditions=conditions,
        master_seed=coh.get_int("master_seed", 1),
        rest_signals=coh.get_str("rest_signals", "summary"),
        draws=CohortDraws(
            snr_db_mean=draws.get_float("snr_db_mean", 10.0),
            snr_db_sd=draws.get_float("snr_db_sd", 0.0),
            phi_kappa=draws.get_float("phi_kappa", 0.0),
        ),
        subject=SubjectParams(**_dataclass_from_section(SubjectParams, subj)),
        agent=AgentConfig(**_dataclass_from_section(AgentConfig, agent)),
        predictor=PredictorConfig(**_dataclass_from_section(PredictorConfig, pred,
                                                            special=("freq_band",))),
        session_overrides={
            k: v for k, v in (
                ("n_baseline_pp", sess.get_int("n_baseline_pp")),
                ("n_baseline_sp", sess.get_int("n_baseline_sp")),
                ("epochs", sess.get_int("epochs")),
                ("steps_per_epoch", sess.get_int("steps_per_epoch")),
                ("n_eval_pp", sess.get_int("n_eval_pp")),
                ("n_eval_sp", sess.get_int("n_eval_sp")),
                ("rest_eeg_s", sess.get_float("rest_eeg_s")),
            ) if v is not None
        },
    )
    for sec in (coh, draws, subj, agent, pred, sess):
        sec.check_exhausted()
    return manifest


def derive_session_seed(master_seed: int, subject_idx: int, condition: str, rep: int) -> int:
    """Stable session seed: low 63 bits of sha256('master|subject|condition|rep').

    Documented and stable across versions; identical manifests always produce
    identical per-session seeds.
    """
    key = f"{master_seed}|{subject_idx}|{condition}|{rep}".encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def derive_subject_seed(master_seed: int, subject_idx: int) -> int:
    key = f"{master_seed}|subject|{subject_idx}".encode()
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "big") >> 1
