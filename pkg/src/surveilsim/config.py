"""Typed configuration for population synthesis and experiments.

Configs are flat ``key = value`` text files.  Every key is typed against a
schema; unknown keys and malformed values are hard errors so a stale config
fails loudly instead of silently running with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Raised for unknown keys, bad types, or inconsistent settings."""


@dataclass(frozen=True)
class PopulationConfig:
    """Knobs for the synthetic campus population and its contact layers."""

    n: int = 2000
    frac_on_campus: float = 0.05      # fraction of the full population
    frac_in_person: float = 0.18      # fraction attending in person
    student_house_frac: float = 0.01  # off-campus student houses per capita
    faculty_house_frac: float = 0.005
    n_buildings: int = 25             # communal buildings for on-campus students
    class_frac: float = 0.0157        # in-person classes per capita (314 at n=20000)
    house_size_mu: float = 2.0        # student household size mean (truncated 1..8)
    faculty_house_size_mu: float = 0.5  # truncated 0..2
    room_size_mu: float = 2.0         # communal room size mean (truncated 1..8)
    class_size_mu: float = 20.0       # truncated 15..25
    random_degree_mu: float = 16.0    # daily random-encounter mean (clamped 3..25)
    # population size entering the baseline-risk beta's shape (None = n).
    # Down-scaled runs keep the full-scale heterogeneity by pinning this.
    risk_dispersion_n: int | None = None
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n < 10:
            raise ConfigError(f"population size must be >= 10, got {self.n}")
        for name in ("frac_on_campus", "frac_in_person", "student_house_frac",
                     "faculty_house_frac", "class_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        for name in ("house_size_mu", "faculty_house_size_mu", "room_size_mu",
                     "class_size_mu", "random_degree_mu"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_buildings < 1:
            raise ConfigError("n_buildings must be >= 1")


# Candidate learner tokens: <weighting>_<featureset> where weighting is
# "full", "window<w>" or "exp<rate without dot>", and featureset is "base"
# or "bn" (base + network contact counts).
DEFAULT_CANDIDATES = ("full_base", "full_bn", "window7_bn", "window14_bn", "exp05_bn")

# Catalog of candidate designs an adaptive selector chooses among each day.
# Rank-mode allocation dominates sampling at desk scale (sampling spreads a
# small budget too thin), so the default catalog sticks to rank designs;
# risk_*_sample tokens remain available in config.
DEFAULT_CATALOG = (
    "symptomatic_contact",
    "risk_sl_rank",
    "risk_full_bn_rank",
    "risk_window14_bn_rank",
    "risk_exp05_bn_rank",
)

FIXED_STRATEGIES = (
    "no_testing", "random", "symptomatic", "contact_tracing",
    "symptomatic_contact", "glm_risk", "perfect",
)
ADAPTIVE_STRATEGIES = ("osl_loss", "osl_tmle", "osl_tmle_ci")


@dataclass(frozen=True)
class ExperimentConfig:
    """One resolved experiment: population, epidemic knobs, strategies, output."""

    population: PopulationConfig = field(default_factory=PopulationConfig)
    tau: int = 120
    budget_tests: int = 60            # tests per day (resolved from budget_frac if given)
    risk_scale: float = 0.5
    isolation_factor: float = 0.0
    import_rate: float = 0.0          # per-agent per-day outside-infection probability
    seed_exposed: int = 8
    seed_detectable: int = 2
    seed_symptomatic: int = 2
    seed_asymptomatic: int = 0
    strategies: tuple[str, ...] = ("no_testing", "random", "symptomatic_contact",
                                   "osl_tmle_ci", "perfect")
    # Whether random encounters can be named to contact tracers and counted
    # by the risk features.  The default treats them as the latent part of
    # the network: strangers leave no trail.
    random_layer_observable: bool = False
    candidates: tuple[str, ...] = DEFAULT_CANDIDATES
    catalog: tuple[str, ...] = DEFAULT_CATALOG
    loss_window: int = 5
    use_ensemble: bool = False        # ensemble SL for the targeting regression
    n_replicates: int = 20
    base_seed: int = 20200905
    threads: int = 1
    out_dir: str = "results"
    debug_dumps: bool = False
    sweep_budget_fracs: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04)
    sweep_risk_scales: tuple[float, ...] = (0.4, 0.5, 0.6, 0.7)

    def validate(self) -> None:
        self.population.validate()
        if self.tau < 1:
            raise ConfigError(f"tau must be >= 1, got {self.tau}")
        if not 0 <= self.budget_tests <= self.population.n:
            raise ConfigError(
                f"budget_tests must lie in [0, n={self.population.n}], got {self.budget_tests}")
        if self.n_replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.loss_window < 1:
            raise ConfigError("loss_window must be >= 1")
        if not 0.0 <= self.isolation_factor <= 1.0:
            raise ConfigError("isolation_factor must lie in [0, 1]")
        if not 0.0 <= self.import_rate <= 1.0:
            raise ConfigError("import_rate must lie in [0, 1]")
        if self.risk_scale < 0.0 or self.risk_scale > 1.0:
            raise ConfigError("risk_scale must lie in [0, 1]")
        seeds = (self.seed_exposed, self.seed_detectable,
                 self.seed_symptomatic, self.seed_asymptomatic)
        if any(s < 0 for s in seeds):
            raise ConfigError("seed counts must be non-negative")
        if sum(seeds) > self.population.n:
            raise ConfigError("seeded cases exceed population size")
        for s in self.strategies:
            if s not in FIXED_STRATEGIES and s not in ADAPTIVE_STRATEGIES:
                raise ConfigError(f"unknown strategy '{s}'")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for tok in self.candidates:
            parse_candidate_token(tok)
        for tok in self.catalog:
            parse_catalog_token(tok, self.candidates)


def parse_candidate_token(token: str) -> tuple[str, float, str]:
    """Split a candidate token into (weighting kind, parameter, feature set).

    Returns e.g. ("window", 14, "bn") or ("exp", 0.05, "base") or
    ("full", 0.0, "bn").
    """
    parts = token.rsplit("_", 1)
    if len(parts) != 2 or parts[1] not in ("base", "bn"):
        raise ConfigError(f"bad candidate token '{token}' (expect <weighting>_<base|bn>)")
    wtok, feats = parts
    if wtok == "full":
        return "full", 0.0, feats
    if wtok.startswith("window"):
        try:
            w = int(wtok[len("window"):])
        except ValueError:
            raise ConfigError(f"bad window size in candidate token '{token}'") from None
        if w < 1:
            raise ConfigError(f"window size must be >= 1 in '{token}'")
        return "window", float(w), feats
    if wtok.startswith("exp"):
        digits = wtok[len("exp"):]
        if not digits.isdigit():
            raise ConfigError(f"bad exponential rate in candidate token '{token}'")
        rate = float("0." + digits)
        if not 0.0 < rate < 1.0:
            raise ConfigError(f"exponential rate must lie in (0, 1) in '{token}'")
        return "exp", rate, feats
    raise ConfigError(f"unknown weighting '{wtok}' in candidate token '{token}'")


def parse_catalog_token(token: str, candidates: tuple[str, ...]) -> tuple[str, str, str]:
    """Split a catalog token into (design kind, learner id, mode).

    Rule-based designs allocate by rank (random allocates by sampling); risk
    designs return ("risk", learner_id, mode) where learner_id is "sl" or a
    candidate token.
    """
    if token == "random":
        return token, "", "sample"
    if token in ("no_testing", "symptomatic", "contact_tracing",
                 "symptomatic_contact", "perfect"):
        return token, "", "rank"
    if token.startswith("risk_"):
        body = token[len("risk_"):]
        for mode in ("rank", "sample"):
            if body.endswith("_" + mode):
                learner = body[: -len(mode) - 1]
                if learner != "sl" and learner not in candidates:
                    raise ConfigError(
                        f"catalog token '{token}' references unknown learner '{learner}'")
                return "risk", learner, mode
    raise ConfigError(f"unknown catalog token '{token}'")


# Schema: config-file key -> (attribute path, parser). Budget is special-cased.
_POP_KEYS = {
    "n": int, "frac_on_campus": float, "frac_in_person": float,
    "student_house_frac": float, "faculty_house_frac": float,
    "n_buildings": int, "class_frac": float, "house_size_mu": float,
    "faculty_house_size_mu": float, "room_size_mu": float,
    "class_size_mu": float, "random_degree_mu": float,
    "risk_dispersion_n": int,
}
_EXP_KEYS = {
    "tau": int, "risk_scale": float, "isolation_factor": float,
    "import_rate": float, "seed_exposed": int, "seed_detectable": int,
    "seed_symptomatic": int, "seed_asymptomatic": int, "loss_window": int,
    "replicates": int, "base_seed": int, "threads": int, "out_dir": str,
    "use_ensemble": bool, "debug_dumps": bool, "random_layer_observable": bool,
}
_LIST_KEYS = {
    "strategies": str, "candidates": str, "catalog": str,
    "sweep_budget_fracs": float, "sweep_risk_scales": float,
}


def _parse_scalar(key: str, raw: str, typ: type):
    raw = raw.strip()
    try:
        if typ is bool:
            if raw.lower() in ("true", "yes", "1"):
                return True
            if raw.lower() in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for '{key}': {raw!r} (expected {typ.__name__})") from None


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    pop_kwargs: dict = {}
    exp_kwargs: dict = {}
    budget_tests = None
    budget_frac = None
    seen: set[str] = set()

    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        seen.add(key)

        if key == "budget_tests":
            budget_tests = _parse_scalar(key, raw, int)
        elif key == "budget_frac":
            budget_frac = _parse_scalar(key, raw, float)
        elif key in _POP_KEYS:
            pop_kwargs[key] = _parse_scalar(key, raw, _POP_KEYS[key])
        elif key in _EXP_KEYS:
            attr = "n_replicates" if key == "replicates" else key
            exp_kwargs[attr] = _parse_scalar(key, raw, _EXP_KEYS[key])
        elif key in _LIST_KEYS:
            typ = _LIST_KEYS[key]
            items = tuple(_parse_scalar(key, item, typ)
                          for item in raw.split(",") if item.strip())
            exp_kwargs[key] = items
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")

    pop = PopulationConfig(**pop_kwargs)
    cfg = ExperimentConfig(population=pop, **exp_kwargs)
    if budget_tests is not None and budget_frac is not None:
        raise ConfigError("set exactly one of budget_tests / budget_frac, not both")
    if budget_frac is not None:
        if not 0.0 <= budget_frac <= 1.0:
            raise ConfigError(f"budget_frac must lie in [0, 1], got {budget_frac}")
        cfg = replace(cfg, budget_tests=int(round(budget_frac * pop.n)))
    elif budget_tests is not None:
        cfg = replace(cfg, budget_tests=budget_tests)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(), source=str(p))


def config_as_dict(cfg: ExperimentConfig) -> dict:
    """Fully resolved config as a JSON-ready dict (for run manifests)."""
    out: dict = {}
    for f in fields(cfg.population):
        out["population." + f.name] = getattr(cfg.population, f.name)
    for f in fields(cfg):
        if f.name == "population":
            continue
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out
