"""Synthetic campus population and its layered contact network.

The population mixes on-campus students, off-campus students, and
faculty/staff.  Contacts run over three layers with distinct per-edge
transmission probabilities: shared housing (off-campus houses, faculty
houses, and communal rooms inside dorm buildings), in-person classes, and a
fresh random-encounter graph drawn every day.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PopulationConfig

GROUPS = ("student_off_campus", "student_on_campus", "faculty_staff")
AGE_BANDS = ("<18", "18-28", "29-38", "39-48", "49-68", ">68")
AGE_WEIGHTS = np.array([0.1, 0.5, 0.2, 0.07, 0.07, 0.06])
# Probability an infection turns symptomatic, by age band.
SYMPTOMATIC_PROB = np.array([0.4, 0.4, 0.6, 0.6, 0.8, 0.8])

P_HOUSE = 0.03       # household layer transmission probability
COMMUNAL_BONUS = 0.01  # added when both ends live in communal housing
P_CLASS = 0.01
P_RANDOM = 0.005     # base probability; scaled by individual risk at hazard time

RANDOM_DEGREE_MIN = 3
RANDOM_DEGREE_MAX = 25


@dataclass(frozen=True)
class AgentAttributes:
    """Read-only view of a single agent, mostly for tests and debugging."""

    id: int
    group: str
    age_category: str
    baseline_risk: float
    communal: bool
    attends_in_person: bool
    symptomatic_if_infected: bool


class Population:
    """Array-backed agent attributes; indexable as AgentAttributes views."""

    def __init__(self, group: np.ndarray, age_band: np.ndarray,
                 baseline_risk: np.ndarray, communal: np.ndarray,
                 attends_in_person: np.ndarray, symptomatic_if_infected: np.ndarray):
        self.n = len(group)
        self.group = group
        self.age_band = age_band
        self.baseline_risk = baseline_risk
        self.communal = communal
        self.attends_in_person = attends_in_person
        self.symptomatic_if_infected = symptomatic_if_infected

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> AgentAttributes:
        if not 0 <= i < self.n:
            raise KeyError(f"unknown agent id {i}")
        return AgentAttributes(
            id=i,
            group=GROUPS[self.group[i]],
            age_category=AGE_BANDS[self.age_band[i]],
            baseline_risk=float(self.baseline_risk[i]),
            communal=bool(self.communal[i]),
            attends_in_person=bool(self.attends_in_person[i]),
            symptomatic_if_infected=bool(self.symptomatic_if_infected[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(self.n))


def synthesize_population(cfg: PopulationConfig, rng: np.random.Generator | None = None) -> Population:
    """Draw n agents with age, group, housing, attendance and risk attributes."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    n = cfg.n

    age_band = rng.choice(len(AGE_BANDS), size=n, p=AGE_WEIGHTS).astype(np.int8)
    student = age_band < 2  # 29+ are faculty/staff

    group = np.full(n, 2, dtype=np.int8)
    group[student] = 0
    student_idx = np.flatnonzero(student)
    k_on = min(int(round(cfg.frac_on_campus * n)), len(student_idx))
    on_campus = rng.choice(student_idx, size=k_on, replace=False)
    group[on_campus] = 1

    communal = np.zeros(n, dtype=bool)
    communal[on_campus] = True
    attends = rng.random(n) < cfg.frac_in_person
    risk_n = cfg.risk_dispersion_n if cfg.risk_dispersion_n is not None else n
    baseline_risk = rng.beta(1.0, risk_n / 36000.0, size=n)
    symptomatic = rng.random(n) < SYMPTOMATIC_PROB[age_band]

    return Population(group, age_band, baseline_risk, communal, attends, symptomatic)


def truncated_negbin(rng: np.random.Generator, mu: float, lo: int, hi: int,
                     size: int) -> np.ndarray:
    """Negative binomial draws (dispersion 1) rejected into [lo, hi]."""
    if size == 0:
        return np.zeros(0, dtype=np.int64)
    p = 1.0 / (1.0 + mu)
    out = rng.negative_binomial(1, p, size=size)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.negative_binomial(1, p, size=int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return out


class NetworkLayers:
    """Static household and class layers plus a per-day random-contact layer.

    Household units are off-campus houses, faculty houses, and communal rooms
    (rooms additionally map to one of the dorm buildings).  Directed edge
    arrays are precomputed for fast hazard accumulation; ``attach_random_layer``
    swaps in each day's fresh encounter graph.
    """

    def __init__(self, n: int, household_units: list[np.ndarray],
                 unit_building: np.ndarray, classes: list[np.ndarray],
                 communal: np.ndarray):
        self.n = n
        self.household_units = household_units
        self.unit_building = unit_building   # building id per unit, -1 off campus
        self.classes = classes
        self.household_of = np.full(n, -1, dtype=np.int32)
        for u, members in enumerate(household_units):
            self.household_of[members] = u
        self.building_of = np.full(n, -1, dtype=np.int16)
        for u, members in enumerate(household_units):
            if unit_building[u] >= 0:
                self.building_of[members] = unit_building[u]
        self.classes_of: list[list[int]] = [[] for _ in range(n)]
        for c, members in enumerate(classes):
            for a in members:
                self.classes_of[a].append(c)

        # Directed static edges (dst infects src); layer code 0=household, 1=class.
        src, dst, prob, layer = [], [], [], []
        for members in household_units:
            if len(members) < 2:
                continue
            a, b = np.meshgrid(members, members, indexing="ij")
            mask = a != b
            # communal bonus applies only when both ends are communal residents
            pa = np.where(communal[a[mask]] & communal[b[mask]],
                          P_HOUSE + COMMUNAL_BONUS, P_HOUSE)
            src.append(a[mask].astype(np.int32))
            dst.append(b[mask].astype(np.int32))
            prob.append(pa)
            layer.append(np.zeros(int(mask.sum()), dtype=np.int8))
        for members in classes:
            if len(members) < 2:
                continue
            a, b = np.meshgrid(members, members, indexing="ij")
            mask = a != b
            src.append(a[mask].astype(np.int32))
            dst.append(b[mask].astype(np.int32))
            prob.append(np.full(int(mask.sum()), P_CLASS))
            layer.append(np.ones(int(mask.sum()), dtype=np.int8))
        if src:
            self.static_src = np.concatenate(src)
            self.static_dst = np.concatenate(dst)
            self.static_prob = np.concatenate(prob)
            self.static_layer = np.concatenate(layer)
        else:
            self.static_src = np.zeros(0, dtype=np.int32)
            self.static_dst = np.zeros(0, dtype=np.int32)
            self.static_prob = np.zeros(0)
            self.static_layer = np.zeros(0, dtype=np.int8)

        self.random_edges = np.zeros((0, 2), dtype=np.int32)
        self.random_day = -1

    def attach_random_layer(self, edges: np.ndarray, day: int) -> None:
        self.random_edges = edges
        self.random_day = day

    def household_members(self, i: int) -> np.ndarray:
        u = self.household_of[i]
        if u < 0:
            return np.zeros(0, dtype=np.int32)
        members = self.household_units[u]
        return members[members != i]

    def classmates(self, i: int) -> np.ndarray:
        """Classmates with multiplicity (one entry per shared class meeting)."""
        out = []
        for c in self.classes_of[i]:
            members = self.classes[c]
            out.append(members[members != i])
        if not out:
            return np.zeros(0, dtype=np.int32)
        return np.concatenate(out)

    def random_contacts(self, i: int) -> np.ndarray:
        e = self.random_edges
        if len(e) == 0:
            return np.zeros(0, dtype=np.int32)
        return np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]])


def _fill_units(pool: np.ndarray, sizes: np.ndarray) -> list[np.ndarray]:
    """Assign agents from a shuffled pool to units of the drawn sizes.

    The pool may run out before every unit is filled (remaining units stay
    partial or empty) and agents beyond the total unit capacity stay
    unassigned.
    """
    units: list[np.ndarray] = []
    pos = 0
    for s in sizes:
        members = pool[pos:pos + int(s)]
        units.append(np.sort(members).astype(np.int32))
        pos += int(s)
        if pos >= len(pool):
            # keep remaining declared units empty
            units.extend(np.zeros(0, dtype=np.int32) for _ in range(len(sizes) - len(units)))
            break
    return units


def build_static_layers(pop: Population, cfg: PopulationConfig,
                        rng: np.random.Generator | None = None) -> NetworkLayers:
    """Build household (houses, faculty homes, communal rooms) and class layers."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed + 1)
    n = pop.n

    units: list[np.ndarray] = []
    unit_building: list[int] = []

    # Off-campus student houses.
    off_students = np.flatnonzero(pop.group == 0)
    n_houses = int(round(cfg.student_house_frac * n))
    sizes = truncated_negbin(rng, cfg.house_size_mu, 1, 8, n_houses)
    pool = rng.permutation(off_students)
    house_units = _fill_units(pool, sizes)
    units.extend(house_units)
    unit_building.extend([-1] * len(house_units))

    # Faculty/staff houses (sizes may legitimately be zero).
    faculty = np.flatnonzero(pop.group == 2)
    n_fac = int(round(cfg.faculty_house_frac * n))
    sizes = truncated_negbin(rng, cfg.faculty_house_size_mu, 0, 2, n_fac)
    pool = rng.permutation(faculty)
    fac_units = _fill_units(pool, sizes)
    units.extend(fac_units)
    unit_building.extend([-1] * len(fac_units))

    # Communal rooms: every on-campus student gets a room in some building.
    on_students = rng.permutation(np.flatnonzero(pop.group == 1))
    pos = 0
    while pos < len(on_students):
        s = int(truncated_negbin(rng, cfg.room_size_mu, 1, 8, 1)[0])
        members = on_students[pos:pos + s]
        units.append(np.sort(members).astype(np.int32))
        unit_building.append(int(rng.integers(cfg.n_buildings)))
        pos += s

    # In-person classes (many-to-many membership over attendees).
    attendees = np.flatnonzero(pop.attends_in_person)
    classes: list[np.ndarray] = []
    n_classes = int(round(cfg.class_frac * n))
    if len(attendees) >= 2:
        for _ in range(n_classes):
            s = int(truncated_negbin(rng, cfg.class_size_mu, 15, 25, 1)[0])
            s = min(s, len(attendees))
            members = rng.choice(attendees, size=s, replace=False)
            classes.append(np.sort(members).astype(np.int32))

    return NetworkLayers(n, units, np.asarray(unit_building, dtype=np.int32),
                         classes, pop.communal)


def sample_random_layer(pop: Population, risk_scale: float,
                        rng: np.random.Generator,
                        mu: float = 16.0) -> np.ndarray:
    """Draw one day's random-encounter multigraph as an (M, 2) edge array.

    Each agent's encounter count is a negative binomial draw scaled up by
    individual risk and clamped to [3, 25]; stubs are paired uniformly with
    self-loops repaired by pair swaps, so realized degrees (with multiplicity)
    match the drawn counts exactly.
    """
    if not 0.0 <= risk_scale <= 1.0:
        raise ValueError(f"risk_scale must lie in [0, 1], got {risk_scale}")
    n = pop.n
    base = rng.negative_binomial(1, 1.0 / (1.0 + mu), size=n)
    scaled = np.rint(base * (1.0 + risk_scale * pop.baseline_risk))
    deg = np.clip(scaled, RANDOM_DEGREE_MIN, RANDOM_DEGREE_MAX).astype(np.int64)
    if deg.sum() % 2 == 1:
        candidates = np.flatnonzero(deg < RANDOM_DEGREE_MAX)
        deg[rng.choice(candidates)] += 1

    stubs = np.repeat(np.arange(n, dtype=np.int32), deg)
    rng.shuffle(stubs)
    pairs = stubs.reshape(-1, 2)

    # Repair self-loops by swapping right endpoints with a compatible pair.
    m = len(pairs)
    bad = np.flatnonzero(pairs[:, 0] == pairs[:, 1])
    guard = 0
    while len(bad) and guard < 200:
        for idx in bad:
            a = pairs[idx, 0]
            for _ in range(50):
                j = int(rng.integers(m))
                if j != idx and a not in pairs[j]:
                    pairs[idx, 1], pairs[j, 1] = pairs[j, 1], pairs[idx, 1]
                    break
        bad = np.flatnonzero(pairs[:, 0] == pairs[:, 1])
        guard += 1
    if len(bad):  # pathological degree sequence; drop the stragglers
        pairs = np.delete(pairs, bad, axis=0)
    return pairs


def neighbors_of(layers: NetworkLayers, agent_id: int,
                 day: int | None = None) -> dict[str, tuple[np.ndarray, float]]:
    """Per-layer neighbor ids of one agent, tagged with the layer probability.

    ``day`` (when given) must match the attached random layer's day; the
    random-layer probability reported here is the base value before the
    individual-risk scaling applied at hazard time.
    """
    if not 0 <= agent_id < layers.n:
        raise KeyError(f"unknown agent id {agent_id}")
    if day is not None and layers.random_day >= 0 and day != layers.random_day:
        raise KeyError(f"random layer holds day {layers.random_day}, asked for {day}")
    hh = layers.household_members(agent_id)
    hh_prob = P_HOUSE
    if len(hh) and layers.building_of[agent_id] >= 0:
        hh_prob = P_HOUSE + COMMUNAL_BONUS
    return {
        "household": (hh, hh_prob),
        "class": (layers.classmates(agent_id), P_CLASS),
        "random": (layers.random_contacts(agent_id), P_RANDOM),
    }


def export_layers_csv(layers: NetworkLayers, path) -> None:
    """Dump all current edges as (layer, agent_a, agent_b, prob) rows."""
    import csv

    names = ("household", "class")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "agent_a", "agent_b", "prob"])
        rows = []
        for i in range(len(layers.static_src)):
            a, b = int(layers.static_src[i]), int(layers.static_dst[i])
            if a > b:
                continue  # undirected: emit each pair once
            rows.append((names[layers.static_layer[i]], a, b, float(layers.static_prob[i])))
        for a, b in layers.random_edges:
            rows.append(("random", int(min(a, b)), int(max(a, b)), P_RANDOM))
        for row in sorted(rows):
            w.writerow(row)
