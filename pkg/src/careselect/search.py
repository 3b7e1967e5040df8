"""Search for low-risk service combinations: Monte-Carlo tree search and Dijkstra.

One search instance is strictly single threaded; the tree and the action
history table mutate on every simulation. Any number of searches may share
one immutable ensemble. Budgets are simulation counts (reproducible, used by
tests and the HTTP service) or wall-clock seconds (CLI convenience).
"""
from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field
from heapq import heappush, heappop

from .catalog import PatientRecord
from .scoring import EnsembleModel, PlanScorer, score_risk

MODES = ("vanilla", "ph_mast", "time_controlled", "ph_and_time")


class FrontierLimitError(RuntimeError):
    """Dijkstra frontier outgrew its memory cap."""


@dataclass(frozen=True)
class SearchConfig:
    """Search knobs; defaults follow the tuned values."""

    plan_size: int = 8
    exploration: float = 0.05       # weight of the UCT exploration bonus
    history_influence: float = 0.1  # weight of the action-history bonus
    epsilon: float = 0.1            # chance of a random action during roll-outs
    budget_sims: int | None = None
    budget_seconds: float | None = None
    mode: str = "ph_and_time"
    seed: int = 0
    pinned: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.exploration < 0 or self.history_influence < 0:
            raise ValueError("exploration and history_influence must be nonnegative")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must be in [0,1]")
        if self.plan_size < 1:
            raise ValueError("plan_size must be at least 1")
        if len(set(self.pinned)) != len(self.pinned):
            raise ValueError("pinned services must be duplicate-free")
        if len(self.pinned) > self.plan_size:
            raise ValueError("cannot pin more services than the plan size")
        if self.budget_sims is None and self.budget_seconds is None:
            raise ValueError("either budget_sims or budget_seconds is required")

    @property
    def uses_history(self) -> bool:
        return self.mode in ("ph_mast", "ph_and_time")

    @property
    def phased(self) -> bool:
        return self.mode in ("time_controlled", "ph_and_time")


class ActionHistory:
    """Global per-action statistics: play count and total reward."""

    __slots__ = ("counts", "rewards")

    def __init__(self, n_services: int):
        self.counts = [0] * n_services
        self.rewards = [0.0] * n_services

    def score(self, service: int) -> float:
        c = self.counts[service]
        return self.rewards[service] / c if c else 0.0

    def record(self, service: int, reward: float):
        self.counts[service] += 1
        self.rewards[service] += reward


class SearchNode:
    """Tree statistics for one added service along a path from the root."""

    __slots__ = ("service", "parent", "visits", "total_reward", "children",
                 "best_reward", "best_plan")

    def __init__(self, service, parent):
        self.service = service
        self.parent = parent
        self.visits = 0
        self.total_reward = 0.0
        self.children: dict[int, SearchNode] = {}
        self.best_reward = -1.0
        self.best_plan = None

    def mean_reward(self) -> float:
        return self.total_reward / self.visits if self.visits else 0.0


def uct_ph_value(node: SearchNode, parent: SearchNode, history: ActionHistory,
                 cfg: SearchConfig) -> float:
    """Selection value: mean reward, exploration bonus, fading history bonus.

    Unvisited nodes have infinite priority; the caller breaks those ties by
    history score and then service id. A zero history weight reproduces plain
    UCT bitwise.
    """
    if node.visits == 0:
        return math.inf
    mean = node.total_reward / node.visits
    value = mean + cfg.exploration * math.sqrt(math.log(parent.visits) / node.visits)
    w = cfg.history_influence
    if w != 0.0 and history.counts[node.service]:
        hist = history.rewards[node.service] / history.counts[node.service]
        value += hist * w / ((1.0 - mean) * node.visits + 1.0)
    return value


@dataclass
class SearchResult:
    plan: frozenset
    risk: float
    initial_risk: float
    risk_reduction: float
    simulations: int
    mode: str
    seed: int
    plan_size_limit: int
    phase_trace: list = field(default_factory=list)
    evaluations: int = 0
    elapsed_seconds: float = 0.0
    budget_exhausted: bool = False

    @property
    def sims_per_second(self) -> float:
        return self.simulations / self.elapsed_seconds if self.elapsed_seconds > 0 else 0.0

    def to_json(self, catalog=None) -> dict:
        plan = sorted(self.plan)
        return {
            "plan": [catalog.code_of(s) for s in plan] if catalog else plan,
            "risk": self.risk,
            "initial_risk": self.initial_risk,
            "risk_reduction": self.risk_reduction,
            "simulations": self.simulations,
            "evaluations": self.evaluations,
            "mode": self.mode,
            "seed": self.seed,
            "plan_size": self.plan_size_limit,
            "phase_trace": self.phase_trace,
        }


class _Engine:
    """Mutable state for one search: tree, history table, scorer, rng."""

    def __init__(self, ensemble: EnsembleModel, patient: PatientRecord, cfg: SearchConfig):
        self.n_services = ensemble.n_services
        if cfg.plan_size > self.n_services:
            raise ValueError("plan_size cannot exceed the service count")
        for s in cfg.pinned:
            if not 0 <= s < self.n_services:
                raise ValueError(f"pinned service {s} outside the catalog")
        self.cfg = cfg
        self.scorer = PlanScorer(ensemble, patient)
        self.rng = random.Random(cfg.seed)
        self.history = ActionHistory(self.n_services)
        self.root = SearchNode(None, None)
        self.prefix = list(cfg.pinned)
        self.best_sim_plan = None
        self.best_sim_reward = -1.0
        self.simulations = 0
        self.eps = cfg.epsilon if cfg.uses_history else 1.0
        self.w = cfg.history_influence if cfg.uses_history else 0.0

    def simulate_once(self) -> float:
        """One selection / roll-out / expansion / backpropagation pass."""
        cfg = self.cfg
        S = self.n_services
        plan = list(self.prefix)
        used = bytearray(S)
        for s in plan:
            used[s] = 1
        node = self.root
        path = [node]
        target = cfg.plan_size

        while True:
            if len(plan) == target:
                break
            children = node.children
            # Unvisited actions first, ranked by history score then id.
            pick = -1
            pick_key = None
            counts = self.history.counts
            rewards = self.history.rewards
            for s in range(S):
                if used[s] or s in children:
                    continue
                c = counts[s]
                key = (1, rewards[s] / c) if c else (0, 0.0)
                if pick_key is None or key > pick_key:
                    pick = s
                    pick_key = key
            if pick >= 0:
                child = SearchNode(pick, node)
                children[pick] = child
                path.append(child)
                plan.append(pick)
                used[pick] = 1
                self._rollout(plan, used)
                break
            # All actions are in the tree; descend by selection value.
            best = None
            best_v = -math.inf
            log_np = math.log(node.visits)
            c_explore = cfg.exploration
            w = self.w
            for s, child in children.items():
                mean = child.total_reward / child.visits
                v = mean + c_explore * math.sqrt(log_np / child.visits)
                if w != 0.0 and counts[s]:
                    v += (rewards[s] / counts[s]) * w / ((1.0 - mean) * child.visits + 1.0)
                if v > best_v or (v == best_v and s < best.service):
                    best = child
                    best_v = v
            node = best
            path.append(node)
            plan.append(node.service)
            used[node.service] = 1

        reward = self.scorer.reward(plan)
        plan_key = tuple(sorted(plan))
        for n in path:
            n.visits += 1
            n.total_reward += reward
            if reward > n.best_reward:
                n.best_reward = reward
                n.best_plan = plan_key
        counts = self.history.counts
        rewards = self.history.rewards
        for s in plan[len(self.prefix):]:
            counts[s] += 1
            rewards[s] += reward
        if reward > self.best_sim_reward:
            self.best_sim_reward = reward
            self.best_sim_plan = plan_key
        self.simulations += 1
        return reward

    def _rollout(self, plan, used):
        """Append services until the plan is full: random or history-greedy."""
        S = self.n_services
        rng = self.rng
        eps = self.eps
        counts = self.history.counts
        rewards = self.history.rewards
        while len(plan) < self.cfg.plan_size:
            if rng.random() < eps:
                k = rng.randrange(S - len(plan))
                for s in range(S):
                    if not used[s]:
                        if k == 0:
                            pick = s
                            break
                        k -= 1
            else:
                pick = -1
                pick_key = None
                for s in range(S):
                    if used[s]:
                        continue
                    c = counts[s]
                    key = (1, rewards[s] / c) if c else (0, 0.0)
                    if pick_key is None or key > pick_key:
                        pick = s
                        pick_key = key
            plan.append(pick)
            used[pick] = 1

    def run_sims(self, budget_sims=None, deadline=None):
        if budget_sims is not None:
            for _ in range(budget_sims):
                self.simulate_once()
        else:
            while time.monotonic() < deadline:
                self.simulate_once()

    def extract_plan(self):
        """Max-visit descent from the root, completed by the best roll-out below."""
        plan = list(self.prefix)
        node = self.root
        while len(plan) < self.cfg.plan_size and node.children:
            best = None
            best_key = None
            for s, child in node.children.items():
                key = (child.visits, child.total_reward / child.visits, -s)
                if best_key is None or key > best_key:
                    best = child
                    best_key = key
            node = best
            plan.append(node.service)
        if len(plan) < self.cfg.plan_size and node.best_plan is not None:
            return node.best_plan
        return tuple(sorted(plan))


def _finish(ensemble, patient, cfg, plan, simulations, elapsed, trace=(), evaluations=0,
            exhausted=False, mode=None) -> SearchResult:
    plan = frozenset(plan)
    risk = score_risk(ensemble, patient, plan)
    initial = score_risk(ensemble, patient, patient.observed_plan)
    return SearchResult(
        plan=plan,
        risk=risk,
        initial_risk=initial,
        risk_reduction=100.0 * (initial - risk),
        simulations=simulations,
        mode=mode or cfg.mode,
        seed=cfg.seed,
        plan_size_limit=cfg.plan_size,
        phase_trace=list(trace),
        evaluations=evaluations,
        elapsed_seconds=elapsed,
        budget_exhausted=exhausted,
    )


def mcts_search(ensemble: EnsembleModel, patient: PatientRecord, cfg: SearchConfig) -> SearchResult:
    """Single-tree search; the returned plan follows max-visit extraction."""
    engine = _Engine(ensemble, patient, cfg)
    start = time.monotonic()
    if cfg.budget_sims is not None:
        engine.run_sims(budget_sims=cfg.budget_sims)
    else:
        engine.run_sims(deadline=start + cfg.budget_seconds)
    elapsed = time.monotonic() - start
    return _finish(ensemble, patient, cfg, engine.extract_plan(), engine.simulations, elapsed)


def time_controlled_search(ensemble: EnsembleModel, patient: PatientRecord,
                           cfg: SearchConfig) -> SearchResult:
    """Phased search: commit one service per phase, re-rooting the kept subtree.

    Each phase gets an equal share of the budget. The search stops early after
    a phase that improves neither the committed-prefix candidates nor the best
    simulated plan, and the returned plan is the best candidate seen, so the
    result can be smaller than the plan-size limit.
    """
    engine = _Engine(ensemble, patient, cfg)
    phases = cfg.plan_size - len(cfg.pinned)
    start = time.monotonic()
    candidates = [tuple(sorted(cfg.pinned))]
    trace = []
    if phases > 0 and (cfg.budget_sims or cfg.budget_seconds):
        if cfg.budget_sims is not None:
            base, rem = divmod(cfg.budget_sims, phases)
            budgets = [base + (1 if i < rem else 0) for i in range(phases)]
        else:
            budgets = [cfg.budget_seconds / phases] * phases
        best_risk = min(engine.scorer.risk(c) for c in candidates)
        for i, phase_budget in enumerate(budgets):
            if cfg.budget_sims is not None:
                engine.run_sims(budget_sims=phase_budget)
            else:
                engine.run_sims(deadline=time.monotonic() + phase_budget)
            if not engine.root.children:
                break
            best = None
            best_key = None
            for s, child in engine.root.children.items():
                key = (child.visits, child.total_reward / child.visits, -s)
                if best_key is None or key > best_key:
                    best = child
                    best_key = key
            engine.prefix.append(best.service)
            engine.root = best
            prefix_plan = tuple(sorted(engine.prefix))
            candidates.append(prefix_plan)
            trace.append(
                {
                    "phase": i + 1,
                    "simulations": engine.simulations,
                    "committed": best.service,
                    "prefix_size": len(prefix_plan),
                }
            )
            new_best = min(engine.scorer.risk(c) for c in candidates)
            if engine.best_sim_plan is not None:
                new_best = min(new_best, 1.0 - engine.best_sim_reward)
            if new_best < best_risk:
                best_risk = new_best
            else:
                break
    if engine.best_sim_plan is not None:
        candidates.append(engine.best_sim_plan)
    plans = sorted(set(candidates))
    scored = [(score_risk(ensemble, patient, frozenset(p)), p) for p in plans]
    _, plan = min(scored, key=lambda rp: (rp[0], rp[1]))
    elapsed = time.monotonic() - start
    return _finish(ensemble, patient, cfg, plan, engine.simulations, elapsed, trace=trace)


def run_search(ensemble, patient, cfg: SearchConfig) -> SearchResult:
    if cfg.phased:
        return time_controlled_search(ensemble, patient, cfg)
    return mcts_search(ensemble, patient, cfg)


def dijkstra_search(ensemble: EnsembleModel, patient: PatientRecord, plan_size: int,
                    pinned=(), eval_limit=None, frontier_limit=5_000_000,
                    seed=0) -> SearchResult:
    """Shortest-path baseline over the lattice of partial plans.

    Vertices are canonical service subsets of size up to the plan size; each
    edge adds one service and costs 1 - (risk at tail - risk at head). The
    first settled full-size vertex is returned. An evaluation budget makes the
    comparison with simulation counts fair: when it runs out, the best
    evaluated vertex so far is returned instead.
    """
    if plan_size < 1:
        raise ValueError("plan_size must be at least 1")
    scorer = PlanScorer(ensemble, patient)
    n_services = ensemble.n_services
    start = time.monotonic()

    risks: dict[tuple, float] = {}

    def risk_of(vertex):
        r = risks.get(vertex)
        if r is None:
            r = scorer.risk(vertex)
            risks[vertex] = r
        return r

    source = tuple(sorted(pinned))
    dist = {source: 0.0}
    heap = [(0.0, source)]
    settled = set()
    best_partial = (risk_of(source), source)
    best_complete = None
    exhausted = False
    result_plan = None

    while heap:
        d, vertex = heappop(heap)
        if vertex in settled:
            continue
        settled.add(vertex)
        if len(vertex) == plan_size:
            result_plan = vertex
            break
        if eval_limit is not None and len(risks) >= eval_limit:
            exhausted = True
            break
        r_v = risk_of(vertex)
        for s in range(n_services):
            if s in vertex:
                continue
            child = tuple(sorted(vertex + (s,)))
            if child in dist:
                continue
            r_c = risk_of(child)
            if r_c < best_partial[0]:
                best_partial = (r_c, child)
            if len(child) == plan_size and (best_complete is None or r_c < best_complete[0]):
                best_complete = (r_c, child)
            dist[child] = d + (1.0 - (r_v - r_c))
            heappush(heap, (dist[child], child))
            if len(heap) > frontier_limit:
                raise FrontierLimitError(
                    f"frontier exceeded {frontier_limit} vertices; "
                    "reduce the catalog size or the plan size"
                )

    if result_plan is None:
        fallback = best_complete or best_partial
        result_plan = fallback[1]
        exhausted = True
    elapsed = time.monotonic() - start
    cfg = SearchConfig(plan_size=plan_size, budget_sims=0, mode="vanilla",
                       seed=seed, pinned=tuple(pinned))
    return _finish(ensemble, patient, cfg, result_plan, 0, elapsed,
                   evaluations=len(risks), exhausted=exhausted, mode="dijkstra")
