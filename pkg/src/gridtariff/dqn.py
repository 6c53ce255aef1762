"""Deep Q-network agent for discrete voltage-control actions, written on plain numpy.

The agent observes a solved network, picks one control move (generator
setpoint ±0.01 pu, transformer tap ±1 step, shunt bank ±1 step), re-solves,
and is rewarded by the drop in average PQ-bus voltage deviation.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, GridTariffError, InvalidActionError, SingularJacobianError
from .netmodel import PQ, NetworkCase
from .powerflow import PowerFlowSolution, solve_newton

STATE_LAYOUT_VERSION = 1
GEN_STEP_PU = 0.01

# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


class MlpNetwork:
    """Fully connected network: tanh hidden layers, identity output."""

    activation = "tanh"

    def __init__(self, layer_sizes: Sequence[int], rng: np.random.Generator | None = None,
                 weights: list[np.ndarray] | None = None, biases: list[np.ndarray] | None = None,
                 zero_output: bool = True):
        self.layer_sizes = tuple(int(n) for n in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError("need at least an input and an output layer of positive size")
        if weights is None:
            if rng is None:
                raise ValueError("rng required for random initialization")
            # Glorot-uniform hidden layers; the output layer starts at zero so
            # every action begins with Q = 0 and no arbitrary initial preference.
            weights, biases = [], []
            pairs = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
            for k, (n_in, n_out) in enumerate(pairs):
                if k == len(pairs) - 1 and zero_output:
                    weights.append(np.zeros((n_in, n_out)))
                else:
                    limit = math.sqrt(6.0 / (n_in + n_out))
                    weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
                biases.append(np.zeros(n_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float) for b in biases]
        for w, b, n_in, n_out in zip(self.weights, self.biases, self.layer_sizes[:-1],
                                     self.layer_sizes[1:]):
            if w.shape != (n_in, n_out) or b.shape != (n_out,):
                raise ValueError("weight shapes do not match layer sizes")

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.layer_sizes, weights=[w.copy() for w in self.weights],
                          biases=[b.copy() for b in self.biases])

    def copy_from(self, other: "MlpNetwork") -> None:
        for w, ow in zip(self.weights, other.weights):
            w[...] = ow
        for b, ob in zip(self.biases, other.biases):
            b[...] = ob

    def _forward(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if k == last else np.tanh(z))
        return acts

    def forward(self, x) -> np.ndarray:
        """Q-values for one state (1-D) or a batch of states (2-D)."""
        return self._forward(np.asarray(x, dtype=float))[-1]

    def backward(self, x, grad_out) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Gradient of Σ grad_out·Q(x) with respect to every weight and bias."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        grad_out = np.atleast_2d(np.asarray(grad_out, dtype=float))
        acts = self._forward(x)
        gw = [np.empty_like(w) for w in self.weights]
        gb = [np.empty_like(b) for b in self.biases]
        delta = grad_out
        for k in range(len(self.weights) - 1, -1, -1):
            gw[k] = acts[k].T @ delta
            gb[k] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (1.0 - acts[k] ** 2)
        return gw, gb

    def output_gradient(self, x, action: int):
        """∇θ Q(x, action)."""
        g = np.zeros(self.n_outputs)
        g[action] = 1.0
        return self.backward(x, g)

    def apply_update(self, gw, gb, step: float) -> None:
        for w, g in zip(self.weights, gw):
            w += step * g
        for b, g in zip(self.biases, gb):
            b += step * g

    def to_dict(self) -> dict:
        return {
            "format": "gridtariff-mlp",
            "version": 1,
            "activation": self.activation,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpNetwork":
        if d.get("format") != "gridtariff-mlp":
            raise GridTariffError("not a serialized network", code="invalid-model")
        return cls(d["layer_sizes"], weights=[np.array(w) for w in d["weights"]],
                   biases=[np.array(b) for b in d["biases"]])


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring; once full, new transitions overwrite the oldest slot."""

    def __init__(self, capacity: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.slots: list[Transition] = []
        self.pointer = 0

    def __len__(self) -> int:
        return len(self.slots)

    def store(self, t: Transition) -> None:
        if len(self.slots) < self.capacity:
            self.slots.append(t)
        else:
            self.slots[self.pointer] = t
        self.pointer = (self.pointer + 1) % self.capacity

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if len(self.slots) == 0 or n > len(self.slots):
            raise GridTariffError(f"cannot sample {n} from {len(self.slots)} stored transitions",
                                  code="buffer-underflow")
        idx = rng.choice(len(self.slots), size=n, replace=False)
        return [self.slots[i] for i in idx]

    def in_order(self) -> list[Transition]:
        """Stored transitions from oldest to newest."""
        if len(self.slots) < self.capacity:
            return list(self.slots)
        return self.slots[self.pointer:] + self.slots[:self.pointer]


def store(buffer: ReplayBuffer, transition: Transition) -> None:
    buffer.store(transition)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentConfig:
    epsilon: float = 0.1
    batch_size: int = 16
    buffer_capacity: int = 100
    update_period: int = 20
    gamma: float = 0.9
    learning_rate: float = 0.001
    steps_per_episode: int = 35
    episodes: int = 200
    rng_seed: int = 0
    hidden_sizes: tuple[int, ...] = (64, 64, 32, 32)
    section_scale: float = 0.1
    largest_td: bool = True

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size > self.buffer_capacity:
            raise ValueError("batch size must be in [1, buffer capacity]")
        if min(self.update_period, self.steps_per_episode, self.episodes) < 1:
            raise ValueError("periods and counts must be positive")
        if not (0.0 <= self.gamma <= 1.0 and self.learning_rate > 0):
            raise ValueError("need 0 <= gamma <= 1 and learning_rate > 0")
        if self.rng_seed < 0:
            raise ValueError("seed must be non-negative")


# ---------------------------------------------------------------------------
# Environment plumbing
# ---------------------------------------------------------------------------


def average_deviation(case: NetworkCase, solution: PowerFlowSolution) -> float:
    """Mean |U - U_spec| over PQ buses."""
    devs = [abs(v - b.v_spec) for b, v in zip(case.buses, solution.v_mag) if b.kind == PQ]
    if not devs:
        raise GridTariffError("no PQ buses", code="no-pq-bus")
    return float(math.fsum(devs) / len(devs))


def encode_state(case: NetworkCase, solution: PowerFlowSolution) -> np.ndarray:
    """Observation vector, layout version 1.

    Blocks, in order:
      10·(V_i - 1) per bus; P_load / base and Q_load / base per bus;
      10·(v_set - 1) per generator; 10·(tap - 1) per adjustable transformer;
      steps / steps_max per shunt bank.
    """
    base = case.base_mva
    parts = [
        10.0 * (np.asarray(solution.v_mag, dtype=float) - 1.0),
        np.array([b.p_load / base for b in case.buses]),
        np.array([b.q_load / base for b in case.buses]),
        np.array([10.0 * (g.v_set - 1.0) for g in case.generators]),
        np.array([10.0 * (case.branches[k].tap - 1.0) for k in case.adjustable_transformers()]),
        np.array([s.steps / s.steps_max if s.steps_max else 0.0 for s in case.shunt_banks]),
    ]
    return np.concatenate(parts)


def state_size(case: NetworkCase) -> int:
    return (3 * len(case.buses) + len(case.generators) + len(case.adjustable_transformers())
            + len(case.shunt_banks))


@dataclass(frozen=True)
class Action:
    kind: str  # "gen", "tap" or "shunt"
    index: int  # generator index, branch index, or shunt-bank index
    direction: int  # +1 or -1
    label: str


def action_set(case: NetworkCase) -> list[Action]:
    """Generators, then adjustable transformers, then shunt banks; + before - for each."""
    out = []
    for k, g in enumerate(case.generators):
        for d in (1, -1):
            out.append(Action("gen", k, d, f"gen@{g.bus} {'+' if d > 0 else '-'}{GEN_STEP_PU}"))
    for k in case.adjustable_transformers():
        br = case.branches[k]
        for d in (1, -1):
            out.append(Action("tap", k, d, f"tap {br.from_bus}-{br.to_bus} {d:+d}"))
    for k, s in enumerate(case.shunt_banks):
        for d in (1, -1):
            out.append(Action("shunt", k, d, f"shunt@{s.bus} {d:+d}"))
    return out


def apply_action(case: NetworkCase, action: Action) -> NetworkCase:
    """New case with one control moved one step; raises InvalidActionError outside bounds."""
    if action.kind == "gen":
        g = case.generators[action.index]
        bus = case.bus(g.bus)
        v = round(g.v_set + action.direction * GEN_STEP_PU, 10)
        if not bus.v_min - 1e-12 <= v <= bus.v_max + 1e-12:
            raise InvalidActionError(f"{action.label}: setpoint {v} outside [{bus.v_min}, {bus.v_max}]")
        return case.with_generator(action.index, v_set=v)
    if action.kind == "tap":
        br = case.branches[action.index]
        t = round(br.tap + action.direction * br.tap_step, 10)
        if not br.tap_min - 1e-12 <= t <= br.tap_max + 1e-12:
            raise InvalidActionError(f"{action.label}: tap {t} outside [{br.tap_min}, {br.tap_max}]")
        return case.with_branch(action.index, tap=t)
    if action.kind == "shunt":
        s = case.shunt_banks[action.index]
        n = s.steps + action.direction
        if not 0 <= n <= s.steps_max:
            raise InvalidActionError(f"{action.label}: steps {n} outside [0, {s.steps_max}]")
        return case.with_shunt(action.index, steps=n)
    raise InvalidActionError(f"unknown action kind {action.kind!r}")


def valid_mask(case: NetworkCase, actions: Sequence[Action]) -> np.ndarray:
    mask = np.zeros(len(actions), dtype=bool)
    for i, a in enumerate(actions):
        try:
            apply_action(case, a)
        except InvalidActionError:
            continue
        mask[i] = True
    return mask


def reward(dev_before: float, dev_after: float) -> float:
    return dev_before - dev_after


def select_action(net: MlpNetwork, state, epsilon: float, rng: np.random.Generator,
                  mask: np.ndarray | None = None) -> int:
    """ε-greedy choice among valid actions; greedy ties go to the lowest index.

    One uniform draw decides explore/exploit; exploring draws a second uniform
    index over the valid actions.  With ε = 0 no random numbers are consumed.
    """
    q = net.forward(state)
    valid = np.flatnonzero(np.ones(len(q), bool) if mask is None else mask)
    if valid.size == 0:
        raise InvalidActionError("no valid actions")
    if epsilon > 0 and rng.random() < epsilon:
        return int(valid[rng.integers(valid.size)])
    return int(valid[np.argmax(q[valid])])


def _solve(case: NetworkCase) -> PowerFlowSolution | None:
    try:
        sol = solve_newton(case)
    except SingularJacobianError:
        return None
    return sol if sol.converged else None


def perturb_section(case: NetworkCase, scale: float, rng: np.random.Generator,
                    max_retries: int = 20) -> NetworkCase:
    """Scale every bus load: P and Q each by (1 + scale·u), u ~ U[0, 1] drawn independently.

    Draws that leave the case unsolvable are discarded and redrawn.
    """
    if not math.isfinite(scale):
        raise ValueError("scale must be finite")
    if scale == 0:
        return case
    for _ in range(max_retries):
        u = rng.random((len(case.buses), 2))
        buses = tuple(replace(b, p_load=b.p_load * (1.0 + scale * u[i, 0]),
                              q_load=b.q_load * (1.0 + scale * u[i, 1]))
                      for i, b in enumerate(case.buses))
        trial = replace(case, buses=buses).validate()
        if _solve(trial) is not None:
            return trial
    raise ConvergenceError(f"no solvable section after {max_retries} draws at scale {scale}")


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------


def td_targets(batch: Sequence[Transition], target_net: MlpNetwork, gamma: float) -> np.ndarray:
    """r for terminal transitions, r + γ max_a' Q_target(s', a') otherwise."""
    rewards = np.array([t.reward for t in batch])
    nxt = target_net.forward(np.stack([t.next_state for t in batch])).max(axis=1)
    terminal = np.array([t.terminal for t in batch])
    return np.where(terminal, rewards, rewards + gamma * nxt)


def train_step(buffer: ReplayBuffer, net: MlpNetwork, target_net: MlpNetwork,
               config: AgentConfig, rng: np.random.Generator) -> float:
    """One gradient update from a uniform minibatch; returns the squared TD error used.

    Default mode updates only on the sampled transition with the largest TD
    target; ``config.largest_td = False`` averages over the whole minibatch.
    """
    batch = buffer.sample(config.batch_size, rng)
    y = td_targets(batch, target_net, config.gamma)
    states = np.stack([t.state for t in batch])
    actions = np.array([t.action for t in batch])
    q = net.forward(states)[np.arange(len(batch)), actions]
    if config.largest_td:
        j = int(np.argmax(y))
        err = y[j] - q[j]
        gw, gb = net.output_gradient(states[j], int(actions[j]))
        net.apply_update(gw, gb, config.learning_rate * err)
        return float(err * err)
    err = y - q
    grad_out = np.zeros((len(batch), net.n_outputs))
    grad_out[np.arange(len(batch)), actions] = err / len(batch)
    gw, gb = net.backward(states, grad_out)
    net.apply_update(gw, gb, config.learning_rate)
    return float(np.mean(err * err))


@dataclass(frozen=True)
class StepRecord:
    episode: int
    step: int
    action: int
    dev_before: float
    dev_after: float
    reward: float
    loss: float | None


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    initial_deviation: float
    final_deviation: float
    mean_deviation: float
    steps: int
    aborted: bool


@dataclass
class TrainingLog:
    steps: list[StepRecord] = field(default_factory=list)
    episodes: list[EpisodeRecord] = field(default_factory=list)
    target_updates: list[int] = field(default_factory=list)  # global step indices

    def final_deviations(self) -> list[float]:
        """Average deviation at the end of each learning (episode)."""
        return [e.final_deviation for e in self.episodes]

    def episode_trajectory(self, episode: int) -> list[float]:
        return [s.dev_after for s in self.steps if s.episode == episode]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAINING_CSV_COLUMNS)
        for s in self.steps:
            w.writerow([s.episode, s.step, repr(s.dev_before), repr(s.dev_after), repr(s.reward),
                        "" if s.loss is None else repr(s.loss)])
        return buf.getvalue()


TRAINING_CSV_COLUMNS = ("episode", "step", "dev_before", "dev_after", "reward", "loss")


def new_network(case: NetworkCase, config: AgentConfig, rng: np.random.Generator) -> MlpNetwork:
    sizes = (state_size(case), *config.hidden_sizes, len(action_set(case)))
    return MlpNetwork(sizes, rng)


def train(case: NetworkCase, config: AgentConfig = AgentConfig(),
          net: MlpNetwork | None = None) -> tuple[MlpNetwork, TrainingLog]:
    """Run ``config.episodes`` learnings, each from a freshly perturbed section.

    A step is terminal at the end of the episode or when the power flow
    diverges; a divergent step aborts the episode (stored as a terminal
    transition with the deviation unchanged) and training continues.
    """
    rng = np.random.default_rng(config.rng_seed)
    actions = action_set(case)
    if net is None:
        net = new_network(case, config, rng)
    target = net.copy()
    buffer = ReplayBuffer(config.buffer_capacity)
    log = TrainingLog()
    global_step = 0
    for ep in range(config.episodes):
        section = perturb_section(case, config.section_scale, rng)
        sol = _solve(section)
        dev = average_deviation(section, sol)
        initial, devs, aborted = dev, [], False
        state = encode_state(section, sol)
        for step in range(1, config.steps_per_episode + 1):
            a = select_action(net, state, config.epsilon, rng, valid_mask(section, actions))
            candidate = apply_action(section, actions[a])
            new_sol = _solve(candidate)
            global_step += 1
            if new_sol is None:
                buffer.store(Transition(state, a, 0.0, state, True))
                aborted = True
            else:
                new_dev = average_deviation(candidate, new_sol)
                r = reward(dev, new_dev)
                new_state = encode_state(candidate, new_sol)
                terminal = step == config.steps_per_episode
                buffer.store(Transition(state, a, r, new_state, terminal))
            loss = train_step(buffer, net, target, config, rng) if len(buffer) >= config.batch_size else None
            if global_step % config.update_period == 0:
                target.copy_from(net)
                log.target_updates.append(global_step)
            if aborted:
                break
            log.steps.append(StepRecord(ep, step, a, dev, new_dev, r, loss))
            devs.append(new_dev)
            section, sol, dev, state = candidate, new_sol, new_dev, new_state
        log.episodes.append(EpisodeRecord(ep, initial, dev, float(np.mean(devs)) if devs else dev,
                                          len(devs), aborted))
    return net, log


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TestResult:
    test: int
    action: int | None
    dev_before: float | None
    dev_after: float | None
    p_loss_before: float | None
    p_loss_after: float | None
    q_loss_before: float | None
    q_loss_after: float | None
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error

    @property
    def success(self) -> bool:
        return self.ok and self.dev_after < self.dev_before


@dataclass(frozen=True)
class EvaluationReport:
    results: tuple[TestResult, ...]

    def ok(self) -> list[TestResult]:
        return [r for r in self.results if r.ok]

    def mean_before(self) -> float:
        return float(np.mean([r.dev_before for r in self.ok()]))

    def mean_after(self) -> float:
        return float(np.mean([r.dev_after for r in self.ok()]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVAL_CSV_COLUMNS)
        for r in self.results:
            w.writerow([r.test, "" if r.action is None else r.action] +
                       ["" if v is None else repr(v) for v in
                        (r.dev_before, r.dev_after, r.p_loss_before, r.p_loss_after,
                         r.q_loss_before, r.q_loss_after)] + [r.error])
        return buf.getvalue()


EVAL_CSV_COLUMNS = ("test", "action", "dev_before", "dev_after", "p_loss_before", "p_loss_after",
                    "q_loss_before", "q_loss_after", "error")


def _one_test(net, case, actions, scale, k, seed_seq) -> TestResult:
    rng = np.random.default_rng(seed_seq)
    try:
        section = perturb_section(case, scale, rng)
    except ConvergenceError as exc:
        return TestResult(k, None, None, None, None, None, None, None, exc.code)
    sol = _solve(section)
    dev = average_deviation(section, sol)
    a = select_action(net, encode_state(section, sol), 0.0, rng, valid_mask(section, actions))
    after_case = apply_action(section, actions[a])
    after = _solve(after_case)
    if after is None:
        return TestResult(k, a, dev, None, sol.total_loss_p, None, sol.total_loss_q, None,
                          "non-convergence")
    return TestResult(k, a, dev, average_deviation(after_case, after), sol.total_loss_p,
                      after.total_loss_p, sol.total_loss_q, after.total_loss_q)


def evaluate(net: MlpNetwork, case: NetworkCase, n_tests: int, scale: float,
             rng: np.random.Generator, jobs: int = 1) -> EvaluationReport:
    """Greedy one-action tests on independently perturbed sections.

    Each test gets its own child seed spawned from one draw of ``rng``, so the
    report does not depend on ``jobs``.
    """
    actions = action_set(case)
    children = np.random.SeedSequence(int(rng.integers(2 ** 63))).spawn(n_tests)
    args = [(net, case, actions, scale, k, children[k]) for k in range(n_tests)]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda a: _one_test(*a), args))
    else:
        results = [_one_test(*a) for a in args]
    return EvaluationReport(tuple(results))


def sign_test_p_value(before: Sequence[float], after: Sequence[float]) -> float:
    """One-sided exact sign test for 'after < before'; ties are dropped."""
    diffs = [b - a for b, a in zip(before, after) if b != a]
    n = len(diffs)
    if n == 0:
        return 1.0
    k = sum(1 for d in diffs if d > 0)
    return math.fsum(math.comb(n, i) for i in range(k, n + 1)) / 2.0 ** n


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(net: MlpNetwork, case: NetworkCase, config: AgentConfig) -> str:
    d = net.to_dict()
    d["state_layout_version"] = STATE_LAYOUT_VERSION
    d["actions"] = [a.label for a in action_set(case)]
    d["config"] = {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in config.__dict__.items()}
    return json.dumps(d, sort_keys=True)


def load_model(text: str, case: NetworkCase | None = None) -> MlpNetwork:
    d = json.loads(text)
    if d.get("state_layout_version") not in (None, STATE_LAYOUT_VERSION):
        raise GridTariffError("unsupported state layout version", code="invalid-model")
    net = MlpNetwork.from_dict(d)
    if case is not None and (net.layer_sizes[0] != state_size(case)
                             or net.n_outputs != len(action_set(case))):
        raise GridTariffError("model does not match the case layout", code="invalid-model")
    return net
