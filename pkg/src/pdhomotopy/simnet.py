"""
Synchronous message-passing simulation of the homotopy method.

Each agent owns its multiplier and primal blocks and knows only its own
data point, the mixing weights to its neighbors and the globally shared
schedule (mu_k, T, theta_t). One PDS iteration is two exchange phases:

1. every agent sends its tentative multiplier block to its neighbors, then
   computes its primal block from its inbox alone;
2. every agent sends its primal block to its neighbors, then updates its
   multiplier from its inbox alone.

Agent step functions take ``(agent, inbox)`` and nothing else.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .geomedian import make_problem, prox_block
from .solver import HomotopyTrace, MetricRecorder, OracleError, dual_step_size, theta_next


class SimulationError(RuntimeError):
    """A message was addressed along a non-edge, or the protocol was broken."""


@dataclass(frozen=True)
class RoundMessage:
    sender: int
    to: int
    payload: np.ndarray


@dataclass
class AgentState:
    """What agent ``id`` knows. ``weights`` maps neighbor id (self included) to w_ij."""

    id: int
    point: np.ndarray
    radius: float
    weights: dict
    lambda_curr: np.ndarray
    lambda_prev: np.ndarray
    lambda_hat: np.ndarray
    x_local: np.ndarray
    x_anchor: np.ndarray
    avg_accum_local: np.ndarray
    weight_accum: float = 0.0
    inbox: dict = field(default_factory=dict)

    @property
    def neighbors(self):
        return sorted(self.weights)

    @property
    def x_bar(self):
        return self.avg_accum_local / self.weight_accum


def _mix_residual(agent, inbox):
    """``v_i - sum_j w_ij v_j`` over the inbox, ascending neighbor id."""
    if set(inbox) != set(agent.weights):
        raise SimulationError(
            f"agent {agent.id} inbox {sorted(inbox)} != neighbors {agent.neighbors}")
    acc = np.zeros_like(inbox[agent.id])
    for j in sorted(inbox):
        acc = acc + agent.weights[j] * inbox[j]
    return inbox[agent.id] - acc


def start_stage(agent, lambda_init, anchor):
    agent.lambda_curr = lambda_init.copy()
    agent.lambda_prev = lambda_init.copy()
    agent.x_anchor = anchor.copy()
    agent.avg_accum_local = np.zeros_like(anchor)
    agent.weight_accum = 0.0


def tentative_step(agent, theta, theta_prev):
    """Local extrapolation; no communication."""
    coef = theta * (1.0 / theta_prev - 1.0)
    agent.lambda_hat = agent.lambda_curr + coef * (agent.lambda_curr - agent.lambda_prev)
    return agent.lambda_hat


def primal_step(agent, inbox, mu):
    """Primal block from the neighbors' tentative multipliers.

    Uses ``sum_j W_ji lambda_hat_j = lambda_hat_i - sum_j w_ji lambda_hat_j``
    and ``w_ji = w_ij``.
    """
    a = agent.x_anchor - _mix_residual(agent, inbox) / mu
    agent.x_local = prox_block(a, agent.point, mu, agent.radius)
    return agent.x_local


def dual_step(agent, inbox, step, theta):
    """Multiplier update from the neighbors' primal blocks, plus averaging."""
    agent.lambda_prev, agent.lambda_curr = (
        agent.lambda_curr, agent.lambda_hat + step * _mix_residual(agent, inbox))
    inv = 1.0 / theta
    agent.avg_accum_local = agent.avg_accum_local + inv * agent.x_local
    agent.weight_accum += inv
    return agent.lambda_curr


class Network:
    """Synchronous, ordered message delivery restricted to graph edges."""

    def __init__(self, graph, log=None):
        self.graph = graph
        self.log = log
        self.messages_sent = 0
        self.round = 0

    def exchange(self, phase, payloads):
        """Each agent sends ``payloads[i]`` to every neighbor; returns the inboxes.

        An agent's own value lands in its own inbox without a message.
        """
        n = self.graph.n
        inboxes = [{i: payloads[i]} for i in range(n)]
        for i in range(n):
            for j in self.graph.neighbors(i, include_self=False):
                self.send(phase, RoundMessage(i, j, payloads[i]), inboxes)
        return inboxes

    def send(self, phase, msg, inboxes):
        if msg.sender == msg.to or not self.graph.adjacency[msg.sender, msg.to]:
            raise SimulationError(f"no edge {msg.sender} -> {msg.to}")
        inboxes[msg.to][msg.sender] = msg.payload
        self.messages_sent += 1
        if self.log is not None:
            self.log.append((self.round, phase, msg.sender, msg.to,
                             float(np.linalg.norm(msg.payload))))


def make_agents(instance):
    w = instance.mixing.entries
    agents = []
    for i in range(instance.n):
        zero = np.zeros(instance.d)
        agents.append(AgentState(
            id=i, point=instance.points[i].copy(), radius=instance.radius_D,
            weights={j: float(w[i, j]) for j in instance.graph.neighbors(i)},
            lambda_curr=zero, lambda_prev=zero, lambda_hat=zero,
            x_local=instance.points[i].copy(), x_anchor=instance.points[i].copy(),
            avg_accum_local=zero))
    return agents


def run_distributed(instance, config, reference_x=None, dual_evaluator=None,
                    message_log=None, wall_clock=True, sigma_max=None,
                    algorithm="homotopy"):
    """Homotopy method executed by message-passing agents.

    ``config`` is a :class:`~pdhomotopy.solver.HomotopyConfig`. Metrics are
    taken by an outside monitor that reads the agents' averages; the agents
    never see global state. ``message_log`` (a list) receives
    ``(round, phase, from, to, payload_norm)`` tuples.
    """
    problem = make_problem(instance, sigma_max=sigma_max)
    sched = config.resolve(problem)
    rec = MetricRecorder(problem, reference_x, dual_evaluator, algorithm,
                         sched.observe_every, wall_clock)
    net = Network(instance.graph, log=message_log)
    agents = make_agents(instance)
    trace = HomotopyTrace(algorithm=algorithm, schedule=sched,
                          meta={"step_size_mode": sched.step_size_mode,
                                "epsilon0": sched.epsilon0,
                                "num_stages": sched.num_stages,
                                "execution": "distributed"})
    lam_blocks = [np.zeros(instance.d) for _ in agents]
    anchors = [a.point.copy() for a in agents]
    offset = 0
    for k, (mu, T) in enumerate(zip(sched.mus, sched.horizons), start=1):
        step = dual_step_size(problem, mu, sched.step_size_mode)
        for agent, lam0, anchor in zip(agents, lam_blocks, anchors):
            start_stage(agent, lam0, anchor)
        theta_prev = theta = 1.0
        for t in range(T):
            net.round += 1
            hats = [tentative_step(a, theta, theta_prev) for a in agents]
            inboxes = net.exchange("lambda_hat", hats)
            xs = [primal_step(a, inboxes[a.id], mu) for a in agents]
            if not all(np.all(np.isfinite(x)) for x in xs):
                raise OracleError("non-finite primal block", t, stage=k)
            inboxes = net.exchange("x", xs)
            for a in agents:
                dual_step(a, inboxes[a.id], step, theta)
            theta_prev, theta = theta, theta_next(theta)
            if rec.due():
                x_bar = np.stack([a.x_bar for a in agents])
                lam = np.stack([a.lambda_curr for a in agents])
                rec.record(k, offset + t, mu, x_bar, lam)
        lam_blocks = [a.lambda_curr for a in agents]
        anchors = [a.x_bar for a in agents]
        trace.stage_x.append(np.stack(anchors))
        trace.stage_lambda.append(np.stack(lam_blocks))
        offset += T
    trace.records = rec.records
    trace.final_x = trace.stage_x[-1]
    trace.final_lambda = trace.stage_lambda[-1]
    trace.meta["messages_sent"] = net.messages_sent
    return trace


def write_message_log(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("round", "phase", "from", "to", "payload_norm"))
        for row in log:
            w.writerow([*row[:4], repr(row[4])])
