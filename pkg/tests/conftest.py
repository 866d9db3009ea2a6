import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {outcome}", flush=True)

from nvlab.agents import AgentSpec
from nvlab.model import ScenarioConfig, profit, scenario
from nvlab.prompts import RoundContext, default_templates, render_prompt
from nvlab.runner import ExperimentPlan, PlanCondition, build_manifest
from nvlab.store import RoundRecord, RunStore, Trajectory, sha256_text


class StubChatServer(ThreadingHTTPServer):
    """Local chat-completions endpoint with scriptable failure modes.

    mode:
      "ok"          -- always answer
      "flaky"       -- alternate 429 / 200, i.e. one rate-limit failure per
                       logical request when the client retries once
      "always-429"  -- rate-limit every request
      "unauthorized"-- reject every request with 401
    """

    daemon_threads = True

    def __init__(self):
        super().__init__(("127.0.0.1", 0), _StubHandler)
        self.mode = "ok"
        self.reply_fn = lambda body: "After weighing the trade-off, I will order 150 wodgets."
        self.requests = []
        self.counter = 0
        self.lock = threading.Lock()

    @property
    def url(self):
        host, port = self.server_address
        return f"http://{host}:{port}/v1/chat/completions"


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        with self.server.lock:
            self.server.requests.append(body)
            self.server.counter += 1
            count = self.server.counter
        mode = self.server.mode
        if mode == "unauthorized":
            self._send_status(401)
            return
        if mode == "always-429" or (mode == "flaky" and count % 2 == 1):
            self._send_status(429)
            return
        text = self.server.reply_fn(body)
        payload = json.dumps(
            {
                "choices": [{"message": {"role": "assistant", "content": text}}],
                "usage": {"prompt_tokens": 42, "completion_tokens": 17, "total_tokens": 59},
            }
        ).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_status(self, code):
        self.send_response(code)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = StubChatServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


def make_trajectory(sc: ScenarioConfig, orders, demands, agent="test-agent",
                    order_condition="high-first", repetition=0, block_index=1) -> Trajectory:
    """In-memory trajectory with consistent profit accounting, for metric tests."""
    records = []
    cumulative = 0
    for t, (order, demand) in enumerate(zip(orders, demands), start=1):
        pi = profit(order, demand, sc.cost)
        cumulative += pi
        records.append(
            RoundRecord(
                run_id="test",
                condition_index=0,
                agent=agent,
                experiment=sc.experiment,
                dist=sc.demand.kind,
                order_condition=order_condition,
                repetition=repetition,
                block_index=block_index,
                margin=sc.margin,
                round_index=t,
                order=order,
                demand=demand,
                profit=pi,
                cumulative_profit=cumulative,
                parse_confidence="exact",
                prompt_sha256="",
                raw_response="",
            )
        )
    return Trajectory(
        run_id="test",
        condition_index=0,
        agent=agent,
        order_condition=order_condition,
        repetition=repetition,
        block_index=block_index,
        scenario=sc,
        records=records,
        expected_rounds=len(records),
    )


def integer_mix(mean: float, n: int) -> list[int]:
    """n integers whose mean is exactly ``mean`` (needs frac(mean) * n integral)."""
    base = math.floor(mean)
    k = round((mean - base) * n)
    assert abs((mean - base) * n - k) < 1e-6, f"mean {mean} not reachable with {n} integers"
    return [base + 1] * k + [base] * (n - k)


def write_replay_store(run_dir, rows, reps=10, rounds=10):
    """Synthesize a valid run store whose per-margin mean orders are pinned.

    ``rows`` is a list of (dist_kind, agent_label, mean_high, mean_low); each
    row becomes one condition with constant-demand rounds (demand == order,
    so profits and prompt hashes stay honest).
    """
    conditions = tuple(
        PlanCondition("E1-baseline", dist, AgentSpec("optimal"), "high-first",
                      repetitions=reps, rounds_per_block=rounds, base_seed=0)
        for dist, _, _, _ in rows
    )
    plan = ExperimentPlan(conditions)
    store = RunStore(run_dir)
    store.create(build_manifest(plan, default_templates()))
    for condition_index, (dist, label, mean_high, mean_low) in enumerate(rows):
        for block_index, mean in ((1, mean_high), (2, mean_low)):
            margin = "high" if block_index == 1 else "low"
            sc = scenario("E1-baseline", margin, dist, rounds)
            orders = integer_mix(mean, reps * rounds)
            position = 0
            for repetition in range(reps):
                cumulative = 0
                last = None
                for round_index in range(1, rounds + 1):
                    order = orders[position]
                    position += 1
                    demand = order
                    pi = profit(order, demand, sc.cost)
                    cumulative += pi
                    if round_index == 1:
                        ctx = RoundContext(sc, 1)
                    else:
                        ctx = RoundContext(sc, round_index, last_order=last.order,
                                           last_demand=last.demand, last_profit=last.profit,
                                           cumulative_profit=last.cumulative_profit)
                    record = RoundRecord(
                        run_id=plan.run_id(),
                        condition_index=condition_index,
                        agent=label,
                        experiment="E1-baseline",
                        dist=dist,
                        order_condition="high-first",
                        repetition=repetition,
                        block_index=block_index,
                        margin=margin,
                        round_index=round_index,
                        order=order,
                        demand=demand,
                        profit=pi,
                        cumulative_profit=cumulative,
                        parse_confidence="exact",
                        prompt_sha256=sha256_text(render_prompt(ctx)),
                        raw_response=f"replay fixture: constant order {order}",
                    )
                    store.append(record)
                    last = record
    return plan
