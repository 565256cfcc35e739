import pytest

from egalbft.config import ReplicaConfig
from egalbft.crypto import client_principal, make_scheme, replica_principal
from egalbft.replica import Replica
from egalbft.simnet import ClientSpec, SimConfig, simulate


@pytest.fixture
def scheme():
    return make_scheme("mac", [replica_principal(i) for i in range(4)] + [client_principal(0)])


def group(scheme, n=4, f=1, **kw):
    return [Replica(ReplicaConfig(id=i, n=n, f=f, **kw), scheme) for i in range(n)]


def run_clients(ops_per_client, homes=None, **cfg):
    """Simulate one closed-loop client per operation list."""
    homes = homes or list(range(len(ops_per_client)))
    clients = [ClientSpec(home=h, ops=ops) for h, ops in zip(homes, ops_per_client)]
    return simulate(SimConfig(**cfg), clients)


class Router:
    """Hand-driven message delivery among step-machine replicas."""

    def __init__(self, replicas, drop=lambda src, dest, env: False):
        self.replicas = replicas
        self.drop = drop
        self.queue = []
        self.now = 0.0
        self.armed = {}

    def absorb(self, src, effects):
        from egalbft.replica import Arm, Send
        for e in effects:
            if isinstance(e, Send) and not self.drop(src, e.dest, e.env):
                self.queue.append((src, e.dest, e.env))
            elif isinstance(e, Arm):
                self.armed.setdefault(src, set()).add(e.key)

    def inject(self, dest, src, env):
        self.absorb(dest, self.replicas[dest].step(self.now, ("message", src, env)))

    def fire(self, replica, key):
        self.absorb(replica, self.replicas[replica].step(self.now, ("timer", key)))

    def settle(self, limit=10_000):
        while self.queue and limit:
            limit -= 1
            src, dest, env = self.queue.pop(0)
            self.now += 1.0
            self.absorb(dest, self.replicas[dest].step(self.now, ("message", src, env)))


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call" or report.outcome == "failed":
        prev = _ACCEPTANCE.get(name)
        if prev != "FAIL":
            _ACCEPTANCE[name] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        number, _, rest = name[len("test_c"):].partition("_")
        label = f"C{int(number)} " + rest.replace("_", " ")
        terminalreporter.write_line(f"{_ACCEPTANCE[name]}  {label}")
