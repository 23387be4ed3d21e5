"""KEX/s and transfer benchmarks: split engine + crypto service against the monolithic baseline.

Client and engine talk in-process; only the engine to crypto service hop
uses the configured channel, so the numbers isolate the cost of the split.
"""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

from .client import ClientConnection, Ticket
from .codec import Group, SignatureScheme
from .config import PSK_ROWS, ROW_NAMES, CsConfig, Mode
from .engine import Engine
from .harness import build_baseline, build_stack, format_tsv, run_handshake
from .identity import SigningIdentity

BASELINE = "baseline"
WARMUP = 10


class SuiteMismatch(ValueError):
    pass


class TargetUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchSuite:
    name: str
    group: Group
    scheme: SignatureScheme


SUITES = {s.name: s for s in (
    BenchSuite("P-256", Group.SECP256R1, SignatureScheme.ECDSA_SECP256R1_SHA256),
    BenchSuite("P-384", Group.SECP384R1, SignatureScheme.ECDSA_SECP384R1_SHA384),
    BenchSuite("Ed25519", Group.X25519, SignatureScheme.ED25519),
    BenchSuite("Ed448", Group.X448, SignatureScheme.ED448),
)}


def bench_suite(name: str) -> BenchSuite:
    try:
        return SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}") from None


@dataclass(frozen=True)
class BenchResult:
    suite: str
    config: str
    kex_per_sec: float
    count: int
    wall: float
    channel: str = "inprocess"
    resumed: bool = False
    parallel: int = 1

    @classmethod
    def from_run(cls, suite: str, config: str, count: int, wall: float, **kw) -> BenchResult:
        return cls(suite, config, count / wall if wall > 0 else 0.0, count, wall, **kw)


def delta_kex(baseline: BenchResult, split: BenchResult) -> float:
    """|KEX_split - KEX_baseline| / KEX_baseline, as a percentage."""
    if baseline.suite != split.suite:
        raise SuiteMismatch(f"baseline suite {baseline.suite} differs from {split.suite}")
    if baseline.resumed != split.resumed:
        raise SuiteMismatch("comparing a resumed run with a full-handshake run")
    return relative_delta(baseline.kex_per_sec, split.kex_per_sec)


def relative_delta(base: float, other: float) -> float:
    if base <= 0:
        raise SuiteMismatch("baseline rate is zero")
    return abs(other - base) * 100 / base


# -- targets -------------------------------------------------------------------------------

class _Target:
    """An engine for one benchmark cell, plus a ticket when the cell measures resumption."""

    def __init__(self, config: str, suite: BenchSuite, channel: str, identity: SigningIdentity,
                 resumed: Optional[bool] = None, app: Optional[Callable[[bytes], bytes]] = None) -> None:
        self.resumed = resumed if resumed is not None else config in PSK_ROWS
        self.suite = suite
        self.anchor = identity.cert_chain[0]
        self.stack = None
        kw = {"app": app} if app is not None else {}
        if config == BASELINE:
            self.engine: Engine = build_baseline(identity, resumption=self.resumed, **kw)
        else:
            row = CsConfig.from_name(config)
            if self.resumed != (row.mode is Mode.PSK):
                raise TargetUnavailable(f"{config} cannot run {'resumed' if self.resumed else 'full'} handshakes")
            cert, psk = (config, None) if row.mode is Mode.CERT else ("cs_cert_dhe_r", config)
            try:
                self.stack = build_stack(cert, psk, identity=identity, channel=channel, engine_kwargs=kw)
            except OSError as exc:
                raise TargetUnavailable(str(exc)) from None
            self.engine = self.stack.engine
        self.ticket: Optional[Ticket] = None
        if self.resumed:
            c = self.handshake()
            if not c.tickets:
                raise TargetUnavailable(f"{config} issued no ticket")
            self.ticket = c.tickets[-1]

    def handshake(self) -> ClientConnection:
        client = ClientConnection(self.anchor, group=self.suite.group, ticket=self.ticket)
        sess = self.engine.session()
        try:
            run_handshake(client, sess)
        except Exception as exc:
            raise TargetUnavailable(f"handshake failed: {type(exc).__name__}: {exc}") from None
        if not client.completed or (self.ticket is not None and not client.resumed):
            raise TargetUnavailable("handshake did not complete as planned")
        self.session = sess
        return client

    def close(self) -> None:
        if self.stack is not None:
            self.stack.close()


def _timed(fn: Callable[[], object], n: int, parallel: int) -> float:
    if parallel <= 1:
        start = time.perf_counter()
        for _ in range(n):
            fn()
        return time.perf_counter() - start
    shares = [n // parallel + (1 if i < n % parallel else 0) for i in range(parallel)]
    start = time.perf_counter()
    with ThreadPoolExecutor(parallel) as pool:
        for fut in [pool.submit(lambda k: [fn() for _ in range(k)], k) for k in shares]:
            fut.result()
    return time.perf_counter() - start


def measure_kex(target: str, suite: str | BenchSuite = "Ed25519", n: int = 1000, channel: str = "inprocess",
                parallel: int = 1, identity: Optional[SigningIdentity] = None,
                resumed: Optional[bool] = None) -> BenchResult:
    """``n`` closed-loop handshakes against ``target`` (a configuration row or ``baseline``).

    PSK rows measure resumed handshakes with a ticket from a prior full
    handshake; the baseline does the same when ``resumed`` is set.
    """
    if target != BASELINE and target not in ROW_NAMES:
        raise TargetUnavailable(f"unknown target {target!r}")
    s = suite if isinstance(suite, BenchSuite) else bench_suite(suite)
    identity = identity or SigningIdentity.generate(s.scheme)
    t = _Target(target, s, channel, identity, resumed)
    try:
        for _ in range(min(WARMUP, n)):
            t.handshake()
        wall = _timed(t.handshake, n, parallel)
    finally:
        t.close()
    return BenchResult.from_run(s.name, target, n, wall, channel=channel, resumed=t.resumed, parallel=parallel)


@dataclass
class KexReport:
    results: list[BenchResult]

    def baseline_for(self, r: BenchResult) -> BenchResult:
        for b in self.results:
            if b.config == BASELINE and b.suite == r.suite and b.resumed == r.resumed:
                return b
        raise SuiteMismatch(f"no baseline for {r.suite} ({'resumed' if r.resumed else 'full'})")

    def deltas(self) -> dict[tuple[str, str], float]:
        return {(r.suite, r.config): delta_kex(self.baseline_for(r), r)
                for r in self.results if r.config != BASELINE}

    def to_tsv(self) -> str:
        out = []
        for suite in dict.fromkeys(r.suite for r in self.results):
            rows = []
            for r in (r for r in self.results if r.suite == suite):
                name = r.config if r.config != BASELINE else f"baseline_{'psk' if r.resumed else 'cert'}"
                d = "-" if r.config == BASELINE else f"{delta_kex(self.baseline_for(r), r):.1f}"
                rows.append((name, r.channel, f"{r.kex_per_sec:.1f}", d))
            out.append(f"# suite {suite}\n" + format_tsv(("config", "channel", "KEX/s", "delta_pct"), rows))
        return "\n".join(out)


def run_kex_report(suites: Sequence[str] = ("Ed25519", "P-256"), configs: Sequence[str] = ROW_NAMES,
                   n: int = 1000, channel: str = "inprocess", parallel: int = 1,
                   progress: Optional[Callable[[BenchResult], None]] = None) -> KexReport:
    results = []
    for name in suites:
        s = bench_suite(name)
        identity = SigningIdentity.generate(s.scheme)
        cells = [(BASELINE, False)]
        if any(c in PSK_ROWS for c in configs):
            cells.append((BASELINE, True))
        cells += [(c, None) for c in configs]
        for config, resumed in cells:
            r = measure_kex(config, s, n, channel, parallel, identity, resumed)
            results.append(r)
            if progress:
                progress(r)
    return KexReport(results)


# -- transfer ------------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferPoint:
    size: int
    baseline_rps: float
    split_rps: float

    @property
    def delta(self) -> float:
        return relative_delta(self.baseline_rps, self.split_rps)


@dataclass
class TransferReport:
    suite: str
    config: str
    points: list[TransferPoint]

    def trend_ok(self) -> bool:
        """Δ at the smallest size exceeds Δ at the largest (handshake cost amortized away)."""
        return self.points[0].delta > self.points[-1].delta

    def to_tsv(self) -> str:
        rows = [(p.size, f"{p.baseline_rps:.1f}", f"{p.split_rps:.1f}", f"{p.delta:.1f}") for p in self.points]
        return (f"# transfer {self.suite} {self.config}\n"
                + format_tsv(("bytes", "baseline_req_s", "split_req_s", "delta_pct"), rows))


def measure_transfer(file_size: int, target: str, suite: str | BenchSuite = "Ed25519", n: int = 50,
                     channel: str = "inprocess", identity: Optional[SigningIdentity] = None,
                     repeats: int = 1) -> float:
    """Requests per second where each request is a full handshake then a ``file_size`` download.

    With ``repeats`` > 1 the median rate over the repeats is returned.
    """
    s = suite if isinstance(suite, BenchSuite) else bench_suite(suite)
    identity = identity or SigningIdentity.generate(s.scheme)
    t = _Target(target, s, channel, identity, resumed=False)
    request = f"GET {file_size}".encode()

    def one() -> None:
        c = t.handshake()
        c.receive(t.session.receive(c.send_application(request)))
        if len(c.app_data) != file_size:
            raise TargetUnavailable(f"expected {file_size} bytes, got {len(c.app_data)}")

    try:
        for _ in range(min(WARMUP, n)):
            one()
        rates = [n / _timed(one, n, 1) for _ in range(repeats)]
    finally:
        t.close()
    return statistics.median(rates)


def run_transfer_report(sizes: Iterable[int] = (0, 64 * 1024, 1 << 20), config: str = "cs_cert_dhe_r",
                        suite: str = "Ed25519", n: int = 30, repeats: int = 3,
                        channel: str = "inprocess") -> TransferReport:
    s = bench_suite(suite)
    identity = SigningIdentity.generate(s.scheme)
    points = []
    for size in sizes:
        base, split = [], []
        # alternate the two targets so drift on the machine hits both alike
        for _ in range(repeats):
            base.append(measure_transfer(size, BASELINE, s, n, channel, identity))
            split.append(measure_transfer(size, config, s, n, channel, identity))
        points.append(TransferPoint(size, statistics.median(base), statistics.median(split)))
    return TransferReport(s.name, config, points)
