"""Session orchestration: initialization, then the select/build/dispatch/learn loop."""
from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .agents import Agents
from .engine import DEFAULT_TIMEOUT, HttpTransport, InProcessTransport, Transport, build_request, dispatch, maybe_mutate
from .learning import LearningConfig, epsilon_at
from .report import CoverageSummary, CoverageTracker, emit_report
from .semantics import EmbeddingTable, NameSimilarity, load_embeddings, load_fixture_embeddings
from .spdg import Spdg, SpdgConfig, build_spdg
from .spec_model import ApiSpec, load_spec, parse_spec
from .sut_sim import SimService, sim_spec_text
from .values import ChatCompletionsBackend, LlmClientConfig, LlmValueSource, StubBackend

logger = logging.getLogger(__name__)

ABLATIONS = ("learning", "spdg", "llm")
STUB_SEED = 0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    spec_path: str | None = None  # None selects the bundled simulated service
    base_url: str | None = None
    time_budget: float | None = 3600.0
    max_requests: int | None = None
    seed: int = 0
    mutation_rate: float = 0.2
    learning: LearningConfig = LearningConfig()
    spdg: SpdgConfig = SpdgConfig()
    llm: LlmClientConfig | None = None
    embeddings: str | None = None
    auth_header: str | None = None
    out_dir: str | None = None
    disable: frozenset[str] = frozenset()
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self):
        if self.time_budget is None and self.max_requests is None:
            raise ConfigError("set a time budget, a request limit, or both")
        if self.time_budget is not None and self.time_budget < 0:
            raise ConfigError("time budget must be non-negative")
        if self.max_requests is not None and self.max_requests < 0:
            raise ConfigError("max_requests must be non-negative")
        if not 0 <= self.mutation_rate <= 1:
            raise ConfigError("mutation rate must be in [0, 1]")
        unknown = set(self.disable) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"cannot disable {sorted(unknown)}; choose from {ABLATIONS}")
        if self.auth_header is not None and ":" not in self.auth_header:
            raise ConfigError("auth header must look like 'Name: value'")

    @property
    def simulated(self) -> bool:
        return self.spec_path is None


@dataclass
class Session:
    config: SessionConfig
    spec: ApiSpec
    table: EmbeddingTable
    transport: Transport
    spdg: Spdg = None
    agents: Agents = None
    tracker: CoverageTracker = None
    log: list[dict] = field(default_factory=list)

    @classmethod
    def create(cls, config: SessionConfig, transport: Transport | None = None) -> Session:
        spec = parse_spec(sim_spec_text(), "yaml") if config.simulated else load_spec(config.spec_path)
        table = load_embeddings(config.embeddings) if config.embeddings else load_fixture_embeddings()
        if transport is None:
            if config.base_url:
                transport = HttpTransport(config.base_url, config.timeout)
            elif config.simulated:
                transport = InProcessTransport(SimService(), config.timeout)
            elif spec.base_url:
                transport = HttpTransport(spec.base_url, config.timeout)
            else:
                raise ConfigError("no base URL: pass one or declare servers in the specification")
        session = cls(config, spec, table, transport)
        session._initialize()
        return session

    def _initialize(self) -> None:
        cfg = self.config
        rng = random.Random(cfg.seed)
        self.rng = rng
        self.spdg = build_spdg(self.spec, self.table, cfg.spdg)
        llm = None
        if "llm" not in cfg.disable:
            if cfg.llm is not None and cfg.llm.api_key:
                backend = ChatCompletionsBackend(cfg.llm)
            else:
                if cfg.llm is not None:
                    logger.warning("no API key in $%s; using the offline LLM stub", cfg.llm.api_key_env)
                backend = StubBackend(STUB_SEED)
            llm = LlmValueSource(backend)
        headers = {}
        if cfg.auth_header:
            name, value = cfg.auth_header.split(":", 1)
            headers[name.strip()] = value.strip()
        self.agents = Agents(
            self.spec,
            self.spdg,
            rng,
            learning=cfg.learning,
            llm=llm,
            similarity=NameSimilarity(self.table),
            learn="learning" not in cfg.disable,
            use_spdg="spdg" not in cfg.disable,
            extra_headers=headers,
        )
        self.tracker = CoverageTracker(self.spec.operation_ids)

    def _epsilon(self, sent: int, elapsed: float) -> float:
        cfg = self.config
        if cfg.max_requests:
            return epsilon_at(sent, cfg.max_requests, cfg.learning)
        return epsilon_at(elapsed, cfg.time_budget, cfg.learning)

    def step(self, seq: int, epsilon: float) -> dict:
        decision = self.agents.choose_plan(epsilon)
        sent = maybe_mutate(decision.plan, self.config.mutation_rate, self.rng)
        request = build_request(sent, self.spec)
        response = dispatch(request, self.transport)
        self.agents.apply_feedback(decision, sent, response)
        status = None if response.transport_error else response.status
        example = {"method": request.method, "target": request.target}
        if request.body is not None:
            example["body"] = request.body.decode("utf-8", "replace")
        self.tracker.observe(seq, decision.operation, status, response.body, sent.mutated, example)
        row = {
            "seq": seq,
            "operation": decision.operation,
            "mutated": sent.mutated,
            "mutation_kind": sent.mutation_kind.value if sent.mutation_kind else None,
            "status": status,
            "latency_ms": round(response.latency * 1000, 3),
            "sources": sent.sources(),
        }
        if response.error:
            row["error"] = response.error
        if status is not None and status >= 500:
            row["body"] = response.body
        self.log.append(row)
        return row

    def run(self) -> CoverageSummary:
        cfg = self.config
        start = time.monotonic()
        sent = 0
        while True:
            if cfg.max_requests is not None and sent >= cfg.max_requests:
                break
            elapsed = time.monotonic() - start
            if cfg.time_budget is not None and elapsed >= cfg.time_budget:
                break
            self.step(sent + 1, self._epsilon(sent, elapsed))
            sent += 1
        if cfg.out_dir:
            self.write(cfg.out_dir)
        return self.tracker.summary

    def write(self, out_dir: str | Path) -> list[Path]:
        return emit_report(self.tracker.summary, self.spdg, self.agents.qtables, out_dir, self.log)


def run_session(config: SessionConfig, transport: Transport | None = None) -> CoverageSummary:
    return Session.create(config, transport).run()


def run_ablation(config: SessionConfig, disable, transport: Transport | None = None) -> CoverageSummary:
    """Run with parts of the approach switched off: any of learning, spdg, llm."""
    return run_session(replace(config, disable=frozenset(disable)), transport)


def run_repeated(config: SessionConfig, repeat: int, parallel: bool = False) -> dict:
    """``repeat`` sessions reseeded as seed, seed+1, ...; writes per-run and aggregate reports."""
    configs = []
    for i in range(repeat):
        out = str(Path(config.out_dir) / f"run-{i + 1}") if config.out_dir else None
        configs.append(replace(config, seed=config.seed + i, out_dir=out))
    if parallel:
        with ThreadPoolExecutor(max_workers=repeat) as pool:
            summaries = list(pool.map(run_session, configs))
    else:
        summaries = [run_session(c) for c in configs]
    keys = sorted({f.dedup_key for s in summaries for f in s.failures})
    aggregate = {
        "runs": [{"seed": c.seed, **s.to_dict()} for c, s in zip(configs, summaries)],
        "mean_operations_processed": sum(s.operations_processed for s in summaries) / max(repeat, 1),
        "distinct_failures": keys,
    }
    if config.out_dir:
        Path(config.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(config.out_dir) / "aggregate.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True) + "\n")
    return aggregate
