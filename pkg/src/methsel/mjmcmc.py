"""Mode-jumping MCMC over the space of inclusion vectors.

Each chain mixes symmetric single-flip moves with occasional mode jumps:
a large random flip, a greedy hill climb toward a nearby mode, and a
per-bit randomization whose density enters the acceptance ratio together
with a backward auxiliary path. All chains share one registry, so the
evidence of any inclusion vector is computed exactly once per run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import log_model_prior, model_key


@dataclass(frozen=True)
class ProposalConfig:
    """Tuning constants of the mode-jumping kernel."""

    rho_large: float = 0.05
    jump_min: int | None = None
    jump_max: int | None = None
    local_max_steps: int = 10
    rho_randomize: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.rho_large <= 1.0:
            raise ValueError("rho_large must be in [0, 1]")
        if not 0.0 < self.rho_randomize < 1.0:
            raise ValueError("rho_randomize must be in (0, 1)")
        if self.local_max_steps < 1:
            raise ValueError("local_max_steps must be positive")
        if (self.jump_min is None) != (self.jump_max is None):
            raise ValueError("set both or neither of jump_min/jump_max")
        if self.jump_min is not None and not 1 <= self.jump_min <= self.jump_max:
            raise ValueError("need 1 <= jump_min <= jump_max")

    def jump_range(self, d: int) -> tuple[int, int]:
        if self.jump_min is not None:
            return min(self.jump_min, d), min(self.jump_max, d)
        lo = max(1, math.ceil(0.25 * d))
        hi = max(lo, math.ceil(0.35 * d))
        return min(lo, d), min(hi, d)


@dataclass(frozen=True, eq=False)
class EvidenceRecord:
    """Registry entry for one explored model; immutable once inserted."""

    key: str
    bits: np.ndarray
    log_mlik: float
    log_prior: float
    eta: dict
    converged: bool = True

    @property
    def log_post(self) -> float:
        return self.log_mlik + self.log_prior


class ModelRegistry:
    """Insertion-ordered store of evidence records keyed by model string."""

    def __init__(self) -> None:
        self._records: dict[str, EvidenceRecord] = {}

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def get(self, key: str) -> EvidenceRecord:
        return self._records[key]

    def insert(self, record: EvidenceRecord) -> None:
        if record.key in self._records:
            raise ValueError(f"model {record.key} already registered")
        self._records[record.key] = record

    def records(self) -> list[EvidenceRecord]:
        return list(self._records.values())

    def keys(self) -> list[str]:
        return list(self._records.keys())


class EvidenceFailureError(RuntimeError):
    """Raised when too many evidence evaluations fail during a run."""

    def __init__(self, message: str, failed_keys: list[str]):
        super().__init__(message)
        self.failed_keys = failed_keys


@dataclass
class ChainStats:
    seed: tuple
    iterations: int = 0
    small_proposed: int = 0
    small_accepted: int = 0
    jump_proposed: int = 0
    jump_accepted: int = 0


@dataclass(frozen=True)
class StopRule:
    """Halt once the registry holds unique_models, or after max_iterations
    per chain, whichever comes first."""

    unique_models: int | None = None
    max_iterations: int | None = None

    def __post_init__(self) -> None:
        if self.unique_models is None and self.max_iterations is None:
            raise ValueError("at least one stop criterion is required")
        if self.unique_models is not None and self.unique_models < 1:
            raise ValueError("unique_models must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


def large_jump(bits: np.ndarray, rng, proposal: ProposalConfig) -> np.ndarray:
    """Flip a uniformly chosen subset; subset size uniform on the jump range."""
    bits = np.asarray(bits).astype(bool)
    lo, hi = proposal.jump_range(bits.size)
    size = int(rng.integers(lo, hi + 1))
    idx = rng.choice(bits.size, size=size, replace=False)
    out = bits.copy()
    out[idx] = ~out[idx]
    return out


def randomize(bits: np.ndarray, rng, rho: float) -> tuple[np.ndarray, float]:
    """Independent per-bit flips; returns the draw and its log density."""
    bits = np.asarray(bits).astype(bool)
    flips = rng.random(bits.size) < rho
    out = bits ^ flips
    return out, randomize_log_density(bits, out, rho)


def randomize_log_density(from_bits, to_bits, rho: float) -> float:
    """Log probability that per-bit flips with rate rho map from_bits to to_bits."""
    a = np.asarray(from_bits).astype(bool)
    b = np.asarray(to_bits).astype(bool)
    if a.shape != b.shape:
        raise ValueError("model vectors differ in length")
    h = int(np.sum(a ^ b))
    return h * math.log(rho) + (a.size - h) * math.log1p(-rho)


def acceptance_probability(
    lp_current: float, lp_proposed: float, logq_forward: float, logq_backward: float
) -> float:
    """Acceptance probability of a mode-jump proposal; always in [0, 1]."""
    log_r = (lp_proposed - lp_current) + (logq_backward - logq_forward)
    return math.exp(min(log_r, 0.0))


def acceptance_ratio(
    bits, bits_star, chi_k, chi_k_star, log_posterior: Callable, rho: float = 0.1
) -> float:
    """Mode-jump acceptance probability from the endpoint states.

    chi_k_star is the locally optimized state the proposal was randomized
    from; chi_k is its backward counterpart. A self-proposal is accepted.
    """
    bits = np.asarray(bits).astype(bool)
    bits_star = np.asarray(bits_star).astype(bool)
    if np.array_equal(bits, bits_star):
        return 1.0
    return acceptance_probability(
        lp_current=log_posterior(bits),
        lp_proposed=log_posterior(bits_star),
        logq_forward=randomize_log_density(chi_k_star, bits_star, rho),
        logq_backward=randomize_log_density(chi_k, bits, rho),
    )


def _local_opt_gen(bits, d, rng, proposal):
    lp = yield bits
    if lp is None:
        return None
    cur, lp_cur = bits, lp
    for _ in range(proposal.local_max_steps):
        improved = False
        for j in rng.permutation(d):
            cand = cur.copy()
            cand[j] = not cand[j]
            lp_c = yield cand
            if lp_c is None:
                continue
            if lp_c > lp_cur:
                cur, lp_cur = cand, lp_c
                improved = True
        if not improved:
            break
    return cur, lp_cur


def _drive(gen, fn: Callable):
    """Run a request generator against a plain callable."""
    try:
        req = next(gen)
        while True:
            req = gen.send(fn(req))
    except StopIteration as stop:
        return stop.value


def local_optimize(bits, log_posterior: Callable, rng, proposal: ProposalConfig | None = None):
    """Greedy first-improvement hill climb over single-bit flips.

    Visits flips in a freshly randomized order each pass, keeps any flip
    that raises the log posterior, and stops after a pass with no
    improvement or after local_max_steps passes.
    """
    proposal = proposal or ProposalConfig()
    start = np.asarray(bits).astype(bool).copy()
    out = _drive(_local_opt_gen(start, start.size, rng, proposal), log_posterior)
    if out is None:
        raise EvidenceFailureError("local optimization failed at its starting state", [model_key(start)])
    return out


def _mode_jump_move(cur, lp_cur, d, rng, proposal):
    chi0 = large_jump(cur, rng, proposal)
    res = yield from _local_opt_gen(chi0, d, rng, proposal)
    if res is None:
        return None
    chik, _ = res
    gstar, lq_fwd = randomize(chik, rng, proposal.rho_randomize)
    if np.array_equal(gstar, cur):
        return gstar, lp_cur, 0.0
    lp_star = yield gstar
    if lp_star is None:
        return None
    chi0_back = large_jump(gstar, rng, proposal)
    res_back = yield from _local_opt_gen(chi0_back, d, rng, proposal)
    if res_back is None:
        return None
    chik_back, _ = res_back
    lq_back = randomize_log_density(chik_back, cur, proposal.rho_randomize)
    log_r = (lp_star - lp_cur) + (lq_back - lq_fwd)
    return gstar, lp_star, log_r


def _chain(d, rng, proposal, history, stats, max_iterations):
    cur = rng.random(d) < 0.5
    lp_cur = yield cur
    attempts = 0
    while lp_cur is None:
        attempts += 1
        if attempts > 50:
            return
        cur = rng.random(d) < 0.5
        lp_cur = yield cur

    iterations = 0
    while max_iterations is None or iterations < max_iterations:
        if rng.random() < proposal.rho_large:
            stats.jump_proposed += 1
            out = yield from _mode_jump_move(cur, lp_cur, d, rng, proposal)
            if out is not None:
                gstar, lp_star, log_r = out
                if log_r >= 0.0 or rng.random() < math.exp(log_r):
                    cur, lp_cur = gstar, lp_star
                    stats.jump_accepted += 1
        else:
            stats.small_proposed += 1
            j = int(rng.integers(d))
            cand = cur.copy()
            cand[j] = not cand[j]
            lp_c = yield cand
            if lp_c is not None:
                delta = lp_c - lp_cur
                if delta >= 0.0 or rng.random() < math.exp(delta):
                    cur, lp_cur = cand, lp_c
                    stats.small_accepted += 1
        iterations += 1
        stats.iterations = iterations
        history.append(model_key(cur))


_WORKER_ORACLE = None


def _init_worker(oracle) -> None:
    global _WORKER_ORACLE
    _WORKER_ORACLE = oracle


def _eval_in_worker(bits_tuple):
    bits = np.array(bits_tuple, dtype=bool)
    return _WORKER_ORACLE(bits)


@dataclass
class RunResult:
    registry: ModelRegistry
    histories: list
    chain_stats: list
    n_requests: int = 0
    n_failures: int = 0
    stopped_on: str = "max_iterations"


def run_chains(
    oracle: Callable,
    d: int,
    q: float,
    n_chains: int = 4,
    seed: int = 0,
    proposal: ProposalConfig | None = None,
    stop: StopRule | None = None,
    n_workers: int = 1,
    registry: ModelRegistry | None = None,
) -> RunResult:
    """Run parallel chains against a shared evidence registry.

    The oracle maps an inclusion vector to its evidence summary; it is
    called exactly once per unique model. Chains are advanced round-robin
    and results are applied in chain order, so a run is reproducible for a
    fixed seed regardless of the worker count. With n_workers > 1 the
    evidence evaluations are farmed out to a process pool.
    """
    proposal = proposal or ProposalConfig()
    stop = stop or StopRule(max_iterations=1000)
    registry = registry if registry is not None else ModelRegistry()
    if n_chains < 1:
        raise ValueError("need at least one chain")

    histories: list[list[str]] = [[] for _ in range(n_chains)]
    stats = [ChainStats(seed=(seed, i)) for i in range(n_chains)]
    rngs = [np.random.default_rng([seed, i]) for i in range(n_chains)]
    gens = [
        _chain(d, rngs[i], proposal, histories[i], stats[i], stop.max_iterations)
        for i in range(n_chains)
    ]
    requests: list[np.ndarray | None] = []
    active = []
    for g in gens:
        try:
            requests.append(next(g))
            active.append(True)
        except StopIteration:
            requests.append(None)
            active.append(False)

    executor = None
    if n_workers > 1:
        executor = ProcessPoolExecutor(
            max_workers=n_workers, initializer=_init_worker, initargs=(oracle,)
        )
    pending: dict[str, object] = {}
    n_requests = 0
    failures: list[str] = []
    stopped_on = "max_iterations"

    def target_hit() -> bool:
        return stop.unique_models is not None and len(registry) >= stop.unique_models

    try:
        if target_hit():
            stopped_on = "unique_models"
        else:
            while any(active):
                if executor is not None:
                    for i in range(n_chains):
                        if not active[i]:
                            continue
                        key = model_key(requests[i])
                        if key not in registry and key not in pending:
                            pending[key] = executor.submit(
                                _eval_in_worker, tuple(bool(b) for b in requests[i])
                            )
                stop_now = False
                for i in range(n_chains):
                    if not active[i]:
                        continue
                    bits = requests[i]
                    key = model_key(bits)
                    if key in registry:
                        lp = registry.get(key).log_post
                    else:
                        n_requests += 1
                        try:
                            if executor is not None:
                                result = pending[key].result()
                            else:
                                result = oracle(bits)
                            if not np.isfinite(result.log_mlik):
                                raise ArithmeticError(
                                    f"non-finite evidence for model {key}"
                                )
                        except Exception:
                            failures.append(key)
                            pending.pop(key, None)
                            lp = None
                        else:
                            record = EvidenceRecord(
                                key=key,
                                bits=bits.copy(),
                                log_mlik=result.log_mlik,
                                log_prior=log_model_prior(bits, q),
                                eta=dict(result.eta_mode),
                                converged=result.converged,
                            )
                            registry.insert(record)
                            pending.pop(key, None)
                            lp = record.log_post
                            if target_hit():
                                stopped_on = "unique_models"
                                stop_now = True
                    if stop_now:
                        break
                    try:
                        requests[i] = gens[i].send(lp)
                    except StopIteration:
                        active[i] = False
                if stop_now:
                    break
                if n_requests >= 100 and len(failures) > 0.01 * n_requests:
                    raise EvidenceFailureError(
                        f"{len(failures)} of {n_requests} evidence evaluations failed; "
                        f"first failures: {failures[:5]}",
                        failures,
                    )
    finally:
        for g in gens:
            g.close()
        if executor is not None:
            executor.shutdown(wait=False, cancel_futures=True)

    return RunResult(
        registry=registry,
        histories=histories,
        chain_stats=stats,
        n_requests=n_requests,
        n_failures=len(failures),
        stopped_on=stopped_on,
    )


def enumerate_registry(
    oracle: Callable, d: int, q: float, n_workers: int = 1
) -> ModelRegistry:
    """Exhaustively evaluate all 2^d models into a registry."""
    if d > 24:
        raise ValueError("enumeration beyond d = 24 is not supported")
    registry = ModelRegistry()
    all_bits = [
        np.array([(i >> j) & 1 for j in range(d)], dtype=bool) for i in range(1 << d)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(
            max_workers=n_workers, initializer=_init_worker, initargs=(oracle,)
        ) as pool:
            results = list(
                pool.map(
                    _eval_in_worker,
                    [tuple(bool(b) for b in bits) for bits in all_bits],
                    chunksize=max(1, (1 << d) // (8 * n_workers)),
                )
            )
    else:
        results = [oracle(bits) for bits in all_bits]
    for bits, res in zip(all_bits, results):
        registry.insert(
            EvidenceRecord(
                key=model_key(bits),
                bits=bits,
                log_mlik=res.log_mlik,
                log_prior=log_model_prior(bits, q),
                eta=dict(res.eta_mode),
                converged=res.converged,
            )
        )
    return registry
