"""Experiment harness: data sources, method recipes, MSE grids, overhead tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import amplification as amp
from . import mechanisms as mech
from .errors import ConfigurationError, InfeasibleError, InputError
from .shuffle import Transcript

SHUFFLE_METHODS = ("solh", "sh", "rap", "rap_r", "aue")
LDP_METHODS = ("olh", "had")
CENTRAL_METHODS = ("lap", "base")
ALL_METHODS = SHUFFLE_METHODS + LDP_METHODS + CENTRAL_METHODS


# ------------------------------------------------------------ data


def gen_zipf(n: int, d: int, exponent: float, seed: int) -> np.ndarray:
    """n draws with P(value k) proportional to 1/(k+1)^exponent, k in [0, d)."""
    if n < 1 or d < 2:
        raise InputError("need n >= 1 and d >= 2")
    rng = np.random.default_rng(seed)
    return rng.choice(d, size=n, p=zipf_pmf(d, exponent))


def zipf_pmf(d: int, exponent: float) -> np.ndarray:
    w = 1.0 / np.arange(1, d + 1, dtype=float) ** exponent
    return w / w.sum()


@dataclass
class Dataset:
    values: np.ndarray
    d: int
    labels: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return int(self.values.size)

    def frequencies(self) -> np.ndarray:
        return np.bincount(self.values, minlength=self.d) / self.n


def ingest_csv(path, header: bool = False) -> Dataset:
    """One token per line (first CSV field); indices assigned by first occurrence."""
    raw = Path(path).read_bytes()
    index: dict[str, int] = {}
    values = []
    for lineno, line in enumerate(raw.splitlines(), start=1):
        try:
            text = line.decode("utf-8")
        except UnicodeDecodeError:
            raise InputError(f"line {lineno}: not valid UTF-8") from None
        if header and lineno == 1:
            continue
        row = next(csv.reader([text]), [])
        token = row[0].strip() if row else ""
        if not token:
            continue
        values.append(index.setdefault(token, len(index)))
    if not values:
        raise InputError(f"{path}: no values")
    return Dataset(np.array(values, dtype=np.int64), max(len(index), 2), list(index))


def mse(f, f_hat) -> float:
    f = np.asarray(f, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    if f.shape != f_hat.shape:
        raise InputError(f"length mismatch: {f.shape} vs {f_hat.shape}")
    return float(np.mean((f - f_hat) ** 2))


# ------------------------------------------------------------ method recipes


@dataclass(frozen=True)
class MethodPlan:
    """How one method runs at one budget; ``config`` is None for lap/base."""

    method: str
    eps_l: float | None
    config: object
    amplified: bool
    bytes_per_user: int
    note: str = ""


def _amplified_eps(kind: str, eps_c: float, n: int, delta: float, **kw) -> tuple[float, bool]:
    try:
        eps_l = amp.invert_amplification(kind, eps_c, n, delta, **kw)
    except InfeasibleError:
        return eps_c, False
    if eps_l <= eps_c:
        return eps_c, False
    return eps_l, True


def _olh_dprime(eps: float, d: int) -> int:
    return int(min(d, max(2, round(math.exp(min(eps, 30.0)) + 1))))


def plan_method(method: str, eps: float, n: int, d: int, delta: float, *, budget: str = "eps_c") -> MethodPlan:
    """Turn a budget into a concrete mechanism.

    ``budget='eps_c'``: shuffle methods derive eps_l from the amplification
    bound and fall back to eps_l = eps_c when no amplification is possible.
    ``budget='eps_l'``: every method runs at the given local budget.
    """
    if method not in ALL_METHODS:
        raise InputError(f"unknown method {method!r}")
    vec_bytes = 4 + 1 + (d + 7) // 8
    local = budget == "eps_l"
    if method == "solh":
        m = amp.blanket_m(eps, n, delta)
        if local or m < 4:
            k = _olh_dprime(eps, d)
            eps_l, ok = eps, False
        else:
            k = min(amp.optimal_dprime(eps, n, delta), d)
            eps_l, ok = _amplified_eps("solh", eps, n, delta, d_prime=k)
            if not ok:
                k = _olh_dprime(eps, d)
        return MethodPlan(method, eps_l, mech.SolhConfig(eps_l, d, k), ok, 8)
    if method == "sh":
        eps_l, ok = (eps, False) if local else _amplified_eps("grr", eps, n, delta, d=d)
        return MethodPlan(method, eps_l, mech.GrrConfig(eps_l, d), ok, 8)
    if method in ("rap", "rap_r"):
        eps_eff = 2 * eps if method == "rap_r" else eps
        eps_l, ok = (eps_eff, False) if local else _amplified_eps("ue", eps_eff, n, delta)
        return MethodPlan(method, eps_l, mech.UeConfig(eps_l, d), ok, vec_bytes)
    if method == "aue":
        if local:
            raise InfeasibleError("AUE is defined by a central budget only")
        return MethodPlan(method, None, mech.AueConfig(eps, n, delta, d), True, vec_bytes)
    if method == "olh":
        return MethodPlan(method, eps, mech.SolhConfig(eps, d, _olh_dprime(eps, d)), False, 8)
    if method == "had":
        return MethodPlan(method, eps, mech.hadamard_config(eps, d), False, 8)
    if method == "lap":
        return MethodPlan(method, None, None, False, 0, "central Laplace, count sensitivity 2")
    return MethodPlan(method, None, None, False, 0, "uniform 1/d")


def estimate(plan: MethodPlan, data: Dataset, eps: float, rng: np.random.Generator) -> np.ndarray:
    """One estimate of the frequency vector under ``plan``."""
    cfg = plan.config
    hist = np.bincount(data.values, minlength=data.d)
    n = data.n
    if plan.method == "base":
        return np.full(data.d, 1.0 / data.d)
    if plan.method == "lap":
        return (hist + rng.laplace(0.0, 2.0 / eps, size=data.d)) / n
    if isinstance(cfg, mech.UeConfig):
        return mech.grr_estimate_counts(mech.ue_sample_counts(hist, cfg, rng), n, cfg.p, cfg.q)
    if isinstance(cfg, mech.AueConfig):
        return mech.aue_sample_counts(hist, cfg, rng) / n - cfg.p_aue
    return mech.aggregate(mech.perturb_batch(data.values, cfg, rng), cfg)


# ------------------------------------------------------------ grid runner


@dataclass
class ExperimentSpec:
    methods: list
    eps: list
    data: dict
    delta: float = 1e-9
    reps: int = 1
    seed: int = 0
    budget: str = "eps_c"
    output: str | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise InputError("repetitions must be at least 1")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise InputError(f"unknown methods {bad}")
        if self.budget not in ("eps_c", "eps_l"):
            raise InputError("budget must be eps_c or eps_l")
        if not self.eps:
            raise InputError("empty budget grid")


def load_spec(path) -> ExperimentSpec:
    """Read a TOML spec (see README for the schema)."""
    import tomli

    with open(path, "rb") as fh:
        raw = tomli.load(fh)
    budget = "eps_l" if "eps_l" in raw else "eps_c"
    data = raw.get("data", {})
    if "path" in data and not Path(data["path"]).is_absolute():
        data = dict(data, path=str(Path(path).parent / data["path"]))
    return ExperimentSpec(
        methods=list(raw.get("methods", ["solh"])),
        eps=[float(e) for e in raw.get(budget, [])],
        data=data,
        delta=float(raw.get("delta", 1e-9)),
        reps=int(raw.get("reps", 1)),
        seed=int(raw.get("seed", 0)),
        budget=budget,
        output=raw.get("output"),
    )


def load_data(spec_data: dict) -> Dataset:
    kind = spec_data.get("kind", "zipf")
    if kind == "csv":
        return ingest_csv(spec_data["path"], bool(spec_data.get("header", False)))
    if kind == "zipf":
        n, d = int(spec_data.get("n", 10000)), int(spec_data.get("d", 100))
        values = gen_zipf(n, d, float(spec_data.get("exponent", 1.1)), int(spec_data.get("seed", 0)))
        return Dataset(values, d)
    raise InputError(f"unknown data kind {kind!r}")


def _cell_rng(seed: int, method: str, eps_index: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(method.encode()), eps_index, rep))
    return np.random.default_rng(ss)


def _digest(est: np.ndarray) -> str:
    return hashlib.sha256(np.asarray(est, dtype="<f8").tobytes()).hexdigest()[:16]


def run_experiment(spec: ExperimentSpec, data: Dataset | None = None) -> list[dict]:
    """Evaluate every (method, budget, repetition) cell.

    Infeasible cells appear once per budget with ``status='skipped'``.
    Wall times are kept in a separate ``wall_time`` key that
    ``write_results`` stores apart from the deterministic records.
    """
    data = data or load_data(spec.data)
    truth = data.frequencies()
    records = []
    for method in spec.methods:
        for ei, eps in enumerate(spec.eps):
            try:
                plan = plan_method(method, eps, data.n, data.d, spec.delta, budget=spec.budget)
            except (InfeasibleError, ConfigurationError) as exc:
                records.append({"method": method, spec.budget: eps, "rep": None, "status": "skipped",
                                "reason": str(exc)})
                continue
            for rep in range(spec.reps):
                rng = _cell_rng(spec.seed, method, ei, rep)
                t0 = time.perf_counter()
                est = estimate(plan, data, eps, rng)
                wall = time.perf_counter() - t0
                records.append({
                    "method": method, spec.budget: eps, "rep": rep, "status": "ok",
                    "mse": mse(truth, est), "eps_l": plan.eps_l, "amplified": plan.amplified,
                    "d_prime": getattr(plan.config, "d_prime", None), "bytes_per_user": plan.bytes_per_user,
                    "estimate_digest": _digest(est), "wall_time": wall,
                })
    return records


def summarize(records: list[dict], budget: str = "eps_c") -> list[dict]:
    cells: dict = {}
    for r in records:
        key = (r["method"], r[budget])
        cells.setdefault(key, []).append(r)
    out = []
    for (method, eps), rs in cells.items():
        ok = [r["mse"] for r in rs if r["status"] == "ok"]
        out.append({
            "method": method, budget: eps, "status": "ok" if ok else "skipped", "reps": len(ok),
            "mse_mean": float(np.mean(ok)) if ok else None,
            "mse_std": float(np.std(ok)) if ok else None,
            "reason": "" if ok else rs[0].get("reason", ""),
        })
    return out


def write_results(records: list[dict], prefix, budget: str = "eps_c") -> dict:
    """Writes ``prefix.jsonl`` (records), ``prefix.csv`` (summary) and
    ``prefix.timing.jsonl`` (wall times, not reproducible)."""
    prefix = str(prefix)
    paths = {"records": prefix + ".jsonl", "summary": prefix + ".csv", "timing": prefix + ".timing.jsonl"}
    with open(paths["records"], "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({k: v for k, v in r.items() if k != "wall_time"}, sort_keys=True) + "\n")
    with open(paths["timing"], "w", encoding="utf-8") as fh:
        for r in records:
            if "wall_time" in r:
                fh.write(json.dumps({"method": r["method"], budget: r[budget], "rep": r["rep"],
                                     "wall_time": r["wall_time"]}) + "\n")
    summary = summarize(records, budget)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["method", budget, "status", "reps", "mse_mean", "mse_std", "reason"],
                            lineterminator="\n")
    writer.writeheader()
    for row in summary:
        writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
    Path(paths["summary"]).write_text(buf.getvalue(), encoding="utf-8")
    return paths


def analytic_variance(method: str, eps_c: float, n: int, d: int, delta: float) -> float:
    """Shuffle-model variance prediction used to order methods (inf if infeasible)."""
    if method == "solh":
        try:
            k = min(amp.optimal_dprime(eps_c, n, delta), d)
        except InfeasibleError:
            return math.inf
        return amp.var_solh(eps_c, n, k, delta, strict=False).value
    if method == "sh":
        return amp.var_grr(eps_c, n, d, delta, strict=False).value
    if method == "rap":
        return amp.var_ue(eps_c, n, delta, strict=False).value
    raise InputError(f"no analytic comparator for {method!r}")


# ------------------------------------------------------------ overhead


def overhead_report(transcript: Transcript) -> dict:
    """Bytes sent per party class, shuffle rounds and wall times."""
    sent = transcript.bytes_sent()
    users = {k: v for k, v in sent.items() if k.startswith("user:")}
    shufflers = {k: v for k, v in sent.items() if k.startswith("shuffler:")}
    rounds = sorted(transcript.rounds_of_kind("perm_seed"))
    meta = transcript.tapes.get("meta", {})
    user_msgs: dict = {}
    for m in transcript.messages:
        if m.sender.startswith("user:"):
            user_msgs.setdefault(m.sender, []).append(m)
    kinds = [sorted(mm.kind for mm in v) for v in user_msgs.values()]
    return {
        "n": meta.get("n"),
        "n_r": meta.get("n_r"),
        "r": meta.get("r"),
        "shuffle_rounds": len(rounds),
        "user_bytes_mean": float(np.mean(list(users.values()))) if users else 0.0,
        "user_bytes_max": max(users.values()) if users else 0,
        "user_messages": kinds[0] if kinds else [],
        "shuffler_bytes": dict(sorted(shufflers.items())),
        "shuffler_bytes_total": int(sum(shufflers.values())),
        "server_bytes_received": int(sum(m.byte_length for m in transcript.messages if m.recipient == "server")),
        "total_bytes": int(sum(sent.values())),
        "wall_time": dict(transcript.timings),
    }


__all__ = [
    "gen_zipf", "zipf_pmf", "ingest_csv", "Dataset", "mse", "plan_method", "MethodPlan", "estimate",
    "ExperimentSpec", "load_spec", "load_data", "run_experiment", "summarize", "write_results",
    "analytic_variance", "overhead_report", "ALL_METHODS",
]
