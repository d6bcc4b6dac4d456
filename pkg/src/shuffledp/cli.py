"""Command-line entry point: ``shuffledp <subcommand> [flags]``.

Every subcommand prints one JSON object (inputs echoed) to stdout, or
writes it to ``--output`` when given.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import amplification as amp
from . import experiment as ex
from . import mechanisms as mech
from .crypto import IdentityScheme, PaillierScheme, TransparentOnion, X25519Onion, ahe_keygen
from .errors import ShuffleDPError
from .protocol import PeosConfig, extract_view, peos_run, ss_run
from .treehist import TreeHistConfig, f1_score, planted_dataset, treehist_run


def _num(x):
    if isinstance(x, (np.floating, np.integer)):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_num(v) for v in obj.tolist()]
    return _num(obj)


def _emit(result: dict, args) -> None:
    text = json.dumps(_jsonable(result), sort_keys=True)
    if getattr(args, "output", None):
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _data(args) -> ex.Dataset:
    if args.input:
        return ex.ingest_csv(args.input, header=args.header)
    return ex.Dataset(ex.gen_zipf(args.n, args.d, args.zipf, args.seed), args.d)


def _add_data_flags(p):
    p.add_argument("--input", help="CSV file, one value per line")
    p.add_argument("--header", action="store_true", help="skip the first CSV line")
    p.add_argument("--n", type=int, default=10000, help="synthetic user count")
    p.add_argument("--d", type=int, default=100, help="synthetic domain size")
    p.add_argument("--zipf", type=float, default=1.1, help="synthetic Zipf exponent")


def _mechanism_config(name: str, eps_l: float, d: int, d_prime, n: int, delta: float, eps_c=None):
    if name == "grr":
        return mech.GrrConfig(eps_l, d)
    if name in ("solh", "olh"):
        k = d_prime or ex._olh_dprime(eps_l, d)
        return mech.SolhConfig(eps_l, d, min(k, d))
    if name == "had":
        return mech.hadamard_config(eps_l, d)
    if name == "ue":
        return mech.UeConfig(eps_l, d)
    if name == "aue":
        return mech.AueConfig(eps_c, n, delta, d)
    raise ShuffleDPError(f"unknown mechanism {name!r}")


def cmd_mechanism(args) -> dict:
    data = _data(args)
    if args.mechanism == "aue" and args.eps_c is None:
        raise ShuffleDPError("aue needs --eps-c")
    cfg = _mechanism_config(args.mechanism, args.eps_l, data.d, args.d_prime, data.n, args.delta, args.eps_c)
    rng = np.random.default_rng(args.seed)
    est = mech.aggregate(mech.perturb_batch(data.values, cfg, rng), cfg, clip=args.clip)
    return {"command": "mechanism", "mechanism": args.mechanism, "eps_l": args.eps_l, "eps_c": args.eps_c,
            "n": data.n, "d": data.d, "d_prime": getattr(cfg, "d_prime", None), "seed": args.seed,
            "mse": ex.mse(data.frequencies(), est), "estimate": est}


def cmd_amplify(args) -> dict:
    out = {"command": "amplify", "mechanism": args.mechanism, "n": args.n, "d": args.d,
           "d_prime": args.d_prime, "delta": args.delta, "eps_l": args.eps_l, "eps_c": args.eps_c}
    if args.table1:
        eps, ok = amp.amplify_table1(args.table1, args.eps_l, args.n, args.delta, args.d)
        out.update(table1=args.table1, eps_c=eps, condition_satisfied=ok)
        return out
    if args.eps_l is not None:
        res = amp.amplify(args.mechanism, args.eps_l, args.n, args.delta, d=args.d, d_prime=args.d_prime)
        out.update(eps_c=res.epsilon_c, amplified=res.amplified, bound=res.bound)
        return out
    if args.eps_c is None:
        raise ShuffleDPError("give --eps-l (forward) or --eps-c (inverse)")
    m = amp.blanket_m(args.eps_c, args.n, args.delta)
    out["m"] = m
    if args.mechanism == "solh" and args.d_prime is None:
        out["d_prime"] = amp.optimal_dprime(args.eps_c, args.n, args.delta)
    k = out["d_prime"]
    out["eps_l"] = amp.invert_amplification(args.mechanism, args.eps_c, args.n, args.delta, d=args.d, d_prime=k)
    if args.mechanism == "grr":
        out["variance"] = amp.var_grr(args.eps_c, args.n, args.d, args.delta).value
    elif args.mechanism == "ue":
        out["variance"] = amp.var_ue(args.eps_c, args.n, args.delta).value
    else:
        out["variance"] = amp.var_solh(args.eps_c, args.n, k, args.delta).value
    if args.n_r:
        eps = amp.peos_eps(args.mechanism, out["eps_l"], args.n, args.n_r, k or args.d, args.delta)
        out.update(n_r=args.n_r, peos_eps_c=eps.eps_c, peos_eps_s=eps.eps_s)
    return out


def cmd_plan(args) -> dict:
    res = amp.plan_parameters(args.eps1, args.eps2, args.eps3, args.n, args.d, args.delta, n_r_max=args.n_r_max)
    return {"command": "plan", "eps1": args.eps1, "eps2": args.eps2, "eps3": args.eps3, "n": args.n, "d": args.d,
            "delta": args.delta, "n_r_max": args.n_r_max, "mechanism": res.mechanism, "eps_l": res.epsilon_l,
            "n_r": res.n_r, "d_prime": res.d_prime, "variance": res.variance,
            "achieved_eps_c": res.achieved[0], "achieved_eps_s": res.achieved[1], "achieved_eps_l": res.achieved[2],
            "amplified": res.amplified}


def _scheme(args):
    if args.ahe == "paillier":
        return PaillierScheme(ahe_keygen(args.key_bits, 64, np.random.default_rng([args.seed, 1])))
    return IdentityScheme(64, ciphertext_bytes=(2 * args.key_bits + 7) // 8)


def cmd_simulate(args) -> dict:
    data = _data(args)
    n, d = data.n, data.d
    if args.eps_l is None:
        if args.eps_c is None:
            raise ShuffleDPError("give --eps-l or --eps-c")
        k = d if args.mechanism == "grr" else (args.d_prime or min(amp.optimal_dprime(args.eps_c, n, args.delta), d))
        eps_l = amp.peos_eps_l_for(args.mechanism, args.eps_c, n, args.n_r, k, args.delta)
        d_prime = None if args.mechanism == "grr" else k
    else:
        eps_l, d_prime = args.eps_l, args.d_prime
    cfg_m = _mechanism_config(args.mechanism, eps_l, d, d_prime or ex._olh_dprime(eps_l, d), n, args.delta)
    out = {"command": "simulate", "protocol": args.protocol, "mechanism": args.mechanism, "n": n, "d": d,
           "eps_l": eps_l, "eps_c": args.eps_c, "delta": args.delta, "n_r": args.n_r, "r": args.r,
           "d_prime": getattr(cfg_m, "d_prime", None), "seed": args.seed}
    if args.protocol == "ss":
        onion = TransparentOnion() if args.onion == "transparent" else X25519Onion()
        est = ss_run(data.values, cfg_m, args.r, args.n_r, args.seed, onion=onion)
    else:
        cfg = PeosConfig(cfg_m, r=args.r, n_r=args.n_r, scheme=_scheme(args), encrypt=args.protocol == "peos",
                         seed=args.seed, record=bool(args.transcript or args.view or args.overhead))
        est, transcript = peos_run(data.values, cfg)
        if args.transcript:
            transcript.dump(args.transcript)
        if args.view:
            corrupted = [int(c) for c in args.corrupted.split(",")] if args.corrupted else []
            view = extract_view(transcript, args.view, corrupted)
            Path(args.view_output or "view.jsonl").write_text(view.to_jsonl(), encoding="utf-8")
            out["view_degraded"] = view.degraded
        if args.overhead:
            out["overhead"] = ex.overhead_report(transcript)
    if args.eps_c is not None:
        eps = amp.peos_eps(args.mechanism, eps_l, n, args.n_r, out["d_prime"] or d, args.delta)
        out.update(achieved_eps_c=eps.eps_c, achieved_eps_s=eps.eps_s)
    out.update(mse=ex.mse(data.frequencies(), est), estimate=est)
    return out


def cmd_treehist(args) -> dict:
    rng = np.random.default_rng(args.seed)
    planted = None
    if args.input:
        values = [ln.strip() for ln in Path(args.input).read_text(encoding="utf-8").splitlines() if ln.strip()]
    else:
        values, planted = planted_dataset(args.n, args.L, args.planted, args.mass, rng)
    cfg = TreeHistConfig(L=args.L, g=args.g, k=args.k, eps_c=args.eps_c, delta=args.delta, mode=args.mode,
                         estimator=args.estimator, eps_l=args.eps_l, interactive=not args.non_interactive)
    res = treehist_run(values, cfg, rng)
    out = {"command": "treehist", "L": args.L, "g": args.g, "k": args.k, "eps_c": args.eps_c, "delta": args.delta,
           "mode": args.mode, "estimator": args.estimator, "seed": args.seed, "truncated": res.truncated,
           "top": res.hex_items(args.L)}
    if planted is not None:
        out["f1"] = f1_score([v for v, _ in res.items], planted.tolist())
    return out


def cmd_experiment(args) -> dict:
    spec = ex.load_spec(args.spec)
    if args.reps:
        spec.reps = args.reps
    if args.seed is not None:
        spec.seed = args.seed
    prefix = args.output or spec.output or "results"
    records = ex.run_experiment(spec)
    paths = ex.write_results(records, prefix, spec.budget)
    return {"command": "experiment", "spec": str(args.spec), "reps": spec.reps, "seed": spec.seed,
            "methods": spec.methods, spec.budget: spec.eps, "files": paths,
            "skipped": sum(r["status"] == "skipped" for r in records)}


def cmd_overhead(args) -> dict:
    rows = []
    for r in args.r_list:
        data = ex.Dataset(ex.gen_zipf(args.n, args.d, 1.1, args.seed), args.d)
        cfg_m = _mechanism_config(args.mechanism, args.eps_l, args.d, args.d_prime or ex._olh_dprime(args.eps_l, args.d), args.n, args.delta)
        cfg = PeosConfig(cfg_m, r=r, n_r=args.n_r, scheme=_scheme(args), seed=args.seed, record=True)
        _, transcript = peos_run(data.values, cfg)
        rows.append(dict(ex.overhead_report(transcript), ahe=args.ahe))
    return {"command": "overhead", "n": args.n, "n_r": args.n_r, "mechanism": args.mechanism, "rows": rows}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shuffledp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--delta", type=float, default=1e-9)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--output", help="write the JSON result here instead of stdout")
        if data:
            _add_data_flags(sp)

    sp = sub.add_parser("mechanism", help="perturb and aggregate once")
    common(sp, data=True)
    sp.add_argument("--mechanism", choices=["grr", "solh", "olh", "had", "ue", "aue"], default="solh")
    sp.add_argument("--eps-l", type=float, default=1.0)
    sp.add_argument("--eps-c", type=float)
    sp.add_argument("--d-prime", type=int)
    sp.add_argument("--clip", action="store_true")
    sp.set_defaults(func=cmd_mechanism)

    sp = sub.add_parser("amplify", help="amplification bound or its inverse")
    common(sp)
    sp.add_argument("--mechanism", choices=["grr", "solh", "ue"], default="solh")
    sp.add_argument("--eps-l", type=float)
    sp.add_argument("--eps-c", type=float)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--d-prime", type=int)
    sp.add_argument("--n-r", type=int, default=0)
    sp.add_argument("--table1", choices=["efmrtt", "csuzz", "bbgn"])
    sp.set_defaults(func=cmd_amplify)

    sp = sub.add_parser("plan", help="choose mechanism, eps_l and n_r for three targets")
    common(sp)
    sp.add_argument("--eps1", type=float, required=True)
    sp.add_argument("--eps2", type=float, default=math.inf)
    sp.add_argument("--eps3", type=float, default=math.inf)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--n-r-max", type=int)
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="run PEOS, plain oblivious shuffle or sequential shuffle")
    common(sp, data=True)
    sp.add_argument("--protocol", choices=["peos", "oblivious", "ss"], default="peos")
    sp.add_argument("--mechanism", choices=["grr", "solh"], default="solh")
    sp.add_argument("--eps-l", type=float)
    sp.add_argument("--eps-c", type=float)
    sp.add_argument("--d-prime", type=int)
    sp.add_argument("--n-r", type=int, default=0)
    sp.add_argument("--r", type=int, default=3)
    sp.add_argument("--ahe", choices=["identity", "paillier"], default="identity")
    sp.add_argument("--key-bits", type=int, default=512)
    sp.add_argument("--onion", choices=["x25519", "transparent"], default="x25519")
    sp.add_argument("--transcript", help="dump the message log (JSON lines)")
    sp.add_argument("--view", choices=[m.value for m in amp.AdversaryModel])
    sp.add_argument("--corrupted", help="comma-separated shuffler indices for server+aux")
    sp.add_argument("--view-output")
    sp.add_argument("--overhead", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("treehist", help="heavy hitters over bit strings")
    common(sp)
    sp.add_argument("--input", help="file of hex strings, one per line")
    sp.add_argument("--n", type=int, default=50000)
    sp.add_argument("--planted", type=int, default=20)
    sp.add_argument("--mass", type=float, default=0.8)
    sp.add_argument("--L", type=int, default=16)
    sp.add_argument("--g", type=int, default=8)
    sp.add_argument("--k", type=int, default=20)
    sp.add_argument("--eps-c", type=float, default=1.0)
    sp.add_argument("--eps-l", type=float)
    sp.add_argument("--mode", choices=["shuffler", "ldp"], default="shuffler")
    sp.add_argument("--estimator", choices=["solh", "grr"], default="solh")
    sp.add_argument("--non-interactive", action="store_true")
    sp.set_defaults(func=cmd_treehist)

    sp = sub.add_parser("experiment", help="run an MSE grid from a TOML spec")
    sp.add_argument("spec")
    sp.add_argument("--output", help="output prefix (.jsonl, .csv, .timing.jsonl)")
    sp.add_argument("--reps", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_experiment, emit_stdout=True)

    sp = sub.add_parser("overhead", help="byte and round accounting of simulated PEOS runs")
    common(sp)
    sp.add_argument("--n", type=int, default=10000)
    sp.add_argument("--d", type=int, default=100)
    sp.add_argument("--n-r", type=int, default=0)
    sp.add_argument("--r", dest="r_list", type=int, nargs="+", default=[3, 7])
    sp.add_argument("--mechanism", choices=["grr", "solh"], default="solh")
    sp.add_argument("--eps-l", type=float, default=2.0)
    sp.add_argument("--d-prime", type=int)
    sp.add_argument("--ahe", choices=["identity", "paillier"], default="identity")
    sp.add_argument("--key-bits", type=int, default=512)
    sp.set_defaults(func=cmd_overhead)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except (ShuffleDPError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    if getattr(args, "emit_stdout", False):
        print(json.dumps(_jsonable(result), sort_keys=True))
    else:
        _emit(result, args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
