"""Command line entry points: synth, fit, toys, report.

Exit codes: 0 success, 1 configuration error, 2 ingestion error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .data import IngestionError, build_dataset, read_sites_csv, write_sites_csv
from .estimators import summarize, write_inclusion_csv, write_models_csv
from .laplace import EvidenceOracle
from .linalg import NumericalError
from .mjmcmc import EvidenceFailureError, run_chains
from .prediction import model_averaged_track, probability_track, write_track_csv
from .synth import SyntheticSpec, generate_sites, write_truth
from .toy import latent_structure_comparison, toy_compare, write_latent_csv, write_toy_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INGESTION = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors, not a hard exit."""

    def error(self, message):
        raise ConfigError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--input", help="input CSV of sites")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes (0 = all cores)")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument(
        "--structure", choices=["rw1", "ar1", "ar2", "ar3", "ou"], help="latent field structure"
    )
    p.add_argument("--method", choices=["eb", "grid"], help="evidence integration method")
    p.add_argument("--stop-unique-models", type=int, dest="stop_unique_models")
    p.add_argument("--read-threshold", type=int, dest="read_threshold")


def build_parser() -> _Parser:
    parser = _Parser(prog="methsel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic site table with ground truth")
    _add_common(p_synth)
    p_synth.add_argument("--T", type=int, default=1000, help="number of sites")

    p_fit = sub.add_parser("fit", help="model search and prediction on a site table")
    _add_common(p_fit)
    p_fit.add_argument("--chains", type=int, dest="n_chains")
    p_fit.add_argument("--max-iterations", type=int, dest="max_iterations")
    p_fit.add_argument("--top-m", type=int, dest="top_m")

    p_toys = sub.add_parser("toys", help="benchmark tables for the evidence approximations")
    _add_common(p_toys)
    p_toys.add_argument("--toy-w", type=int, dest="toy_w", help="harmonic-mean sample count")
    p_toys.add_argument("--latent-T", type=int, dest="latent_T")

    p_report = sub.add_parser("report", help="figure-ready tables from a finished fit")
    _add_common(p_report)

    return parser


_OVERRIDE_KEYS = (
    "input",
    "out",
    "threads",
    "seed",
    "structure",
    "method",
    "stop_unique_models",
    "read_threshold",
    "n_chains",
    "max_iterations",
    "top_m",
    "toy_w",
    "latent_T",
)


def _resolve_config(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS if hasattr(args, k)}
    return RunConfig.from_sources(args.config, overrides)


def _write_manifest(outdir: str, cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
    }
    manifest.update(extra or {})
    with open(os.path.join(outdir, "run_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _ensure_out(cfg: RunConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _n_workers(cfg: RunConfig) -> int:
    return cfg.threads if cfg.threads and cfg.threads > 0 else (os.cpu_count() or 1)


def cmd_synth(cfg: RunConfig, T: int) -> int:
    out = _ensure_out(cfg)
    spec = SyntheticSpec(T=T, seed=cfg.seed, read_threshold=cfg.read_threshold)
    sites, truth = generate_sites(spec)
    sites_path = os.path.join(out, "sites.csv")
    write_sites_csv(sites_path, sites)
    write_truth(os.path.join(out, "truth.json"), truth)
    _write_manifest(out, cfg, "synth", {"T": T, "sites_csv": sites_path})
    print(f"wrote {len(sites)} sites to {sites_path}")
    return EXIT_OK


def cmd_fit(cfg: RunConfig) -> int:
    cfg.validate_paths(require_input=True)
    sites = read_sites_csv(cfg.input)
    dataset = build_dataset(sites, read_threshold=cfg.read_threshold)
    if dataset.n_inference == 0:
        raise ConfigError(
            f"no site reaches read_threshold={cfg.read_threshold}; nothing to fit"
        )
    out = _ensure_out(cfg)
    oracle = EvidenceOracle(
        dataset=dataset,
        structure=cfg.structure_spec(),
        prior=cfg.prior_config(),
        cfg=cfg.laplace_config(),
    )
    t0 = time.perf_counter()
    run = run_chains(
        oracle,
        d=dataset.d,
        q=cfg.q,
        n_chains=cfg.n_chains,
        seed=cfg.seed,
        proposal=cfg.proposal_config(),
        stop=cfg.stop_rule(),
        n_workers=_n_workers(cfg),
    )
    search_seconds = time.perf_counter() - t0

    names = list(dataset.column_names)
    summary = summarize(run.registry, names, run.histories, cfg.burn_in_fraction)
    write_models_csv(
        os.path.join(out, "models.csv"),
        run.registry,
        summary.probabilities_rm,
        summary.probabilities_freq,
    )
    write_inclusion_csv(
        os.path.join(out, "inclusion.csv"), summary.inclusion_rm, summary.inclusion_freq
    )

    mode_bits = np.array([c == "1" for c in summary.mode])
    structure = cfg.structure_spec()
    prior = cfg.prior_config()
    lap = cfg.laplace_config()
    track_mode = probability_track(mode_bits, dataset, structure, prior, lap, label="mode")
    track_avg = model_averaged_track(
        summary.probabilities_rm, dataset, top_m=cfg.top_m,
        structure=structure, prior=prior, cfg=lap,
    )
    write_track_csv(os.path.join(out, "track.csv"), dataset, [track_mode, track_avg])

    runtime = time.perf_counter() - t0
    report = {
        "mode_model": summary.mode,
        "median_model": summary.median,
        "log_evidence_mass": summary.log_mass,
        "n_models": summary.n_models,
        "explored_fraction": summary.n_models / float(2**dataset.d),
        "runtime_seconds": runtime,
        "search_seconds": search_seconds,
        "n_evidence_requests": run.n_requests,
        "n_evidence_failures": run.n_failures,
        "stopped_on": run.stopped_on,
        "T": dataset.T,
        "n_inference": dataset.n_inference,
        "d": dataset.d,
        "covariates": names,
    }
    with open(os.path.join(out, "summary.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, cfg, "fit", {"input": cfg.input})
    print(
        f"explored {summary.n_models} models "
        f"({report['explored_fraction']:.4f} of 2^{dataset.d}) in {runtime:.1f}s"
    )
    print(f"mode model   {summary.mode}")
    print(f"median model {summary.median}")
    return EXIT_OK


def cmd_toys(cfg: RunConfig) -> int:
    out = _ensure_out(cfg)
    rows = toy_compare(
        W=cfg.toy_w, T=cfg.toy_T, seeds=cfg.toy_seeds, data_seed=cfg.seed
    )
    write_toy_csv(os.path.join(out, "toy_table.csv"), rows)

    if cfg.input is not None:
        cfg.validate_paths(require_input=True)
        dataset = build_dataset(read_sites_csv(cfg.input), read_threshold=cfg.read_threshold)
    else:
        spec = SyntheticSpec(T=cfg.latent_T, seed=cfg.seed, read_threshold=cfg.read_threshold)
        sites, _ = generate_sites(spec)
        dataset = build_dataset(sites, read_threshold=cfg.read_threshold)
    table = latent_structure_comparison(
        dataset, prior=cfg.prior_config(), cfg=cfg.laplace_config()
    )
    write_latent_csv(os.path.join(out, "latent_table.csv"), table)
    _write_manifest(
        out,
        cfg,
        "toys",
        {"toy_seeds": list(cfg.toy_seeds), "toy_w": cfg.toy_w, "latent_T": dataset.T},
    )
    print(f"wrote toy_table.csv and latent_table.csv to {out}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    run_dir = cfg.input or cfg.out
    needed = ["summary.json", "inclusion.csv", "track.csv"]
    missing = [f for f in needed if not os.path.exists(os.path.join(run_dir, f))]
    if missing:
        raise ConfigError(f"run directory {run_dir} is missing {missing}")
    out = _ensure_out(cfg)

    with open(os.path.join(run_dir, "summary.json")) as fh:
        summary = json.load(fh)

    with open(os.path.join(run_dir, "inclusion.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: -float(r["rm_inclusion"]))
    with open(os.path.join(out, "figure_inclusion.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["covariate", "inclusion"])
        for r in rows:
            writer.writerow([r["covariate"], r["rm_inclusion"]])

    with open(os.path.join(run_dir, "track.csv"), newline="") as fh:
        track_rows = [r for r in csv.DictReader(fh) if r["model"] == "averaged"]
    with open(os.path.join(out, "figure_track.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["position", "subset", "naive_rate", "post_mean", "q025", "q975", "classification"]
        )
        for r in track_rows:
            writer.writerow(
                [
                    r["position"],
                    r["subset"],
                    r["naive_rate"],
                    r["post_mean"],
                    r["q025"],
                    r["q975"],
                    r["classification"],
                ]
            )

    print(f"mode model   {summary['mode_model']}")
    print(f"median model {summary['median_model']}")
    print(
        f"{summary['n_models']} models, explored fraction "
        f"{summary['explored_fraction']:.4f}, log evidence mass {summary['log_evidence_mass']:.3f}"
    )
    print(f"figure data written to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _resolve_config(args)
        if args.command == "synth":
            return cmd_synth(cfg, T=args.T)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "toys":
            return cmd_toys(cfg)
        if args.command == "report":
            return cmd_report(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IngestionError as exc:
        print(f"ingestion error: {exc}", file=sys.stderr)
        return EXIT_INGESTION
    except (NumericalError, EvidenceFailureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
