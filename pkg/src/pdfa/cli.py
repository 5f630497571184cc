"""Command-line driver: ``pdfa {fetch-data,train,sweep,audit,align}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 target
missed under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from . import config as config_mod
from . import data
from .config import ConfigError, ExperimentConfig
from .network import Network, save_checkpoint
from .privacy import PreconditionError, audit_report
from .training import Algorithm, Trainer, calibrated_gammas, privacy_report_for_run, train

log = logging.getLogger("pdfa")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_TARGET = 0, 1, 2, 3

SWEEP_COLUMNS = ("sigma", "algorithm", "final_test_acc", "final_val_acc", "final_train_loss",
                 "eps_dp", "alpha", "status")


class TargetMiss(Exception):
    pass


def _label(algorithm: Algorithm) -> str:
    # the optical projection is simulated numerically here
    return "pdfa-sim" if algorithm is Algorithm.PDFA else algorithm.value


def load_config(args) -> ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else ExperimentConfig()
    for name in ("data", "init", "noise", "matrix"):
        value = getattr(args, f"seed_{name}", None)
        if value is not None:
            cfg.set("seeds", name, value)
    if getattr(args, "data_dir", None):
        cfg.set("experiment", "data_dir", args.data_dir)
    if getattr(args, "out", None):
        cfg.set("experiment", "out", args.out)
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        cfg.set(section.strip(), name.strip(), value.strip())
    sigma = getattr(args, "sigma", None)
    if isinstance(sigma, float):
        cfg.set("train", "noise_sigma", sigma)
    return cfg


def _run_dir(cfg: ExperimentConfig) -> Path:
    out = cfg.experiment["out"]
    return Path(out) if out else Path("runs") / cfg.digest()[:12]


def _load_splits(cfg: ExperimentConfig):
    e = cfg.experiment
    return data.prepare(e["dataset"], e["data_dir"], e["validation_fraction"],
                        split_seed=cfg["seeds"]["data"], train_subset=e["train_subset"])


def _report(cfg: ExperimentConfig, trainer, metrics):
    e = cfg.experiment
    return privacy_report_for_run(trainer, metrics, metrics.n_train, e["delta"], variant=e["variant"],
                                  alpha_grid=e["alpha_grid"], conservative=e["conservative"],
                                  uniform=e["uniform"], t_interpretation=e["t_interpretation"])


def run_training(cfg: ExperimentConfig, out_dir: Path, inject_transpose: bool = False) -> dict:
    """Train once and write metrics.csv, manifest.json, checkpoint.bin (+ alignment.csv)."""
    tcfg = cfg.validate()
    train_set, val_set, test_set = _load_splits(cfg)
    if train_set.X.shape[1] != tcfg.widths[0]:
        raise ConfigError(f"[train] widths[0] = {tcfg.widths[0]} but the data has "
                          f"{train_set.X.shape[1]} features")
    if inject_transpose and len(tcfg.widths) != 3:
        raise ConfigError(f"--inject-transpose needs exactly one hidden layer, got widths {tcfg.widths}")
    trainer = Trainer(tcfg)
    trainer.transpose_feedback = inject_transpose
    trainer, metrics = train(tcfg, train_set, val_set, test_set, trainer=trainer)
    report = _report(cfg, trainer, metrics)
    metrics.privacy = report

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_text = metrics.to_csv()
    (out_dir / "metrics.csv").write_text(csv_text)
    if tcfg.record_alignment:
        (out_dir / "alignment.csv").write_text(metrics.alignment_csv())
    save_checkpoint(trainer.net, out_dir / "checkpoint.bin", {"config_digest": cfg.digest()})
    manifest = {
        "format": 1,
        "package_version": __version__,
        "algorithm_label": _label(tcfg.algorithm),
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "seeds": cfg.to_dict()["seeds"],
        "feedback_digests": trainer.feedback.digests(),
        "n_train": metrics.n_train,
        "steps": metrics.steps,
        "max_abs_preactivation": metrics.max_abs_preactivation,
        "final": {"test_acc": metrics.test_acc[-1] if metrics.test_acc else None,
                  "val_acc": metrics.val_acc[-1] if metrics.val_acc else None},
        "metrics_sha256": hashlib.sha256(csv_text.encode()).hexdigest(),
        "privacy": report.to_json_dict(),
    }
    if inject_transpose:
        manifest["diagnostic"] = "transpose feedback injected"
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"trainer": trainer, "metrics": metrics, "report": report, "manifest": manifest}


def _check_target(cfg: ExperimentConfig, acc: float, target: float | None = None) -> None:
    e = cfg.experiment
    target = e["target_accuracy"] if target is None else target
    if target is None:
        return
    measured = 100.0 * acc
    if not abs(measured - target) <= e["target_tolerance"]:
        raise TargetMiss(f"test accuracy {measured:.2f} misses target {target:.2f} "
                         f"(tolerance {e['target_tolerance']})")


def cmd_fetch_data(args) -> int:
    names = args.dataset or ["fashion_mnist", "mnist"]
    for name in names:
        got = data.fetch(name, args.data_dir, base_url=args.base_url)
        print(f"{name}: {len(got)} file(s) downloaded, all verified")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = _run_dir(cfg)
    res = run_training(cfg, out)
    acc = res["metrics"].test_acc[-1]
    print(f"{res['manifest']['algorithm_label']}: final test accuracy {100 * acc:.2f}  ->  {out}")
    print(res["report"].render())
    if args.strict:
        _check_target(cfg, acc)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    sigmas = args.sigma
    if not sigmas:
        raise ConfigError("sweep needs at least one --sigma value")
    if args.targets and len(args.targets) != len(sigmas):
        raise ConfigError(f"--targets has {len(args.targets)} values for {len(sigmas)} sigmas")
    root = _run_dir(cfg)
    root.mkdir(parents=True, exist_ok=True)
    rows, failed, missed = [], 0, []
    for i, sigma in enumerate(sigmas):
        run_cfg = config_mod.load_dict(cfg.to_dict())
        run_cfg.set("train", "private", True)
        run_cfg.set("train", "noise_sigma", sigma)
        run_cfg.set("experiment", "out", str(root / f"sigma_{sigma:g}"))
        algo = _label(Algorithm(run_cfg["train"]["algorithm"]))
        try:
            res = run_training(run_cfg, _run_dir(run_cfg))
        except ConfigError:
            raise
        except Exception as exc:  # keep completed rows
            log.error("sigma=%g failed: %s", sigma, exc)
            rows.append({"sigma": sigma, "algorithm": algo, "status": f"error: {exc}"})
            failed += 1
        else:
            m, rep = res["metrics"], res["report"]
            rows.append({"sigma": sigma, "algorithm": algo, "final_test_acc": m.test_acc[-1],
                         "final_val_acc": m.val_acc[-1], "final_train_loss": m.train_loss[-1],
                         "eps_dp": rep.eps_dp if math.isfinite(rep.eps_dp) else "inf",
                         "alpha": rep.alpha, "status": "ok"})
            if args.strict and args.targets:
                try:
                    _check_target(run_cfg, m.test_acc[-1], args.targets[i])
                except TargetMiss as exc:
                    missed.append(f"sigma={sigma:g}: {exc}")
        _write_sweep(root / "sweep.csv", rows)
    print(f"sweep table -> {root / 'sweep.csv'}")
    for row in rows:
        acc = row.get("final_test_acc")
        print(f"  sigma={row['sigma']:<6g} {row['algorithm']:<9} "
              + (f"{100 * acc:.2f}" if acc is not None else row["status"]))
    if failed:
        return EXIT_RUNTIME
    if missed:
        for line in missed:
            print(f"target miss: {line}", file=sys.stderr)
        return EXIT_TARGET
    return EXIT_OK


def _write_sweep(path: Path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, restval="")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def cmd_audit(args) -> int:
    cfg = load_config(args)
    tcfg = cfg.validate()
    e = cfg.experiment
    gmin = gmax = None
    manifest = {}
    if args.config and Path(args.config).read_text().lstrip().startswith("{"):
        manifest = json.loads(Path(args.config).read_text())
    n_train = args.n_train or manifest.get("n_train")
    if n_train is None:
        n_full = 60000 if e["dataset"] in ("mnist", "fashion_mnist") else 3000
        n_train = n_full - int(round(e["validation_fraction"] * n_full))
        if e["train_subset"] is not None:
            n_train = min(n_train, e["train_subset"])
    if not tcfg.clip.gamma_min:
        radii = manifest.get("max_abs_preactivation")
        if radii is None and tcfg.is_private and tcfg.algorithm not in (Algorithm.BP, Algorithm.NOISY_BP):
            raise PreconditionError("audit needs [clip] gamma_min/gamma_max for every layer, or a run "
                                    "manifest recording the observed pre-activation range")
        if radii is not None:
            gmin, gmax = calibrated_gammas(Network.init(tcfg.widths, tcfg.hidden_activation), radii)
            if min(gmin) <= 0:
                raise PreconditionError("calibrated gamma_min is 0 for some layer; no DP guarantee")
    report = audit_report(tcfg, n_train, e["delta"], variant=e["variant"], alpha_grid=e["alpha_grid"],
                          alpha=args.alpha, gamma_min=gmin, gamma_max=gmax,
                          conservative=e["conservative"], uniform=e["uniform"],
                          t_interpretation=e["t_interpretation"])
    if args.format in ("text", "both"):
        print(report.render())
    if args.format in ("json", "both"):
        print(report.to_json())
    return EXIT_OK


def cmd_align(args) -> int:
    cfg = load_config(args)
    cfg.set("train", "record_alignment", True)
    algo = Algorithm(cfg["train"]["algorithm"])
    if algo not in (Algorithm.DFA, Algorithm.TDFA, Algorithm.PDFA):
        raise ConfigError(f"align needs a feedback-alignment algorithm, got {algo.value}")
    n_layers = len(cfg["train"]["widths"]) - 1
    if not 1 <= args.layer <= n_layers:
        raise ConfigError(f"--layer must lie in [1, {n_layers}], got {args.layer}")
    out = _run_dir(cfg)
    res = run_training(cfg, out, inject_transpose=args.inject_transpose)
    m = res["metrics"]
    per_epoch = m.steps // max(len(m.train_loss), 1)
    path = out / f"alignment_layer{args.layer}.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("step", "epoch", "alignment"))
        for step, row in enumerate(m.alignment, start=1):
            w.writerow((step, (step - 1) // per_epoch + 1, repr(float(row[args.layer - 1]))))
    print(f"{len(m.alignment)} steps -> {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pdfa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"pdfa {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sigma_many=False):
        sp.add_argument("--config", help="INI config or JSON run manifest")
        sp.add_argument("--data-dir", help=f"dataset root (default ${data.DATA_DIR_ENV} or ~/.cache/pdfa)")
        sp.add_argument("--out", help="output directory")
        for name in ("data", "init", "noise", "matrix"):
            sp.add_argument(f"--seed-{name}", type=int)
        if sigma_many:
            sp.add_argument("--sigma", type=float, nargs="+", help="noise levels to sweep")
        else:
            sp.add_argument("--sigma", type=float, help="override [train] noise_sigma")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
        sp.add_argument("--strict", action="store_true", help="exit 3 when the accuracy target is missed")

    f = sub.add_parser("fetch-data", help="download and verify the IDX files")
    f.add_argument("--dataset", action="append", choices=sorted(data.CHECKSUMS))
    f.add_argument("--data-dir")
    f.add_argument("--base-url")
    f.set_defaults(func=cmd_fetch_data)

    t = sub.add_parser("train", help="one training run")
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sweep", help="one private run per sigma, shared seeds")
    common(s, sigma_many=True)
    s.add_argument("--targets", type=float, nargs="+", help="expected accuracy (%%) per sigma")
    s.set_defaults(func=cmd_sweep)

    a = sub.add_parser("audit", help="privacy report for a config, without training")
    common(a)
    a.add_argument("--alpha", type=float, help="evaluate at this alpha instead of the grid optimum")
    a.add_argument("--n-train", type=int, help="training-set size (default from the dataset)")
    a.add_argument("--format", choices=("text", "json", "both"), default="both")
    a.set_defaults(func=cmd_audit)

    g = sub.add_parser("align", help="per-step alignment with the backprop gradient")
    common(g)
    g.add_argument("--layer", type=int, default=2)
    g.add_argument("--inject-transpose", action="store_true",
                   help="test mode: feedback = transposed next-layer weights")
    g.set_defaults(func=cmd_align)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PreconditionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TargetMiss as exc:
        print(f"target miss: {exc}", file=sys.stderr)
        return EXIT_TARGET
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
