"""Command-line front end.

``overlapdetect analyze|simulate|sweep|oracle-check --config FILE [--seed N] [--out DIR]``

Each run reads one JSON config.  Exit codes: 0 success, 2 invalid config,
3 I/O failure, 4 detector/oracle mismatch.  Outputs are written atomically.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys
import tempfile
from pathlib import Path

import numpy as np

from .detectors import COMPARE_EPS, DetectorConfig, detect_noiseless, detect_noisy, min_detectable_overlap
from .errors import OverlapDetectError
from .montecarlo import CSV_HEADER, ExperimentConfig, run_experiment, stream_generator, sweep
from .montecarlo.engine import read_length
from .oracle import enumerate_posterior, tie_rule_argmax
from .reading_channel import (
    binary_symmetric_channel,
    channel_from_dict,
    chernoff_exponents,
    identity_channel,
    pair_statistics,
    theta_star,
)
from .sampler import overlap_prior, sample_pair
from .source_models import (
    Markov,
    Memoryless,
    Pmf,
    entropy_rate,
    mixing_coefficient_bound,
    model_from_dict,
    model_to_dict,
    recurrence_probability,
    renyi_entropy_rate,
)

log = logging.getLogger("overlapdetect")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_MISMATCH = 0, 2, 3, 4


class ConfigError(Exception):
    """Invalid config; carries the offending line when it can be located."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.args[0]}"


def _key_line(text: str, message: str) -> int | None:
    """Line of the first quoted key named in ``message``, if any."""
    for key in re.findall(r"'([A-Za-z_][A-Za-z0-9_]*)'", message):
        match = re.search(rf'"{re.escape(key)}"\s*:', text)
        if match:
            return text.count("\n", 0, match.start()) + 1
    return None


def load_config(path: str) -> tuple[dict, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object", 1)
    return doc, text


def _check_keys(doc: dict, allowed: set[str], text: str, where: str = "config"):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        msg = f"unknown {where} key {unknown[0]!r}"
        raise ConfigError(msg, _key_line(text, msg))


def _schema(fn, text: str):
    """Run ``fn`` and turn library validation errors into located config errors."""
    try:
        return fn()
    except (OverlapDetectError, KeyError, TypeError, ValueError) as exc:
        msg = str(exc) if not isinstance(exc, KeyError) else f"missing key {exc.args[0]!r}"
        raise ConfigError(msg, _key_line(text, msg)) from exc


# -- output -------------------------------------------------------------------------


def _write_atomic(path: Path, data: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_text(doc) -> str:
    return json.dumps(_finite(doc), sort_keys=True, indent=2) + "\n"


def _finite(obj):
    """JSON-safe copy: non-finite floats become the strings ``Infinity``/``-Infinity``/``NaN``."""
    if isinstance(obj, dict):
        return {str(k): _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return v
        return "NaN" if math.isnan(v) else ("Infinity" if v > 0 else "-Infinity")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _csv_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# -- analyze --------------------------------------------------------------------------


def _tagged(value, unit: str) -> dict:
    return {"value": value, "unit": unit}


def analyze_report(doc: dict, text: str = "") -> dict:
    """All source and channel analytics for one config, each tagged with its unit."""
    _check_keys(doc, {"model", "channel", "n", "beta", "mu", "epsilon", "renyi_orders", "mixing_steps"}, text)
    if "model" not in doc:
        raise ConfigError("missing key 'model'")
    model = _schema(lambda: model_from_dict(doc["model"]), text)
    k = model.alphabet_size
    channel = _schema(
        lambda: channel_from_dict(doc["channel"]) if doc.get("channel") is not None else identity_channel(k), text
    )
    n = int(doc.get("n", 1 << 20))
    mu = doc.get("mu")
    eps = float(doc.get("epsilon", 1e-4))
    orders = [float(a) for a in doc.get("renyi_orders", [0.5, 2.0])]
    steps = [int(s) for s in doc.get("mixing_steps", [1, 2, 5, 10])]
    unit = f"log{k}"
    log_n = math.log(n) / math.log(k)

    report: dict = {"model": model_to_dict(model), "n": n, "flags": []}
    h1 = entropy_rate(model)
    source = {
        "H1": _tagged(h1, unit),
        "H_minus_inf": _tagged(renyi_entropy_rate(model, -math.inf).value, unit),
        "renyi": [],
        "p_min": _tagged(float(model.initial_pmf()[model.initial_pmf() > 0].min()), "probability"),
    }
    for a in orders:
        rate = renyi_entropy_rate(model, a)
        entry = {"order": a, **_tagged(rate.value, unit), "approximate": rate.approximate}
        if rate.approximate:
            entry["block_length"] = rate.block_length
        source["renyi"].append(entry)
    recurrence = [recurrence_probability(model, s) for s in range(1, 65)]
    source["R"] = _tagged(max(recurrence), "probability")
    if isinstance(model, Markov):
        source["mixing"] = [
            {"s": s, **_tagged(mixing_coefficient_bound(model.kernel, s), "total variation")} for s in steps
        ]
    report["source"] = source

    thresholds = {"log_n": DetectorConfig(mu=mu or 1.0)}
    if "beta" in doc:
        ell = _schema(lambda: overlap_prior(n, read_length(float(doc["beta"]), n, k)).ell, text)
        report["ell"] = ell
        thresholds["prior_odds"] = DetectorConfig(mu=mu)
    else:
        # no read length given: scan overlaps up to twice log n
        ell = max(2, min(n // 2, int(math.ceil(2 * log_n))))

    rate = h1 if channel.is_identity else None
    t_mdo = {}
    if channel.is_identity:
        t_mdo = {name: min_detectable_overlap(model, n, ell, cfg.mu) for name, cfg in thresholds.items()}
    if isinstance(model, Memoryless):
        stats = pair_statistics(model.pmf, channel)
        rate = stats.mutual_info
        pair = {
            "I": _tagged(stats.mutual_info, unit),
            "lambda_min": _tagged(stats.lambda_min, "ratio"),
            "lambda_max": _tagged(stats.lambda_max, "ratio"),
            "sigma2": _tagged(stats.sigma2, "nats^2"),
            "m3": _tagged(stats.m3, "nats"),
        }
        if stats.mutual_info <= 0:
            report["flags"].append("detection impossible: I = 0")
        else:
            n_ell = overlap_prior(n, ell).n_ell if "beta" in doc else n
            t_ref = max(1, int(math.ceil(log_n / stats.mutual_info)))
            exps = chernoff_exponents(stats, n_ell, t_ref)
            pair["exponents"] = {**exps.to_dict(), "t": t_ref, "n_ell": n_ell}
            pair["theta_star"] = {"epsilon": eps, **_tagged(theta_star(stats, eps), "per log n")}
        if not channel.is_identity:
            for name, cfg in thresholds.items():
                t_mdo[name] = min_detectable_overlap(stats, n, ell, cfg.mu)
        report["pair"] = pair
    elif not channel.is_identity:
        report["flags"].append("noisy analytics need a memoryless source")
    report["t_mdo"] = {name: _tagged(v, "symbols") for name, v in t_mdo.items()}
    if rate is not None:
        report["t_star"] = _tagged(log_n / rate if rate > 0 else math.inf, "symbols")
    return report


# -- oracle-check -----------------------------------------------------------------------


def oracle_check(doc: dict, seed: int, text: str = "") -> tuple[bool, dict]:
    """Compare both detectors against the brute-force posterior argmax on random instances."""
    _check_keys(doc, {"n", "ell", "instances", "seed", "models", "channels"}, text)
    n = int(doc.get("n", 16))
    ell = int(doc.get("ell", 4))
    instances = int(doc.get("instances", 10_000))
    models = _schema(
        lambda: [model_from_dict(m) for m in doc["models"]] if "models" in doc
        else [Memoryless(Pmf([0.5, 0.5])), Memoryless(Pmf([0.75, 0.25]))], text)
    channels = _schema(
        lambda: [channel_from_dict(c) for c in doc["channels"]] if "channels" in doc
        else [identity_channel(2), binary_symmetric_channel(0.1), binary_symmetric_channel(0.25)], text)
    _schema(lambda: overlap_prior(n, ell), text)
    if instances < 1:
        raise ConfigError("instances must be positive", _key_line(text, "'instances'"))
    rng = stream_generator(seed, 0x0AC1E, n, ell)
    checked = 0
    for i in range(instances):
        model = models[i % len(models)]
        channel = channels[(i // len(models)) % len(channels)]
        pair = sample_pair(model, channel, n, ell, rng)
        if channel.is_identity:
            decision = detect_noiseless(pair, model, n)
        else:
            decision = detect_noisy(pair, pair_statistics(model.pmf, channel), n)
        post = enumerate_posterior(pair, model, channel, n, ell)
        expected = tie_rule_argmax(post.log_unnormalized, COMPARE_EPS)
        checked += 1
        if decision.t_hat != expected:
            failure = {
                "instance": i,
                "model": model_to_dict(model),
                "channel": {"rows": channel.rows.tolist()},
                "pair": pair.to_dict(),
                "detector": int(decision.t_hat),
                "oracle": int(expected),
            }
            return False, {"n": n, "ell": ell, "checked": checked, "first_failure": failure}
    return True, {"n": n, "ell": ell, "checked": checked, "mismatches": 0}


# -- dispatch ---------------------------------------------------------------------------


def _experiment(doc: dict, seed: int | None, text: str) -> tuple[ExperimentConfig, int | None]:
    doc = dict(doc)
    workers = doc.pop("workers", None)
    if seed is not None:
        doc["seed"] = seed
    config = _schema(lambda: ExperimentConfig.from_dict(doc), text)
    return config, workers


def run(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="overlapdetect", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=["analyze", "simulate", "sweep", "oracle-check"])
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    out = Path(args.out)
    try:
        doc, text = load_config(args.config)
        if args.command == "analyze":
            report = analyze_report(doc, text)
            _write_atomic(out / "analysis.json", _json_text(report))
        elif args.command in ("simulate", "sweep"):
            config, workers = _experiment(doc, args.seed, text)
            if args.command == "simulate":
                report = run_experiment(config, workers)
                doc_out, rows = report.to_dict(), report.csv_rows()
            else:
                result = _schema(lambda: sweep(config, workers), text)
                doc_out, rows = result.to_dict(), result.report.csv_rows()
            stem = args.command
            _write_atomic(out / f"{stem}.json", _json_text(doc_out))
            _write_atomic(out / f"{stem}.csv", _csv_text(rows))
        else:
            seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
            ok, summary = oracle_check(doc, seed, text)
            _write_atomic(out / "oracle_check.json", _json_text(summary))
            if not ok:
                print("oracle mismatch: " + json.dumps(summary["first_failure"], sort_keys=True), file=sys.stderr)
                return EXIT_MISMATCH
    except ConfigError as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
