"""Acceptance criteria. Each test records one PASS/FAIL line in the terminal summary."""

import json
import math
from pathlib import Path

import numpy as np

from neurowave import autograd as ag
from neurowave.autograd import Tensor
from neurowave.cli import main
from neurowave.corpus import LabelClass, TrialEntry, DatasetManifest, class_stats, partition, validate_manifest
from neurowave.dsp import BANDS, apply_zero_phase, design_bandpass, differential_entropy
from neurowave.hpo import enumerate_space
from neurowave.model import OPTIMAL_CONFIG, ModelConfig, forward, init_params, make_batch
from neurowave.reporting import reference_section
from neurowave.trainer import evaluate, metrics_from_confusion

README = Path(__file__).resolve().parents[1] / "README.md"
FS = 200


def test_01_published_confusion_metrics(criterion):
    rep = metrics_from_confusion([[54, 0, 7], [2, 74, 3], [2, 3, 73]])
    note = reference_section()["inconsistency"]
    ok = (abs(rep.accuracy - 0.9220) <= 5e-4 and abs(rep.macro_f1 - 0.9210) <= 1e-3
          and "0.9082" in note and "0.9222" in note)
    criterion(1, "metrics oracle on the published confusion matrix", ok,
              f"accuracy {rep.accuracy:.6f}, macro-F1 {rep.macro_f1:.6f}; report notes 0.9082/0.9222 mismatch")


def test_02_corpus_statistics(criterion):
    per_culture = {"CN": (225, 225, 225), "FR": (144, 168, 168), "DE": (80, 120, 100)}
    entries = [TrialEntry(f"{c}-{lab.key}-{i}", "x.etrl", lab, c, 62, 1)
               for c, counts in per_culture.items() for lab, n in zip(LabelClass, counts) for i in range(n)]
    counts = validate_manifest(DatasetManifest.from_entries(entries))
    subtotals = [sum(v) for v in per_culture.values()]
    ratio = class_stats((449, 513, 493))["imbalance_ratio"]
    ok = (abs(ratio - 0.132) <= 5e-4 and subtotals == [675, 480, 300] and counts["total"] == 1455
          and (counts["negative"], counts["neutral"], counts["positive"]) == (449, 513, 493))
    criterion(2, "corpus statistics", ok, f"imbalance {ratio:.5f}; totals {subtotals} -> {counts['total']}")


def test_03_split_sizes(criterion):
    ids = [f"t{i}" for i in range(1455)]
    sizes = {partition(ids, seed=s).sizes() for s in range(50)}
    criterion(3, "split sizes for 1455 trials", sizes == {(1018, 219, 218)}, f"sizes over 50 seeds: {sorted(sizes)}")


def test_04_grid_arithmetic(criterion):
    grid = enumerate_space()
    text = README.read_text() if README.exists() else ""
    ok = len(grid) == 768 and len(set(grid)) == 768 and OPTIMAL_CONFIG in grid and "1,024" in text
    criterion(4, "search grid enumeration", ok,
              f"{len(grid)} configs, {len(set(grid))} distinct, optimum present: {OPTIMAL_CONFIG in grid}; "
              f"1,024 discrepancy documented: {'1,024' in text}")


def test_05_differential_entropy(criterion):
    unit = float(differential_entropy(1.0))
    zero = float(differential_entropy(1 / (2 * math.pi * math.e)))
    sweep = differential_entropy(np.linspace(1e-6, 1e3, 1000))
    ok = abs(unit - 1.418939) <= 1e-6 and abs(zero) <= 1e-9 and np.all(np.diff(sweep) > 0)
    criterion(5, "differential entropy analytic suite", ok, f"DE(1)={unit:.7f}, DE(1/2pie)={zero:.1e}, monotone sweep")


def _amplitude(y, freq):
    n = len(y)
    idx = np.arange(n // 4, 3 * n // 4)
    t = idx / FS
    basis = np.column_stack([np.sin(2 * np.pi * freq * t), np.cos(2 * np.pi * freq * t)])
    coef, *_ = np.linalg.lstsq(basis, y[idx], rcond=None)
    return float(np.hypot(*coef))


def test_06_filter_bank(criterion):
    t = np.arange(10 * FS) / FS
    centers = [b.center_hz for b in BANDS]
    noise = np.random.default_rng(0).normal(size=4000)
    worst_pass, worst_stop, lags = 0.0, np.inf, []
    for i, band in enumerate(BANDS):
        coeffs = design_bandpass(band, FS)
        x = np.sin(2 * np.pi * centers[i] * t + 0.3)
        worst_pass = max(worst_pass, abs(20 * np.log10(_amplitude(apply_zero_phase(x, coeffs), centers[i]))))
        for j in (i - 1, i + 1):
            if 0 <= j < len(BANDS):
                y = apply_zero_phase(np.sin(2 * np.pi * centers[j] * t + 0.3), coeffs)
                worst_stop = min(worst_stop, -20 * np.log10(_amplitude(y, centers[j])))
        y = apply_zero_phase(noise, coeffs)
        span = slice(1000, 3000)
        scores = {k: float(np.dot(noise[span], y[1000 + k : 3000 + k])) for k in range(-40, 41)}
        lags.append(max(scores, key=scores.get))
    ok = worst_pass <= 1.0 and worst_stop >= 20.0 and lags == [0] * 5
    criterion(6, "filter bank pass/stop and zero lag", ok,
              f"worst passband deviation {worst_pass:.3f} dB, weakest adjacent rejection {worst_stop:.1f} dB, "
              f"lags {lags}")


def _op_cases(rng):
    """(name, threshold, loss builder, inputs to check) for one random draw."""
    p = lambda *s: Tensor(rng.normal(size=s), requires_grad=True)  # noqa: E731
    R = lambda *s: rng.normal(size=s)  # noqa: E731
    cases = []

    a, b, r = p(4, 5), p(5, 3), R(4, 3)
    cases.append(("matmul", 1e-6, lambda: ag.sum_all(ag.mul(ag.matmul(a, b), r)), [a, b]))
    x, w, bias, r2 = p(3, 7), p(2, 3, 5), p(2), R(2, 7)
    cases.append(("conv1d", 1e-6, lambda: ag.sum_all(ag.mul(ag.conv1d_same(x, w, bias), r2)), [x, w, bias]))
    h, g, s, r3 = p(4, 8), p(8), p(8), R(4, 8)
    cases.append(("layer_norm", 1e-6, lambda: ag.sum_all(ag.mul(ag.layer_norm(h, g, s), r3)), [h, g, s]))
    wts = {f"w{n}": Tensor(0.5 * rng.normal(size=(8, 8)), requires_grad=True) for n in "qkvo"}
    wts.update({f"b{n}": Tensor(0.1 * rng.normal(size=8), requires_grad=True) for n in "qvo"})
    xa, r4, mask = p(5, 8), R(5, 8), np.array([1, 1, 0, 1, 1], bool)
    cases.append(("attention", 1e-5,
                  lambda: ag.sum_all(ag.mul(ag.multi_head_attention(xa, wts, mask, 2), r4)), [xa, *wts.values()]))
    z, y = p(4, 3), rng.integers(0, 3, 4)
    cases.append(("cross_entropy", 1e-6, lambda: ag.softmax_cross_entropy(z, y), [z]))
    u, r5, seed = p(6, 4), R(6, 4), int(rng.integers(1 << 30))
    cases.append(("relu+dropout", 1e-6,
                  lambda: ag.sum_all(ag.mul(ag.dropout(ag.relu(u), 0.3, True, seed), r5)), [u]))
    m, r6, pm = p(2, 4, 3), R(2, 3), np.array([[1, 0, 1, 0], [1, 1, 1, 1]], bool)
    cases.append(("masked_mean", 1e-6, lambda: ag.sum_all(ag.mul(ag.masked_mean(m, pm), r6)), [m]))
    return cases


def test_07_gradient_suite(criterion, tiny_config):
    worst: dict[str, tuple[float, float]] = {}
    for seed in range(10):
        for name, limit, build, inputs in _op_cases(np.random.default_rng(seed)):
            err = max(ag.finite_difference_check(lambda _: build(), t) for t in inputs)
            worst[name] = (max(err, worst.get(name, (0.0, limit))[0]), limit)

    model_err = 0.0
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        params = init_params(tiny_config, seed)
        for t in params.values():
            if t.data.ndim == 1:
                t.data[:] = rng.normal(1.0 if t.name.endswith(".gain") else 0.0, 0.3, t.shape)
        batch = make_batch([rng.normal(2, 1, (3, 5, 5)), rng.normal(2, 1, (2, 5, 5))], labels=[0, 2])
        loss = lambda _: ag.softmax_cross_entropy(forward(params, batch), batch.labels)  # noqa: E731
        model_err = max(model_err, *(ag.finite_difference_check(loss, t) for t in params.values()))
    worst["full_model"] = (model_err, 1e-4)

    ok = all(err <= limit for err, limit in worst.values())
    detail = ", ".join(f"{k} {e:.1e}/{lim:.0e}" for k, (e, lim) in worst.items())
    criterion(7, "finite-difference gradient suite (10 seeds)", ok, detail)


def test_08_masking_invariance(criterion):
    params = init_params(OPTIMAL_CONFIG, 5)
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 4))
        feats = [rng.normal(2, 1, (int(rng.integers(1, 12)), 5, 5)) for _ in range(n)]
        alone = forward(params, make_batch(feats, labels=[0] * n)).data
        longer = rng.normal(2, 1, (int(rng.integers(12, 25)), 5, 5))
        padded = forward(params, make_batch(feats + [longer], labels=[0] * (n + 1))).data[:n]
        worst = max(worst, float(np.max(np.abs(alone - padded))))
    criterion(8, "masking invariance (20 cases)", worst <= 1e-9, f"max logit change {worst:.2e}")


def test_09_overfit_oracle(criterion, overfit_run, synthetic_corpus):
    hist, best = overfit_run["history"], overfit_run["best"]
    final_train = hist.records[-1].train_accuracy
    test_acc = evaluate(best.params, synthetic_corpus["test"]).accuracy
    vals = hist.column("val_accuracy")
    history_ok = (hist.best_val_accuracy == max(vals) and hist.best_epoch == vals.index(max(vals)) + 1
                  and best.epoch == hist.best_epoch and len(hist.records) == 100)
    ok = final_train >= 0.99 and test_acc >= 0.80 and history_ok
    criterion(9, "end-to-end overfit on the synthetic corpus", ok,
              f"final train {final_train:.3f}, test {test_acc:.3f} (best epoch {hist.best_epoch}, "
              f"val {hist.best_val_accuracy:.3f}); history invariants {'hold' if history_ok else 'broken'}")


def _cli(*argv):
    return main([str(a) for a in argv])


def _workspace(root: Path, model: dict, epochs: int, per_class: int = 20, duration: float = 10):
    doc = {
        "seed": 7,
        "paths": {"dataset_dir": str(root / "raw"), "features_dir": str(root / "features"),
                  "split": str(root / "split.json"), "checkpoint": str(root / "best.eckp"),
                  "reports_dir": str(root / "reports")},
        "synth": {"n_trials_per_class": per_class, "duration_s": duration},
        "train": {"epochs": epochs},
        "hpo": {"n_samples": 3, "proxy_epochs": 2},
        "model": model,
    }
    (root / "config.json").write_text(json.dumps(doc))
    return root / "config.json"


def test_10_determinism(criterion, tmp_path):
    codes, ckpts, choices = [], [], []
    for run in ("a", "b"):
        root = tmp_path / run
        root.mkdir()
        cfg = _workspace(root, OPTIMAL_CONFIG.to_dict(), epochs=10)
        for cmd in ("synth", "featurize", "split", "train", "tune"):
            codes.append(_cli(cmd, "--config", cfg))
        ckpts.append((root / "best.eckp").read_bytes())
        choices.append((root / "reports" / "best_config.json").read_text())
    ok = codes == [0] * 10 and ckpts[0] == ckpts[1] and choices[0] == choices[1]
    criterion(10, "determinism of train and tune", ok,
              f"checkpoints identical: {ckpts[0] == ckpts[1]} ({len(ckpts[0])} bytes); "
              f"tune selections identical: {choices[0] == choices[1]}")


def test_11_pipeline_smoke(criterion, tmp_path):
    smallest = ModelConfig(8, 3, 2, 128, 4, 32, 8, 0.1, 1e-3).to_dict()
    cfg = _workspace(tmp_path, smallest, epochs=5, per_class=10, duration=5)
    codes = [_cli(cmd, "--config", cfg) for cmd in ("synth", "featurize", "split", "train", "eval")]
    report = tmp_path / "reports" / "eval_report_test.json"
    metrics = json.loads(report.read_text())["metrics"] if report.exists() else {}
    cm = np.array(metrics.get("confusion", [[0]]))
    acc = metrics.get("accuracy", -1)
    ok = codes == [0] * 5 and 0 <= acc <= 1 and cm.sum() > 0 and np.trace(cm) / cm.sum() == acc
    criterion(11, "CLI pipeline smoke", ok, f"exit codes {codes}, accuracy {acc}, trace/total {np.trace(cm)}/{cm.sum()}")
