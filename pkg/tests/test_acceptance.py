"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import itertools
import math
import time
from collections import Counter

import numpy as np
from scipy import stats

from conftest import record
from lrclass.classify import make_classifier, naive_bayes_classify_pair
from lrclass.cli import main
from lrclass.freqdata import synthetic_table, table_from_mapping, write_frequency_table
from lrclass.kinship import LrEngine, compute_lr_set, joint_genotype_prob, profile_likelihood
from lrclass.metrics import ConfusionMatrix, kfold_evaluate, summarize
from lrclass.power import DEFAULT_ALPHA, SimulationPlan, estimate_power, scale_alpha, simulate_statistics
from lrclass.simulate import (
    DOMAIN_ALT,
    FULL_SIBLING,
    PARENT_CHILD,
    UNRELATED,
    Genotype,
    indices_to_labels,
    iter_pair_blocks,
    profile_from_indices,
    simulate_individuals,
)

THAI_PRIORS = [0.11083, 0.36944, 0.35383, 0.16590]
THETAS = {"unrelated": UNRELATED, "pc": PARENT_CHILD, "sb": FULL_SIBLING}


def unordered_genotypes(alleles):
    return [Genotype(a, b) for a, b in itertools.combinations_with_replacement(alleles, 2)]


def test_criterion_1_worked_example(example_table, example_profiles):
    x1, x2 = example_profiles
    t0 = time.perf_counter()
    p_x1_a1 = math.exp(profile_likelihood(x1, example_table.distributions(0)))
    cls, post = naive_bayes_classify_pair(x1, x2, example_table)
    elapsed = time.perf_counter() - t0
    want = np.array([0.2903, 0.0431, 0.0729, 0.5938])
    likelihood_ok = abs(p_x1_a1 - 4.3477e-7) <= 1e-3 * 4.3477e-7
    posterior_ok = bool(np.all(np.abs(post - want) <= 5e-4))
    ok = likelihood_ok and posterior_ok and cls == 3 and elapsed < 1.0
    record(
        1,
        ok,
        f"P(X1|A1)={p_x1_a1:.5e} (ok={likelihood_ok}); posteriors {np.round(post, 4).tolist()} "
        f"vs {want.tolist()} (ok={posterior_ok}); class {cls + 1}; {elapsed:.3f}s",
    )


def test_criterion_2_metric_fixtures(reference_confusion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for name, m in reference_confusion["matrices"].items():
        s = summarize(ConfusionMatrix(np.array(m)))
        target = reference_confusion["overall_accuracy"][name]
        good = abs(s.overall_accuracy - target) <= 5e-4
        ok &= good
        parts.append(f"{name} {s.overall_accuracy:.4f}")
    recall_ne = summarize(ConfusionMatrix(np.array(reference_confusion["matrices"]["nb"]))).per_class["recall"][1]
    ok &= abs(recall_ne - 0.7862) <= 1e-4
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 1.0
    record(2, ok, f"overall accuracy {', '.join(parts)}; NE recall {recall_ne:.4f}; {elapsed:.3f}s")


def test_criterion_3_normalization():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_sum, worst_sym = 0.0, 0.0
    for theta in (UNRELATED, PARENT_CHILD, FULL_SIBLING):
        for _ in range(20):
            k = int(rng.integers(3, 5))
            f = rng.dirichlet(np.ones(k))
            freq = {str(10 + a): float(v) for a, v in enumerate(f)}
            gs = unordered_genotypes(list(freq))
            total = 0.0
            for g1, g2 in itertools.product(gs, repeat=2):
                p12 = joint_genotype_prob(g1, g2, theta, freq)
                p21 = joint_genotype_prob(g2, g1, theta, freq)
                total += p12
                worst_sym = max(worst_sym, abs(p12 - p21))
            worst_sum = max(worst_sum, abs(total - 1.0))
    elapsed = time.perf_counter() - t0
    ok = worst_sum <= 1e-12 and worst_sym <= 1e-12 and elapsed < 5.0
    record(3, ok, f"max |sum-1|={worst_sum:.1e}, max asymmetry={worst_sym:.1e}; {elapsed:.2f}s")


def test_criterion_4_simulation_consistency():
    freq = {"a": 0.5, "b": 0.3, "c": 0.2}
    table = table_from_mapping({"L": {k: [v] for k, v in freq.items()}}, ["A"])
    gs = unordered_genotypes(list(freq))
    n = 100_000
    t0 = time.perf_counter()
    pvalues = {}
    for name, theta in THETAS.items():
        counts = Counter()
        for _, g1, g2, _, _ in iter_pair_blocks(table, theta, n, 17, DOMAIN_ALT, shared_subpop=True):
            counts.update(zip(map(tuple, g1[:, 0]), map(tuple, g2[:, 0])))
        observed, expected, impossible_hits = [], [], 0
        index = {a: i for i, a in enumerate(table.loci[0].alleles)}
        for g1, g2 in itertools.product(gs, repeat=2):
            key = (tuple(index[a] for a in g1), tuple(index[a] for a in g2))
            p = joint_genotype_prob(g1, g2, theta, freq)
            if p == 0.0:
                impossible_hits += counts[key]
                continue
            observed.append(counts[key])
            expected.append(p * n)
        pvalues[name] = stats.chisquare(observed, expected).pvalue if not impossible_hits else 0.0
    elapsed = time.perf_counter() - t0
    ok = all(p > 1e-3 for p in pvalues.values()) and elapsed < 30.0
    record(4, ok, "chi-square p " + ", ".join(f"{k}={v:.3f}" for k, v in pvalues.items()) + f"; {elapsed:.1f}s")


def test_criterion_5_statistic_ordering(substructured_table):
    table = substructured_table
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    n = 10_000
    # a mix of unrelated, parent-child and sibling pairs
    thetas = [UNRELATED, PARENT_CHILD, FULL_SIBLING]
    blocks = [
        b
        for k, th in enumerate(thetas)
        for b in iter_pair_blocks(table, th, n // 3 + 1, 31 + k, DOMAIN_ALT, shared_subpop=k > 0)
    ]
    g1 = np.concatenate([b[1] for b in blocks])[:n]
    g2 = np.concatenate([b[2] for b in blocks])[:n]
    order = rng.permutation(n)
    g1, g2 = g1[order], g2[order]
    violations = 0
    for k in range(n):
        res = compute_lr_set(profile_from_indices(table, g1[k]), profile_from_indices(table, g2[k]), FULL_SIBLING, table)
        if not (res.lr_min <= res.lr_avg <= res.lr_max) or res.lr_class not in res.per_subpop_lr:
            violations += 1
    single = synthetic_table(1, 15, 10, seed=3)
    s1, s2 = [], []
    for _, a, b, _, _ in iter_pair_blocks(single, FULL_SIBLING, n, 9, DOMAIN_ALT, shared_subpop=True):
        s1.append(a)
        s2.append(b)
    log_stats, _, _ = LrEngine(single, FULL_SIBLING).statistics(np.concatenate(s1), np.concatenate(s2))
    lin = np.exp(log_stats)
    spread = np.max(np.abs(lin - lin[:, :1]) / lin[:, :1])
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and spread <= 1e-10 and elapsed < 30.0
    record(5, ok, f"{violations} ordering violations in {n} pairs; R=1 max relative spread {spread:.1e}; {elapsed:.1f}s")


def test_criterion_6_pipeline_size(substructured_table):
    alpha, n = 1e-3, 1_000_000
    plan = SimulationPlan(substructured_table, UNRELATED, n, n, (alpha,), 606)
    t0 = time.perf_counter()
    report = estimate_power(plan)
    elapsed = time.perf_counter() - t0
    band = 3 * math.sqrt(alpha * (1 - alpha) / n)
    powers = {e.statistic: e.power for e in report.entries}
    rate = 2 * n / elapsed
    ok = all(abs(p - alpha) <= band for p in powers.values()) and elapsed < 600 and rate >= 3000
    # theta (1,0,0) makes every LR exactly 1, so also check a non-degenerate statistic:
    # sibling LRs (always finite) on two independent unrelated samples
    m = 200_000
    pc_a = SimulationPlan(substructured_table, FULL_SIBLING, m, m, (alpha,), 61)
    pc_b = SimulationPlan(substructured_table, FULL_SIBLING, m, m, (alpha,), 62)
    other = simulate_statistics(pc_b, "null")
    pc_powers = {e.statistic: e.power for e in estimate_power(pc_a, alt_stats=other).entries}
    pc_band = 3 * math.sqrt(2 * alpha * (1 - alpha) / m)
    ok &= all(abs(p - alpha) <= pc_band for p in pc_powers.values())
    record(
        6,
        ok,
        "power " + ", ".join(f"{k}={v:.5f}" for k, v in powers.items())
        + f" (band ±{band:.5f}); {elapsed:.0f}s, {rate:,.0f} LR sets/s; sibling-statistic null-vs-null "
        + ", ".join(f"{v:.5f}" for v in pc_powers.values()) + f" (band ±{pc_band:.5f})",
    )


def test_criterion_7_sibling_ranking():
    table = synthetic_table(4, 15, 10, divergence=0.03, priors=THAI_PRIORS, seed=7)
    n = 100_000
    alpha = scale_alpha(DEFAULT_ALPHA["sb"], n)
    t0 = time.perf_counter()
    lines, ok = [], True
    for seed in (1, 2, 3):
        report = estimate_power(SimulationPlan(table, FULL_SIBLING, n, n, (alpha,), seed))
        powers = {e.statistic: e.power for e in report.entries}
        last = min(powers, key=powers.get)
        ok &= last == "lr_max"
        lines.append(f"seed {seed}: " + " ".join(f"{k}={v:.3f}" for k, v in powers.items()))
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 900
    record(7, ok, f"alpha={alpha:g}; " + "; ".join(lines) + f"; {elapsed:.0f}s")


def test_criterion_8_classifier_parity():
    table = synthetic_table(4, 15, 10, divergence=0.01, priors=THAI_PRIORS, seed=7)
    t0 = time.perf_counter()
    geno, y = simulate_individuals(table, 100_000, seed=8)
    labels = indices_to_labels(table, geno)
    classifiers = [make_classifier(m, table) for m in ("nb", "lrA", "lrB")]
    results = kfold_evaluate(labels, y, 5, classifiers, seed=8, n_classes=4)
    acc = {name: r.summary.overall_accuracy for name, r in results.items()}
    elapsed = time.perf_counter() - t0
    ok = max(acc.values()) - min(acc.values()) <= 0.05 and min(acc.values()) > 0.25 and elapsed < 1800
    record(8, ok, "5-fold accuracy " + ", ".join(f"{k}={v:.4f}" for k, v in acc.items()) + f"; {elapsed:.0f}s")


def test_criterion_9_determinism(tmp_path, substructured_table):
    freq = tmp_path / "freq.csv"
    write_frequency_table(substructured_table, freq)
    pairs = tmp_path / "pairs.csv"
    main(["simulate", "--freq", str(freq), "--pairs", "--n", "300", "--seed", "1", "--out", str(pairs)])

    def commands(d):
        f = str(freq)
        return {
            "simulate": ["simulate", "--freq", f, "--n", "5000", "--seed", "3", "--out", f"{d}/profiles.csv"],
            "power": ["power", "--freq", f, "--relationship", "sb", "--n-null", "20000", "--n-alt", "5000",
                      "--alpha", "1e-3", "--sweep", "1e-4:1e-3:4", "--seed", "3", "--out", f"{d}/report.json",
                      "--curves", f"{d}/curves.csv", "--lr-out", f"{d}/lr.csv"],
            "thresholds": ["thresholds", "--freq", f, "--relationship", "pc", "--n-null", "20000",
                           "--alpha", "1e-3", "--seed", "3", "--out", f"{d}/thresholds.json"],
            "classify-eval": ["classify-eval", "--freq", f, "--train-size", "3000", "--k", "3",
                              "--seed", "3", "--out", f"{d}/eval.json"],
            "lr": ["lr", "--freq", f, "--pairs", str(pairs), "--relationship", "pc", "--seed", "3",
                   "--out", f"{d}/pairs_lr.csv"],
        }

    t0 = time.perf_counter()
    outputs = {}
    for workers in (1, 4, 8):
        d = tmp_path / f"w{workers}"
        d.mkdir()
        for reps in ("a", "b"):
            run_dir = d / reps
            run_dir.mkdir()
            for name, argv in commands(run_dir).items():
                assert main(argv + ["--workers", str(workers)]) == 0, name
            outputs[workers, reps] = {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())}
    reference = outputs[1, "a"]
    mismatched = sorted(
        f"{key}:{name}" for key, files in outputs.items() for name, data in files.items() if reference[name] != data
    )
    elapsed = time.perf_counter() - t0
    record(
        9,
        not mismatched and len(reference) == 7,
        f"{len(reference)} output files x 2 reruns x workers {{1,4,8}}; mismatches: {mismatched or 'none'}; {elapsed:.0f}s",
    )
