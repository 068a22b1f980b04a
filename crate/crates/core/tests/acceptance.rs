//! Acceptance suite. Prints one PASS/FAIL line per criterion and a summary.
//! Failures are reported, not raised, so the rest of the workspace still runs;
//! set `ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

mod common;

use std::time::Instant;

use common::{brute_force_probabilities, exact_matrix, instance, max_length_error, path_length, perturb};
use treetomo::estimate::{deviation_curve, distances_from_moments, log_det_distances, Moments};
use treetomo::harness::{aggregate, run_experiment, run_reverse_experiment, run_trial, trial_instance, Algorithm, Direction, ExperimentConfig, ExperimentResult};
use treetomo::metrics::{log_det_distance, true_loss_distance, JointLeafDistribution, TransitionPair};
use treetomo::tree::trees_equal;
use treetomo::{
    nj_binary, nj_general, rnj_binary, rnj_general, simulate_multicast, simulate_reverse_multicast,
    EstimatorConfig, InferenceConfig, LinkMetric, TreeBuilder, TreeKind,
};

type Verdict = (bool, String);

fn exact_recovery() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in 0..1000u64 {
        let n = 4 + (seed as usize % 29);
        for kind in [TreeKind::Binary, TreeKind::General] {
            let (t, m) = instance(n, kind, (0.01, 1.0), seed);
            let d = exact_matrix(&t, &m);
            let outs = match kind {
                TreeKind::Binary => [("nj", nj_binary(&d)), ("rnj", rnj_binary(&d))],
                TreeKind::General => {
                    let cfg = InferenceConfig::new(m.min_length().unwrap()).unwrap();
                    [("nj", nj_general(&d, &cfg)), ("rnj", rnj_general(&d, &cfg))]
                }
            };
            for (name, out) in outs {
                let out = out.unwrap();
                if !trees_equal(&t, out.tree()).unwrap() {
                    failures.push(format!("{name}/{kind}/{seed}: topology"));
                    continue;
                }
                let err = max_length_error(&t, &m, &out);
                worst = worst.max(err);
                if err >= 1e-9 {
                    failures.push(format!("{name}/{kind}/{seed}: length error {err:.3e}"));
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        failures.is_empty() && secs < 60.0,
        format!(
            "2000 trees x 2 algorithms, {} failures {:?}, max length error {worst:.2e}, {secs:.1}s",
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn radius() -> Verdict {
    let mut ok_binary = 0;
    let mut ok_general = 0;
    for seed in 0..500u64 {
        let n = 4 + (seed as usize % 29);
        let (t, m) = instance(n, TreeKind::Binary, (0.01, 1.0), seed + 10_000);
        let delta = m.min_length().unwrap();
        let d = perturb(&exact_matrix(&t, &m), 0.49 * delta, seed);
        if trees_equal(&t, rnj_binary(&d).unwrap().tree()).unwrap() {
            ok_binary += 1;
        }

        let (t, m) = instance(n, TreeKind::General, (0.01, 1.0), seed + 20_000);
        let delta = m.min_length().unwrap();
        let d = perturb(&exact_matrix(&t, &m), 0.24 * delta, seed);
        let out = rnj_general(&d, &InferenceConfig::new(delta).unwrap()).unwrap();
        if trees_equal(&t, out.tree()).unwrap() {
            ok_general += 1;
        }
    }
    (
        ok_binary == 500 && ok_general == 500,
        format!("binary at 0.49 delta: {ok_binary}/500, general at 0.24 delta: {ok_general}/500"),
    )
}

fn scenario(kind: TreeKind) -> ExperimentConfig {
    ExperimentConfig {
        tree_kind: kind,
        n_leaves: 10,
        alpha_range: (0.90, 0.99),
        sample_sizes: (7..=14).map(|e| 1 << e).collect(),
        trials: 100,
        algorithms: vec![Algorithm::Nj, Algorithm::Rnj],
        base_seed: 20_100_521,
        ..ExperimentConfig::default()
    }
}

fn curve(res: &ExperimentResult, alg: Algorithm) -> Vec<(f64, Option<f64>)> {
    res.config
        .sample_sizes
        .iter()
        .map(|&n| {
            let r = res.row(alg, n).unwrap();
            (r.fraction_correct, r.mean_eps_e)
        })
        .collect()
}

fn fmt_curve(c: &[(f64, Option<f64>)]) -> String {
    c.iter().map(|(f, _)| format!("{f:.2}")).collect::<Vec<_>>().join(" ")
}

fn consistency(results: &[ExperimentResult]) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for res in results {
        let c = curve(res, Algorithm::Rnj);
        let last = c.last().unwrap().0;
        let monotone = c.windows(2).all(|w| w[1].0 >= w[0].0 - 0.05);
        let eps_ratio = match (c[0].1, c.last().unwrap().1) {
            (Some(a), Some(b)) => Some(b / a),
            _ => None,
        };
        let eps_ok = eps_ratio.is_some_and(|r| r <= 0.2);
        ok &= last >= 0.95 && monotone && eps_ok;
        notes.push(format!(
            "{}: rnj [{}] eps ratio {}",
            res.config.tree_kind,
            fmt_curve(&c),
            eps_ratio.map_or("n/a".into(), |r| format!("{r:.3}"))
        ));
    }
    (ok, notes.join("; "))
}

fn rnj_vs_nj(general: &ExperimentResult) -> Verdict {
    let rnj = curve(general, Algorithm::Rnj);
    let nj = curve(general, Algorithm::Nj);
    let never_worse = rnj.iter().zip(&nj).all(|(r, n)| r.0 >= n.0 - 0.02);
    let sometimes_better = rnj.iter().zip(&nj).any(|(r, n)| r.0 > n.0);
    (
        never_worse && sometimes_better,
        format!("general rnj [{}] vs nj [{}]", fmt_curve(&rnj), fmt_curve(&nj)),
    )
}

fn estimator_decay() -> Verdict {
    // s - a; a - {b, 3}; b - {1, 2, 4}
    let mut bld = TreeBuilder::new("s");
    let a = bld.add_internal(0);
    let b = bld.add_internal(a);
    let l3 = bld.add_leaf(a, "3");
    let l1 = bld.add_leaf(b, "1");
    let l2 = bld.add_leaf(b, "2");
    let l4 = bld.add_leaf(b, "4");
    let tree = bld.build().unwrap();
    let metric =
        LinkMetric::from_rates([(a, 0.95), (b, 0.9), (l3, 0.92), (l1, 0.97), (l2, 0.91), (l4, 0.94)])
            .unwrap();
    let sizes: Vec<usize> = (6..=14).map(|e| 1 << e).collect();
    let pts = deviation_curve(&tree, &metric, &sizes, 200, 0.05, 7, &EstimatorConfig::default()).unwrap();
    let probs: Vec<f64> = pts.iter().map(|p| p.prob_exceed).collect();
    let monotone = probs.windows(2).all(|w| w[1] <= w[0] + 1.0 / 200.0);
    let fit: Vec<(f64, f64)> = pts
        .iter()
        .filter(|p| p.prob_exceed > 0.0)
        .map(|p| (p.n as f64, p.prob_exceed.ln()))
        .collect();
    let slope = if fit.len() >= 2 {
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / fit.len() as f64;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / fit.len() as f64;
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    } else {
        None
    };
    (
        monotone && slope.is_some_and(|s| s < 0.0),
        format!(
            "P(any |d_hat - d| >= 0.05) = [{}], log-slope {}",
            probs.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join(" "),
            slope.map_or("n/a".into(), |s| format!("{s:.3e}"))
        ),
    )
}

fn reverse_equivalence() -> Verdict {
    let reverse = ExperimentConfig {
        direction: Direction::Reverse,
        n_leaves: 8,
        sample_sizes: vec![1 << 8, 1 << 10, 1 << 12],
        trials: 100,
        base_seed: 77,
        ..ExperimentConfig::default()
    };
    let forward = ExperimentConfig {
        direction: Direction::Forward,
        ..reverse.clone()
    };
    let res = run_reverse_experiment(&reverse).unwrap();
    let mut mismatches = 0;
    let mut records = Vec::new();
    for t in 0..reverse.trials {
        let (tree, metric) = trial_instance(&reverse, t).unwrap();
        let mirror = tree.mirrored();
        let rev = simulate_reverse_multicast(&tree, &metric, 512, t as u64).unwrap();
        let fwd = simulate_multicast(&mirror, &metric, 512, t as u64).unwrap();
        if rev != fwd {
            mismatches += 1;
        }
        let rec = run_trial(&forward, &mirror, &metric, t).unwrap();
        if rec != res.trials[t] {
            mismatches += 1;
        }
        records.push(rec);
    }
    let rows_equal = aggregate(&forward, &records) == res.rows;
    (
        mismatches == 0 && rows_equal,
        format!("100 receiver-rooted trees: {mismatches} mismatching trials, rows equal: {rows_equal}"),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    while checked < 50 {
        seed += 1;
        let kind = if seed % 2 == 0 { TreeKind::Binary } else { TreeKind::General };
        let (t, lengths) = instance(2 + (seed as usize % 3), kind, (0.01, 0.7), seed);
        if t.link_count() > 6 {
            continue;
        }
        checked += 1;
        let rates =
            LinkMetric::from_rates(lengths.lengths().iter().map(|(&k, &d)| (k, (-d).exp()))).unwrap();
        let (p, joint) = brute_force_probabilities(&t, &rates);
        let terms: Vec<_> = std::iter::once(t.root()).chain(t.leaves()).collect();
        let labels: Vec<String> = terms.iter().map(|&k| t.label(k).unwrap().to_string()).collect();
        let m = labels.len();
        let est = distances_from_moments(&Moments::new(labels, p.clone(), joint.clone()).unwrap())
            .unwrap()
            .matrix;
        for i in 0..m {
            for j in i + 1..m {
                let truth = true_loss_distance(
                    &JointLeafDistribution::new(p[i], p[j], joint[i * m + j]).unwrap(),
                )
                .unwrap();
                let path = path_length(&t, &lengths, terms[i], terms[j]);
                worst = worst.max((est.get(i, j) - truth).abs()).max((est.get(i, j) - path).abs());
            }
        }
    }
    (
        worst < 1e-12,
        format!("{checked} trees with at most 6 links, max error {worst:.2e}"),
    )
}

/// Exact conditional tables of a link whose upper end is received with
/// probability `p_up` and which passes with probability `alpha`.
fn link_log_det(p_up: f64, alpha: f64) -> f64 {
    let joint = [[1.0 - p_up, 0.0], [p_up * (1.0 - alpha), p_up * alpha]];
    log_det_distance(&TransitionPair::from_joint(joint).unwrap()).unwrap()
}

fn log_det_additivity() -> Verdict {
    // s - m - {i, j}; the root link keeps X_m non-constant.
    let root_rate = 0.95;
    let mut bld = TreeBuilder::new("s");
    let mid = bld.add_internal(0);
    let i = bld.add_leaf(mid, "i");
    let j = bld.add_leaf(mid, "j");
    let tree = bld.build().unwrap();
    let metric = LinkMetric::from_rates([(mid, root_rate), (i, 0.9), (j, 0.8)]).unwrap();
    let expected = link_log_det(root_rate, 0.9) + link_log_det(root_rate, 0.8);
    let samples = simulate_multicast(&tree, &metric, 1_000_000, 2024).unwrap();
    let est = log_det_distances(&samples, &EstimatorConfig::strict())
        .unwrap()
        .get_by_label("i", "j")
        .unwrap();
    (
        (est - expected).abs() <= 0.02,
        format!("estimated {est:.4}, sum of per-link values {expected:.4}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: u32, name: &str, (ok, detail): Verdict| {
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    };
    report(1, "exact recovery", exact_recovery());
    report(2, "l-infinity radius", radius());
    let start = Instant::now();
    let binary = run_experiment(&scenario(TreeKind::Binary)).unwrap();
    let general = run_experiment(&scenario(TreeKind::General)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (ok, detail) = consistency(&[binary, general.clone()]);
    report(3, "consistency", (ok && secs < 600.0, format!("{detail}; {secs:.1}s")));
    report(4, "rnj vs nj on general trees", rnj_vs_nj(&general));
    report(5, "estimator decay", estimator_decay());
    report(6, "reverse pipeline equivalence", reverse_equivalence());
    report(7, "oracle equivalence", oracle_equivalence());
    report(8, "log-det additivity", log_det_additivity());
    println!("{failed} of 8 acceptance criteria failed");
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
