//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p effectmod-core --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use effectmod::multiplicity::{closed_test_ln, ln_truncated_product_cdf, truncated_product_pvalue_ln};
use effectmod::pairs::DiscordantSummary;
use effectmod::pipeline::{run_analyze, AnalysisConfig, GroupSource, ReportBundle};
use effectmod::simulate::{simulate, SyntheticGroup, SyntheticSpec, GROUP_COLUMN};
use effectmod::tree::{build_tree, CovariateSpec, TreeConfig};
use effectmod::{
    amplify, crosstab, gamma_grid_bounds, mcnemar_odds_ratio, mcnemar_upper_pvalue, summarize, AxisSpec, Direction,
    GammaValue, PairRecord, PairSet, PairedCrossTab, Partition, SummaryTable, TailMethod, TruncatedProductParams,
};
use effectmod::pairs::OutcomePair;

struct Gate {
    results: Vec<(String, bool)>,
}

impl Gate {
    fn record(&mut self, id: &str, title: &str, pass: bool, detail: String, started: Instant) {
        let ms = started.elapsed().as_secs_f64() * 1e3;
        println!(
            "{} [{id}] {title}: {detail} ({ms:.0} ms)",
            if pass { "PASS" } else { "FAIL" }
        );
        self.results.push((id.to_string(), pass));
    }
}

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn analysis(outcomes: &[&str], gammas: &[f64]) -> AnalysisConfig {
    let mut cfg = AnalysisConfig::default();
    cfg.outcomes = ids(outcomes);
    cfg.gammas = gammas.to_vec();
    cfg.groups = GroupSource::Column("group".into());
    for o in outcomes.iter().skip(1) {
        cfg.directions.insert(o.to_string(), Direction::ControlExcess);
    }
    cfg
}

fn max_table_deviation(bundle: &ReportBundle, outcome: usize, table: &[[f64; 5]; 6]) -> f64 {
    let grid = &bundle.outcomes[outcome].grid;
    let mut worst = 0.0f64;
    for (k, row) in table.iter().enumerate() {
        for (g, &p) in row.iter().enumerate() {
            worst = worst.max((grid.bounds[g][k].p_upper - p).abs());
        }
    }
    worst
}

fn main() {
    let mut gate = Gate { results: Vec::new() };
    let suite = Instant::now();

    // Discordant splits are reconstructed, then frozen in the fixtures.
    let t = Instant::now();
    let mut detail = Vec::new();
    let mut ok = true;
    for (name, d, or, splits, gammas, table) in [
        ("mortality", MORTALITY_D, MORTALITY_OR, MORTALITY_SPLITS, MORTALITY_GRID, &MORTALITY_BOUNDS),
        ("icu", ICU_D, ICU_OR, ICU_SPLITS, ICU_GRID, &ICU_BOUNDS),
    ] {
        let mut chosen = Vec::new();
        for g in 0..5 {
            let r = recover_split(d[g], or[g], &gammas, &column(table, g));
            ok &= r.chosen == splits[g];
            chosen.push(format!("{:?}", r.chosen));
        }
        detail.push(format!("{name} {}", chosen.join(" ")));
    }
    let pooled_t: u64 = MORTALITY_SPLITS.iter().map(|s| s.0).sum();
    let pooled_p = mcnemar_upper_pvalue(1968, pooled_t, GammaValue::new(1.15).unwrap(), TailMethod::Exact).unwrap().p_upper;
    ok &= pooled_t == 1087 && format!("{pooled_p:.3}") == "0.063";
    detail.push(format!("pooled T={pooled_t}"));
    gate.record("oracle", "split recovery by integer search", ok, detail.join("; "), t);

    let pairs = published_pairs();

    // 1
    let t = Instant::now();
    let mortality = run_analyze(&analysis(&["death"], &MORTALITY_GRID), &pairs, Vec::new()).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    let dev = max_table_deviation(&mortality, 0, &MORTALITY_BOUNDS);
    gate.record(
        "1",
        "mortality group bounds within 0.002, under 1 s",
        dev <= 0.002 && elapsed < 1.0,
        format!("max |dev| = {dev:.5}, analysis {:.3} s", elapsed),
        t,
    );

    // 2
    let t = Instant::now();
    let combined = &mortality.outcomes[0].combined;
    let dev = combined
        .iter()
        .zip(MORTALITY_COMBINED)
        .map(|(c, p)| (c - p).abs())
        .fold(0.0, f64::max);
    gate.record(
        "2",
        "mortality truncated product within 0.002, Gamma=1 below 1e-5",
        dev <= 0.002 && combined[0] <= 1e-5,
        format!("max |dev| = {dev:.5}, Gamma=1 value {:.3e}", combined[0]),
        t,
    );

    // 3
    let t = Instant::now();
    let h34 = mortality.outcomes[0].closed_tests[0].subset(&["3", "4"]).unwrap().p_value;
    gate.record("3", "H{3,4} at Gamma=1 is 0.080 +/- 0.001", (h34 - 0.080).abs() <= 0.001, format!("{h34:.5}"), t);

    // 4
    let t = Instant::now();
    let grid_gammas = [1.00, 1.05, 1.10, 1.17, 1.18];
    let table = summarize(&pairs, &Partition::from_column(&pairs, "group").unwrap(), "death").unwrap();
    let grid = gamma_grid_bounds(&table, &grid_gammas, Direction::ControlExcess, TailMethod::Exact).unwrap();
    let params = TruncatedProductParams::default();
    let reports: Vec<_> = (0..grid_gammas.len())
        .map(|k| closed_test_ln(&grid.group_ids, &grid.ln_column(k), &params).unwrap())
        .collect();
    let expected: [&[&str]; 4] = [&["1", "2", "5"], &["1", "2"], &["2"], &[]];
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, want) in expected.iter().enumerate() {
        ok &= reports[k].rejected_groups == ids(want);
        detail.push(format!("{}: {{{}}}", grid_gammas[k], reports[k].rejected_groups.join(",")));
    }
    let r117 = &reports[3];
    let s12 = r117.subset(&["1", "2"]).unwrap().rejected;
    let global117 = r117.global().p_value;
    ok &= s12 && (global117 - 0.044).abs() <= 0.002;
    let none118 = reports[4].rejected_subsets().count() == 0;
    ok &= none118;
    detail.push(format!("1.17 {{1,2}} rejected={s12}, global p={global117:.4}; 1.18 nothing rejected={none118}"));
    gate.record("4", "closed-testing rejection sets", ok, detail.join("; "), t);

    // 5
    let t = Instant::now();
    let single = Partition::single(&pairs);
    let pooled_table = summarize(&pairs, &single, "death").unwrap();
    let g = GammaValue::new(1.15).unwrap();
    let direct = mcnemar_upper_pvalue(1968, 1087, g, TailMethod::Exact).unwrap().p_upper;
    let via_single = gamma_grid_bounds(&pooled_table, &[1.15], Direction::ControlExcess, TailMethod::Exact)
        .unwrap()
        .bounds[0][0]
        .p_upper;
    gate.record(
        "5",
        "pooled McNemar at Gamma=1.15 is 0.063 +/- 0.002",
        (direct - 0.063).abs() <= 0.002 && via_single == direct && pooled_table.pooled.n_discordant == 1968,
        format!("{direct:.5} (single-group analysis {via_single:.5})"),
        t,
    );

    // 6
    let t = Instant::now();
    let a = amplify(1.17, 2.0).unwrap();
    let b = amplify(1.5, 4.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let gamma = 1.0 + 4.0 * rng.random::<f64>();
        let lambda = gamma + 0.01 + 20.0 * rng.random::<f64>();
        let delta = amplify(gamma, lambda).unwrap();
        if delta > gamma {
            worst = worst.max((amplify(gamma, delta).unwrap() - lambda).abs() / lambda.max(1.0));
        }
    }
    gate.record(
        "6",
        "amplification values and round trip",
        (a - 1.61).abs() <= 0.005 && (b - 2.00).abs() <= 0.005 && worst <= 1e-9,
        format!("(1.17, 2.0) -> {a:.4}; (1.5, 4.0) -> {b:.4}; round-trip error {worst:.2e}"),
        t,
    );

    // 7
    let t = Instant::now();
    let icu = run_analyze(&analysis(&["death", "icu"], &ICU_GRID), &pairs, Vec::new()).unwrap();
    let dev = max_table_deviation(&icu, 1, &ICU_BOUNDS);
    let cts = &icu.outcomes[1].closed_tests;
    let mut ok = dev <= 0.003 && cts[1].rejected_groups == ids(&GROUP_IDS);
    for k in 2..=4 {
        ok &= cts[k].rejected_groups == ids(&["2"]);
    }
    let sets: Vec<String> = cts.iter().map(|r| format!("{}: {{{}}}", r.gamma.unwrap(), r.rejected_groups.join(","))).collect();
    gate.record(
        "7",
        "ICU group bounds within 0.003 and rejection sets",
        ok,
        format!("max |dev| = {dev:.5}; {}", sets.join("; ")),
        t,
    );

    // 8
    let t = Instant::now();
    let axis = AxisSpec::death_icu("death", "icu");
    let names: Vec<String> = axis.categories.iter().map(|c| c.name.clone()).collect();
    let tab = PairedCrossTab::from_counts(names, GROUP2_CROSSTAB.iter().map(|r| r.to_vec()).collect()).unwrap();
    let g2 = tab.expand(&axis, &ids(&["death", "icu"])).unwrap();
    let s = &summarize(&g2, &Partition::single(&g2), "death").unwrap().pooled;
    let back = crosstab(&g2, &axis).unwrap();
    let or = format!("{:.2}", mcnemar_odds_ratio(s).unwrap());
    let rt = format!("{:.1}", 100.0 * s.event_rate_treated);
    let rc = format!("{:.1}", 100.0 * s.event_rate_control);
    let ok = s.n_discordant == 293
        && s.n_control_only == 177
        && or == "1.53"
        && rt == "2.5"
        && rc == "3.5"
        && back.col_totals == vec![139, 1542, 3955]
        && back.row_totals == vec![200, 2297, 3139]
        && back.total == 5636
        && back.counts == tab.counts;
    gate.record(
        "8",
        "group 2 cross-tab summarization",
        ok,
        format!(
            "D={}, T={}, OR {or}, {rt}% vs {rc}%, columns {:?}, total {}",
            s.n_discordant, s.n_control_only, back.col_totals, back.total
        ),
        t,
    );

    // 9a
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let mut violations = 0;
    for _ in 0..500 {
        let groups: Vec<DiscordantSummary> = (0..rng.random_range(1..=6))
            .map(|g| {
                let d = rng.random_range(0..3000u64);
                let c = rng.random_range(0..=d);
                DiscordantSummary::from_counts(g.to_string(), d + rng.random_range(0..100), d, c).unwrap()
            })
            .collect();
        let table = SummaryTable {
            outcome: "y".into(),
            pooled: DiscordantSummary::pooled("pooled", &groups),
            groups,
        };
        let mut gammas: Vec<f64> = (0..8).map(|_| 1.0 + 3.0 * rng.random::<f64>()).collect();
        gammas.push(1.0);
        gammas.sort_by(f64::total_cmp);
        for method in [TailMethod::Exact, TailMethod::NormalApprox] {
            let grid = gamma_grid_bounds(&table, &gammas, Direction::ControlExcess, method).unwrap();
            let mut rows: Vec<Vec<f64>> = grid.bounds.iter().map(|r| r.iter().map(|b| b.p_upper).collect()).collect();
            rows.push(grid.pooled.iter().map(|b| b.p_upper).collect());
            rows.push((0..gammas.len()).map(|k| truncated_product_pvalue_ln(&grid.ln_column(k), 0.1).unwrap()).collect());
            for row in rows {
                violations += row.windows(2).filter(|w| w[1] < w[0] * (1.0 - 1e-12) - 1e-300).count();
            }
        }
    }
    gate.record(
        "9a",
        "bounds and combined P-values nondecreasing in Gamma (500 random tables)",
        violations == 0,
        format!("{violations} violations"),
        t,
    );

    // 9b
    let t = Instant::now();
    let (flips_ok, n_flips) = sign_blindness(1000);
    gate.record(
        "9b",
        "tree unchanged under random sign flips",
        flips_ok == n_flips,
        format!("{flips_ok}/{n_flips} identical trees"),
        t,
    );

    // 9c
    let t = Instant::now();
    let (agree, cases, worst) = categorical_optimality();
    gate.record(
        "9c",
        "categorical split matches exhaustive enumeration, m <= 12",
        agree == cases,
        format!("{agree}/{cases} cases agree, worst SSE gap {worst:.2e}"),
        t,
    );

    // 9d
    let t = Instant::now();
    let (within, total, worst_z) = truncated_product_monte_carlo(1_000_000);
    gate.record(
        "9d",
        "truncated-product distribution vs Monte Carlo (1e6 draws, 3 s.e.)",
        within == total,
        format!("{within}/{total} within 3 s.e., largest |z| = {worst_z:.2}"),
        t,
    );

    // 9e
    let t = Instant::now();
    let (rate, se) = null_fwer(2000);
    gate.record(
        "9e",
        "family-wise error under the global null at alpha=0.05",
        rate <= 0.06,
        format!("rate {rate:.4} (MC s.e. {se:.4}) over 2000 datasets"),
        t,
    );

    // 9f
    let t = Instant::now();
    let (worst_abs, worst_rel, checked) = tail_vs_direct_sum();
    gate.record(
        "9f",
        "exact tail vs direct summation, D <= 1000, within 1e-12",
        worst_abs <= 1e-12,
        format!("{checked} tails, max abs error {worst_abs:.2e}, max rel error {worst_rel:.2e}"),
        t,
    );

    let total = suite.elapsed().as_secs_f64();
    let failed: Vec<&str> = gate.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!(
        "{} [suite] {} checks, {} failed, {:.1} s (limit 300 s)",
        if failed.is_empty() && total < 300.0 { "PASS" } else { "FAIL" },
        gate.results.len(),
        failed.len(),
        total
    );
    if !failed.is_empty() || total >= 300.0 {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}

/// Pairs whose discordance depends on `c`, `k` and `x`, for tree checks.
fn modifier_pairs(rng: &mut ChaCha8Rng, n: usize) -> PairSet {
    let mut set = PairSet::new(ids(&["c", "k", "x"]), ids(&["y"]));
    for i in 0..n {
        let c = rng.random_bool(0.5);
        let k = rng.random_range(0..6u32);
        let x = rng.random_bool(0.3);
        let rate = 0.02 + if c { 0.28 } else { 0.0 } + 0.03 * k as f64 + if x { 0.05 } else { 0.0 };
        let outcome = if rng.random_bool(rate) {
            OutcomePair::new(false, true)
        } else if rng.random_bool(0.1) {
            OutcomePair::new(true, true)
        } else {
            OutcomePair::new(false, false)
        };
        set.pairs.push(PairRecord {
            pair_id: (i + 1).to_string(),
            covariates: vec![(c as u8).to_string(), format!("k{k}"), (x as u8).to_string()],
            outcomes: vec![outcome],
        });
    }
    set
}

fn sign_blindness(flips: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(92);
    let pairs = modifier_pairs(&mut rng, 2000);
    let specs = CovariateSpec::infer(&pairs, &[]);
    let config = TreeConfig::default();
    let base = build_tree(&pairs, &specs, "y", &config).unwrap().to_json().unwrap();
    let mut same = 0;
    for _ in 0..flips {
        let mut flipped = pairs.clone();
        for p in flipped.pairs.iter_mut() {
            if rng.random_bool(0.5) {
                p.swap_roles();
            }
        }
        let tree = build_tree(&flipped, &specs, "y", &config).unwrap().to_json().unwrap();
        same += (tree == base) as usize;
    }
    (same, flips)
}

fn sse(n: f64, s: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        s - s * s / n
    }
}

fn categorical_optimality() -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let config = TreeConfig {
        min_split: 2,
        min_leaf: 1,
        cp: 0.0,
        max_depth: 1,
    };
    let (mut agree, mut cases, mut worst) = (0, 0, 0.0f64);
    for m in 2..=12usize {
        for _ in 0..20 {
            let rates: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 0.6).collect();
            let mut set = PairSet::new(ids(&["k"]), ids(&["y"]));
            let mut counts = vec![(0.0f64, 0.0f64); m];
            for lvl in 0..m {
                for _ in 0..rng.random_range(1..40) {
                    let disc = rng.random_bool(rates[lvl]);
                    counts[lvl].0 += 1.0;
                    counts[lvl].1 += disc as u8 as f64;
                    set.pairs.push(PairRecord {
                        pair_id: (set.pairs.len() + 1).to_string(),
                        covariates: vec![format!("L{lvl:02}")],
                        outcomes: vec![OutcomePair::new(false, disc)],
                    });
                }
            }
            let specs = CovariateSpec::infer(&set, &[]);
            let tree = build_tree(&set, &specs, "y", &config).unwrap();
            let (n_all, s_all) = counts.iter().fold((0.0, 0.0), |a, c| (a.0 + c.0, a.1 + c.1));
            // Level 0 fixed on the right: each bipartition counted once.
            let mut best = f64::INFINITY;
            for mask in 1u32..(1 << (m - 1)) {
                let (mut nl, mut sl) = (0.0, 0.0);
                for lvl in 1..m {
                    if mask >> (lvl - 1) & 1 == 1 {
                        nl += counts[lvl].0;
                        sl += counts[lvl].1;
                    }
                }
                best = best.min(sse(nl, sl) + sse(n_all - nl, s_all - sl));
            }
            let root = &tree.nodes[0];
            let fitted = match (root.left, root.right) {
                (Some(l), Some(r)) => tree.nodes[l].sse + tree.nodes[r].sse,
                _ => root.sse,
            };
            let gap = (fitted - best).abs();
            let tol = 1e-9 * root.sse.max(1.0);
            // An unsplit root is optimal only when no cut lowers the SSE.
            let ok = if root.left.is_some() { gap <= tol } else { root.sse - best <= tol };
            worst = worst.max(if root.left.is_some() { gap } else { (root.sse - best).max(0.0) });
            agree += ok as usize;
            cases += 1;
        }
    }
    (agree, cases, worst)
}

fn truncated_product_monte_carlo(draws: usize) -> (usize, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(94);
    let (mut within, mut total, mut worst) = (0, 0, 0.0f64);
    for l in [2usize, 3, 5] {
        for tau in [0.05, 0.1, 1.0] {
            let ws = [1e-3f64, 1e-2];
            let mut hits = [0usize; 2];
            for _ in 0..draws {
                let mut ln_w = 0.0;
                for _ in 0..l {
                    let p: f64 = rng.random();
                    if p <= tau {
                        ln_w += p.ln();
                    }
                }
                for (h, w) in hits.iter_mut().zip(ws) {
                    *h += (ln_w <= w.ln()) as usize;
                }
            }
            for (h, w) in hits.iter().zip(ws) {
                let p = ln_truncated_product_cdf(w.ln(), l, tau).exp();
                let emp = *h as f64 / draws as f64;
                let se = (p * (1.0 - p) / draws as f64).sqrt();
                let z = (emp - p) / se;
                worst = worst.max(z.abs());
                within += (z.abs() <= 3.0) as usize;
                total += 1;
            }
        }
    }
    (within, total, worst)
}

fn null_fwer(datasets: usize) -> (f64, f64) {
    let params = TruncatedProductParams::default();
    let mut any = 0usize;
    let labels: Vec<String> = (1..=5).map(|g| g.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(95);
    for _ in 0..datasets {
        let spec = SyntheticSpec {
            groups: labels
                .iter()
                .map(|l| {
                    let p = 0.05 + 0.3 * rng.random::<f64>();
                    SyntheticGroup {
                        label: l.clone(),
                        n_pairs: 200,
                        p_treated: p,
                        p_control: p,
                        covariates: BTreeMap::new(),
                    }
                })
                .collect(),
            gamma_true: 1.0,
            u_prevalence: 0.5,
            u_outcome_shift: 0.0,
            outcome: "y".into(),
            seed: rng.random(),
        };
        let sim = simulate(&spec).unwrap();
        let partition = Partition::from_column(&sim.pairs, GROUP_COLUMN).unwrap();
        let table = summarize(&sim.pairs, &partition, "y").unwrap();
        let grid = gamma_grid_bounds(&table, &[1.0], Direction::ControlExcess, TailMethod::Exact).unwrap();
        let report = closed_test_ln(&grid.group_ids, &grid.ln_column(0), &params).unwrap();
        any += !report.rejected_groups.is_empty() as usize;
    }
    let rate = any as f64 / datasets as f64;
    (rate, (0.05 * 0.95 / datasets as f64).sqrt())
}

fn tail_vs_direct_sum() -> (f64, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(96);
    let mut ds: Vec<u64> = (0..=30).collect();
    ds.extend([100, 210, 293, 488, 500, 760, 999, 1000]);
    ds.extend((0..20).map(|_| rng.random_range(31..=1000)));
    let (mut worst_abs, mut worst_rel, mut checked) = (0.0f64, 0.0f64, 0);
    for d in ds {
        let mut gammas = vec![1.0, 1.17, 1.5, 2.0];
        gammas.shuffle(&mut rng);
        gammas.truncate(2);
        gammas.push((100 + rng.random_range(0..400u64)) as f64 / 100.0);
        for gamma in gammas {
            let (a, b) = gamma_ratio(gamma);
            let oracle = exact_upper_tails(d, a, b);
            let g = GammaValue::new(gamma).unwrap();
            for (t, &want) in oracle.iter().enumerate() {
                let got = mcnemar_upper_pvalue(d, t as u64, g, TailMethod::Exact).unwrap().p_upper;
                worst_abs = worst_abs.max((got - want).abs());
                if want > 1e-290 {
                    worst_rel = worst_rel.max((got - want).abs() / want);
                }
                checked += 1;
            }
        }
    }
    (worst_abs, worst_rel, checked)
}
