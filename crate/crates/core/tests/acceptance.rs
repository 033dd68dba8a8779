//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test -p foagp --test acceptance`. The two simulation studies
//! dominate the runtime (a few minutes on one core).

use std::process::ExitCode;
use std::time::Instant;

use foagp::effects::{decompose, predict, predict_effect, EffectIndex};
use foagp::hdmr::{fit_hdmr, Scaling, DEFAULT_ORDER};
use foagp::sensitivity::{global_variance, local_variance, sensitivity_report, SensitivityReport};
use foagp::sim::{
    gen_grid, generate, theoretical_truth, train_test_split, true_indices, true_local_variance, Example,
    SimSpec, Truth,
};
use foagp::{fit, Dataset, FitConfig, FittedModel, GridDataset, HyperParams, KernelFamily, KernelSpec, TrainingData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const NAMES: [&str; 3] = ["f1", "f2", "f12"];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

type Check = foagp::Result<Outcome>;

fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn subset(ix: &[usize], d: usize) -> EffectIndex {
    EffectIndex::new(ix.to_vec(), d).expect("valid subset")
}

/// One fitted simulation run.
struct Run {
    model: FittedModel,
    train: Dataset,
    report: SensitivityReport,
}

fn fit_runs(example: Example, n: usize, t_grid: &[f64]) -> foagp::Result<Vec<Run>> {
    let config = FitConfig { restarts: 1, ..FitConfig::default() };
    SEEDS
        .iter()
        .map(|&seed| {
            let spec = match example {
                Example::Example2 => SimSpec::example2(n, seed),
                _ => SimSpec::example1(n, seed),
            };
            let (train, _) = train_test_split(&generate(&spec)?)?;
            let model = fit(train.clone(), &config)?;
            let report = sensitivity_report(&model, 2, t_grid)?;
            Ok(Run { model, train, report })
        })
        .collect()
}

fn mean_indices(runs: &[Run]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for run in runs {
        for (slot, name) in out.iter_mut().zip(NAMES) {
            *slot += run.report.effect(name).expect("enumerated").ecv_index / runs.len() as f64;
        }
    }
    out
}

fn index_check(runs: &[Run], truth: [f64; 3]) -> Outcome {
    let est = mean_indices(runs);
    let worst = est.iter().zip(truth).map(|(e, t)| (e - t).abs()).fold(0.0, f64::max);
    Outcome::new(
        worst <= 0.05,
        format!("mean (S1, S2, S12) = ({:.4}, {:.4}, {:.4}), truth ({:.4}, {:.4}, {:.4}), max error {worst:.4}", est[0], est[1], est[2], truth[0], truth[1], truth[2]),
    )
}

fn index_error(runs: &[Run], truth: [f64; 3]) -> f64 {
    let est = mean_indices(runs);
    est.iter().zip(truth).map(|(e, t)| (e - t).abs()).sum::<f64>() / 3.0
}

fn criterion3(runs: &[Run], t_grid: &[f64]) -> Check {
    let keep: Vec<usize> = (0..t_grid.len()).filter(|&j| t_grid[j].abs() >= 0.2).collect();
    let mut per_effect = [0.0; 3];
    for run in runs {
        for (k, (name, u)) in NAMES.iter().zip([&[1][..], &[2], &[1, 2]]).enumerate() {
            let curve = &run.report.effect(name).expect("enumerated").local_variance;
            let mut acc = 0.0;
            for &j in &keep {
                let truth = true_local_variance(Example::Example1, u, t_grid[j])?;
                acc += (curve[j] - truth).abs() / truth;
            }
            per_effect[k] += acc / keep.len() as f64 / runs.len() as f64;
        }
    }
    let worst = per_effect.iter().copied().fold(0.0, f64::max);
    Ok(Outcome::new(
        worst <= 0.10,
        format!(
            "mean relative error V1 {:.4}, V2 {:.4}, V12 {:.4} (5-seed average, |t| >= 0.2)",
            per_effect[0], per_effect[1], per_effect[2]
        ),
    ))
}

fn criterion4(runs: &[Run], truth: &Truth) -> Check {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for name in ["f1", "f2"] {
        let surface = &truth.main_effects[name];
        let u = EffectIndex::parse(name, 2)?;
        let mut mean_rmse = 0.0;
        for run in runs {
            mean_rmse += surface.rmse(|x, t| predict_effect(&run.model, &u, &[x], t))? / runs.len() as f64;
        }
        let ratio = mean_rmse / surface.range();
        worst = worst.max(ratio);
        parts.push(format!("{name} {:.2}%", 100.0 * ratio));
    }
    let range = truth.mean_curve.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        - truth.mean_curve.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let mut mean_rmse = 0.0;
    for run in runs {
        let mut sse = 0.0;
        for (&t, &m) in truth.t_grid.iter().zip(&truth.mean_curve) {
            sse += (predict_effect(&run.model, &EffectIndex::empty(), &[], t)? - m).powi(2);
        }
        mean_rmse += (sse / truth.t_grid.len() as f64).sqrt() / runs.len() as f64;
    }
    worst = worst.max(mean_rmse / range);
    parts.push(format!("f0 {:.2}%", 100.0 * mean_rmse / range));
    Ok(Outcome::new(worst <= 0.05, format!("RMSE / range: {}", parts.join(", "))))
}

fn random_params(rng: &mut ChaCha8Rng, d: usize) -> HyperParams {
    let mut delta = vec![rng.random_range(0.05..0.5)];
    delta.extend((0..d).map(|_| rng.random_range(0.3..2.0)));
    delta.push(1.0);
    let theta = (0..=d).map(|_| rng.random_range(0.2..1.0)).collect();
    HyperParams { delta, theta, sigma2: 1.0, period: None }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let columns: Vec<Vec<f64>> = (0..d).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let y = (0..n)
        .map(|a| {
            let s: f64 = columns.iter().enumerate().map(|(i, c)| (i as f64 + 1.0) * c[a]).sum();
            (s * t[a]).sin() + columns[0][a] * t[a] + 0.05 * rng.random::<f64>()
        })
        .collect();
    Dataset::new(columns, t, y).expect("valid dataset")
}

fn criterion5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for case in 0..10 {
        let (m, n) = (rng.random_range(4..=20), rng.random_range(3..=20));
        let data = gen_grid(&SimSpec::grid(m, n, 100 + case))?;
        let family = if case % 3 == 2 { KernelFamily::Periodic { period: 1.0 } } else { KernelFamily::SquaredExponential };
        let params = random_params(&mut rng, 2);
        let grid = FittedModel::with_params(data.clone(), family, &params)?;
        let dense = FittedModel::with_params(data.to_long(), family, &params)?;
        worst = worst.max(rel(grid.log_det(), dense.log_det()));
        worst = worst.max(rel(grid.params().sigma2, dense.params().sigma2));
        let gscale = dense.gamma().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in grid.gamma().iter().zip(dense.gamma()) {
            worst = worst.max((a - b).abs() / gscale);
        }
        for _ in 0..5 {
            let x = [rng.random::<f64>(), rng.random::<f64>()];
            let t = rng.random::<f64>();
            worst = worst.max(rel(predict(&grid, &x, t)?, predict(&dense, &x, t)?));
        }
        for u in [subset(&[1], 2), subset(&[2], 2), subset(&[1, 2], 2)] {
            worst = worst.max(rel(global_variance(&grid, &u)?, global_variance(&dense, &u)?));
        }
    }
    Ok(Outcome::new(worst <= 1e-8, format!("10 grid datasets, worst relative difference {worst:.2e}")))
}

fn criterion6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let data = random_dataset(&mut rng, 60, 2);
    let model = FittedModel::with_params(data.clone(), KernelFamily::SquaredExponential, &random_params(&mut rng, 2))?;
    let subsets = [subset(&[1], 2), subset(&[2], 2), subset(&[1, 2], 2)];
    let (c1, c2) = (data.column(0), data.column(1));
    let mut zero_mean: f64 = 0.0;
    let mut orth: f64 = 0.0;
    for _ in 0..50 {
        let t = rng.random_range(0.0..1.0);
        // Averaging over the training column of any one input in u, with the
        // other coordinates held fixed, gives zero.
        for u in &subsets {
            for (pos, &i) in u.indices().iter().enumerate() {
                let mut x: Vec<f64> = u.indices().iter().map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut vals = Vec::with_capacity(data.len());
                for &v in data.column(i - 1) {
                    x[pos] = v;
                    vals.push(predict_effect(&model, u, &x, t)?);
                }
                let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                if scale > 0.0 {
                    zero_mean = zero_mean.max(mean.abs() / scale);
                }
            }
        }
        // Orthogonality under the product of the marginal empirical measures.
        let mut grid_vals = vec![Vec::with_capacity(c1.len() * c2.len()); 3];
        for &a in c1 {
            for &b in c2 {
                grid_vals[0].push(predict_effect(&model, &subsets[0], &[a], t)?);
                grid_vals[1].push(predict_effect(&model, &subsets[1], &[b], t)?);
                grid_vals[2].push(predict_effect(&model, &subsets[2], &[a, b], t)?);
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                let inner = grid_vals[i].iter().zip(&grid_vals[j]).map(|(a, b)| a * b).sum::<f64>() / grid_vals[i].len() as f64;
                let si = grid_vals[i].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let sj = grid_vals[j].iter().fold(0.0f64, |m, v| m.max(v.abs()));
                orth = orth.max(inner.abs() / (si * sj));
            }
        }
    }
    Ok(Outcome::new(
        zero_mean <= 1e-10 && orth <= 1e-8,
        format!("zero mean {zero_mean:.2e} (limit 1e-10), orthogonality {orth:.2e} (limit 1e-8), 50 positions"),
    ))
}

fn criterion7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for n in [40, 120, 200] {
        let data = random_dataset(&mut rng, n, 3);
        let model = FittedModel::with_params(data.clone(), KernelFamily::SquaredExponential, &random_params(&mut rng, 3))?;
        for _ in 0..3 {
            let t = rng.random_range(0.0..1.0);
            for ix in [&[1][..], &[2], &[3], &[1, 2], &[1, 3], &[2, 3]] {
                let u = subset(ix, 3);
                let mut acc = 0.0;
                let mut count = 0usize;
                match ix {
                    [i] => {
                        for &a in data.column(i - 1) {
                            acc += predict_effect(&model, &u, &[a], t)?.powi(2);
                            count += 1;
                        }
                    }
                    [i, j] => {
                        for &a in data.column(i - 1) {
                            for &b in data.column(j - 1) {
                                acc += predict_effect(&model, &u, &[a, b], t)?.powi(2);
                                count += 1;
                            }
                        }
                    }
                    _ => unreachable!(),
                }
                worst = worst.max(rel(acc / count as f64, local_variance(&model, &u, t)?));
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-10, format!("N in {{40, 120, 200}}, |u| <= 2, worst relative difference {worst:.2e}")))
}

fn criterion8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        let data = random_dataset(&mut rng, 50, d);
        let model = FittedModel::with_params(data, KernelFamily::SquaredExponential, &random_params(&mut rng, d))?;
        let x: Vec<Vec<f64>> = (0..40).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let t: Vec<f64> = (0..40).map(|_| rng.random_range(-0.2..1.2)).collect();
        let table = decompose(&model, &x, &t, d)?;
        let scale = table.total.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        worst = worst.max(table.sum_residual() / scale);
    }
    Ok(Outcome::new(worst <= 1e-10, format!("d = 1..3, worst residual / scale {worst:.2e}")))
}

fn indices_of(model: &FittedModel, t_grid: &[f64]) -> foagp::Result<Vec<u64>> {
    let r = sensitivity_report(model, model.dims(), t_grid)?;
    Ok(r.effects.iter().flat_map(|e| e.local_sobol.iter().copied().chain([e.ecv_index])).map(f64::to_bits).collect())
}

fn criterion9() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let data = random_dataset(&mut rng, 80, 2);
    let params = random_params(&mut rng, 2);
    let t_grid = linspace(0.0, 1.0, 11);
    let base = indices_of(&FittedModel::with_params(data.clone(), KernelFamily::SquaredExponential, &params)?, &t_grid)?;
    // Power-of-two scales keep every kernel argument exactly representable.
    let mut bitwise = true;
    for a in [4.0, -0.5, 0.125] {
        let cols: Vec<Vec<f64>> = vec![data.column(0).iter().map(|v| a * v).collect(), data.column(1).to_vec()];
        let scaled = Dataset::new(cols, data.positions().to_vec(), data.responses().to_vec())?;
        let mut p = params.clone();
        p.theta[0] *= f64::abs(a);
        let got = indices_of(&FittedModel::with_params(scaled, KernelFamily::SquaredExponential, &p)?, &t_grid)?;
        bitwise &= got == base;
    }
    // A general affine map agrees to rounding.
    let (a, b) = (3.7, -1.3);
    let cols = vec![data.column(0).to_vec(), data.column(1).iter().map(|v| a * v + b).collect()];
    let scaled = Dataset::new(cols, data.positions().to_vec(), data.responses().to_vec())?;
    let mut p = params.clone();
    p.theta[1] *= a;
    let got = indices_of(&FittedModel::with_params(scaled, KernelFamily::SquaredExponential, &p)?, &t_grid)?;
    let general = got.iter().zip(&base).map(|(x, y)| rel(f64::from_bits(*x), f64::from_bits(*y))).fold(0.0, f64::max);
    Ok(Outcome::new(
        bitwise && general <= 1e-9,
        format!("bit-identical for scales 4, -0.5, 0.125: {bitwise}; x -> 3.7x - 1.3 max relative difference {general:.2e}"),
    ))
}

fn criterion11(run: &Run) -> Check {
    let truth = theoretical_truth(Example::Example1)?;
    let dists = Example::Example1.distributions().expect("known distributions");
    let hdmr = fit_hdmr(&run.train, DEFAULT_ORDER, 0.0, &Scaling::Known(dists))?;
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["f1", "f2"] {
        let surface = &truth.main_effects[name];
        let u = EffectIndex::parse(name, 2)?;
        let i = u.indices()[0];
        let gp = surface.rmse(|x, t| predict_effect(&run.model, &u, &[x], t))?;
        let hd = surface.rmse(|x, t| Ok(hdmr.effects(&[x, x], t)?.main[i - 1]))?;
        pass &= gp < hd;
        parts.push(format!("{name}: FOAGP {gp:.4} vs HDMR {hd:.4}"));
    }
    let (mut gp, mut hd) = (0.0, 0.0);
    for (&t, &m) in truth.t_grid.iter().zip(&truth.mean_curve) {
        gp += (predict_effect(&run.model, &EffectIndex::empty(), &[], t)? - m).powi(2);
        hd += (hdmr.effects(&[0.0, 0.0], t)?.mean - m).powi(2);
    }
    let k = truth.t_grid.len() as f64;
    let (gp, hd) = ((gp / k).sqrt(), (hd / k).sqrt());
    pass &= gp < hd;
    parts.push(format!("f0: FOAGP {gp:.4} vs HDMR {hd:.4}"));
    Ok(Outcome::new(pass, format!("main-effect RMSE vs theory, order {DEFAULT_ORDER}: {}", parts.join("; "))))
}

fn criterion12() -> Check {
    let spec = KernelSpec::periodic(1.3, 1.0)?;
    let mut exact = true;
    for &t in &[-2.3, 0.0, 0.17, 0.5, 3.9] {
        exact &= spec.eval(t, t + 1.0)? == 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..10).map(|_| rng.random::<f64>()).collect()).collect();
    let cols = vec![(0..8).map(|_| rng.random::<f64>()).collect()];
    let positions = linspace(0.0, 0.9, 10);
    let grid = GridDataset::from_response_rows(cols, positions, &rows)?;
    let family = KernelFamily::Periodic { period: 1.0 };
    let params = HyperParams { delta: vec![0.2, 1.0, 1.0], theta: vec![0.4, 1.1], sigma2: 1.0, period: Some(1.0) };
    let g = FittedModel::with_params(grid.clone(), family, &params)?;
    let d = FittedModel::with_params(TrainingData::Dense(grid.to_long()), family, &params)?;
    let diff = rel(g.log_det(), d.log_det()).max(rel(predict(&g, &[0.3], 0.45)?, predict(&d, &[0.3], 0.45)?));
    Ok(Outcome::new(
        exact && diff <= 1e-8,
        format!(
            "fuselage study not reproducible (no published data); substitute checks: periodic k(t, t+T) == 1 exactly: {exact}, periodic Kronecker vs dense {diff:.2e}"
        ),
    ))
}

fn report(results: &mut Vec<(usize, bool)>, id: usize, name: &str, check: Check, started: Instant) {
    let (pass, detail) = match check {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} criterion {id:>2}: {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    results.push((id, pass));
}

fn main() -> ExitCode {
    // Tolerate the libtest flags cargo passes to every test target.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if filters.iter().any(|f| !"acceptance".contains(f.as_str())) {
        return ExitCode::SUCCESS;
    }
    let _ = foagp::set_threads(None);
    let mut results = Vec::new();
    let t_curve = linspace(-1.5, 1.5, 101);

    let started = Instant::now();
    let ex1 = fit_runs(Example::Example1, 2000, &t_curve);
    let ex1_time = started;
    let truth1 = true_indices(Example::Example1).expect("closed form");
    match &ex1 {
        Ok(runs) => report(&mut results, 1, "Example 1 ECV indices", Ok(index_check(runs, truth1)), ex1_time),
        Err(e) => report(&mut results, 1, "Example 1 ECV indices", Err(clone_err(e)), ex1_time),
    }

    let started = Instant::now();
    let truth2 = theoretical_truth(Example::Example2);
    let ex2 = fit_runs(Example::Example2, 2000, &[]);
    match (&ex2, &truth2) {
        (Ok(runs), Ok(truth)) => {
            let t = [truth.indices["f1"], truth.indices["f2"], truth.indices["f12"]];
            report(&mut results, 2, "Example 2 ECV indices", Ok(index_check(runs, t)), started)
        }
        (Err(e), _) | (_, Err(e)) => report(&mut results, 2, "Example 2 ECV indices", Err(clone_err(e)), started),
    }

    let started = Instant::now();
    let check = match &ex1 {
        Ok(runs) => criterion3(runs, &t_curve),
        Err(e) => Err(clone_err(e)),
    };
    report(&mut results, 3, "Example 1 local variance curves", check, started);

    let started = Instant::now();
    let check = match (&ex2, &truth2) {
        (Ok(runs), Ok(truth)) => criterion4(runs, truth),
        (Err(e), _) | (_, Err(e)) => Err(clone_err(e)),
    };
    report(&mut results, 4, "Example 2 decomposition vs quadrature oracle", check, started);

    let started = Instant::now();
    report(&mut results, 5, "dense and Kronecker paths agree", criterion5(), started);
    let started = Instant::now();
    report(&mut results, 6, "conditional zero mean and orthogonality", criterion6(), started);
    let started = Instant::now();
    report(&mut results, 7, "variance estimator vs brute-force enumeration", criterion7(), started);
    let started = Instant::now();
    report(&mut results, 8, "decomposition sum identity", criterion8(), started);
    let started = Instant::now();
    report(&mut results, 9, "affine-rescale invariance", criterion9(), started);

    let started = Instant::now();
    let check = (|| -> Check {
        let (Ok(big1), Ok(big2), Ok(truth)) = (&ex1, &ex2, &truth2) else {
            return Err(foagp::FoagpError::FitFailure(vec!["simulation fits unavailable".into()]));
        };
        let t2 = [truth.indices["f1"], truth.indices["f2"], truth.indices["f12"]];
        let small1 = fit_runs(Example::Example1, 200, &[])?;
        let small2 = fit_runs(Example::Example2, 200, &[])?;
        let (e1s, e1b) = (index_error(&small1, truth1), index_error(big1, truth1));
        let (e2s, e2b) = (index_error(&small2, t2), index_error(big2, t2));
        Ok(Outcome::new(
            e1b < e1s && e2b < e2s,
            format!("mean index error N=200 -> 2000: Example 1 {e1s:.4} -> {e1b:.4}, Example 2 {e2s:.4} -> {e2b:.4}"),
        ))
    })();
    report(&mut results, 10, "index error shrinks with N", check, started);

    let started = Instant::now();
    let check = match &ex1 {
        Ok(runs) => criterion11(&runs[0]),
        Err(e) => Err(clone_err(e)),
    };
    report(&mut results, 11, "FOAGP beats HDMR on Example 1 effects", check, started);
    let started = Instant::now();
    report(&mut results, 12, "periodic kernel and Kronecker path", criterion12(), started);

    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failed {failed:?}") }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn clone_err(e: &foagp::FoagpError) -> foagp::FoagpError {
    foagp::FoagpError::FitFailure(vec![e.to_string()])
}
