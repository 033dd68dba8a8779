use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use foagp::effects::{decompose as decompose_effects, default_max_order, predict, predict_effect, EffectIndex, EffectTable};
use foagp::hdmr::{fit_hdmr, HdmrModel, Scaling};
use foagp::io::{is_grid_dir, long_to_grid, read_any, read_grid_dir, read_long_file, write_grid_dir, write_long_file};
use foagp::model_io::{load_model, save_model};
use foagp::sensitivity::sensitivity_report;
use foagp::sim::{generate, gen_grid, theoretical_truth, train_test_split, Example, SimSpec, Truth};
use foagp::{fit as fit_model, Dataset, FitConfig, FittedModel, KernelFamily, Optimizer};
use serde::Serialize;
use serde_json::json;

use crate::error::CliError;
use crate::{
    Baseline, BenchmarkArgs, ConvertArgs, DecomposeArgs, FitArgs, FitOptions, OptimizerArg, SensitivityArgs, SimulateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const MAX_POINTS: usize = 1_000_000;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn prepare_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| input(format!("cannot create output directory {}: {e}", dir.display())))
}

fn require_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(input(format!("{} does not exist", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    println!("{}", path.display());
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn example(id: u8) -> Result<Example> {
    match id {
        1 => Ok(Example::Example1),
        2 => Ok(Example::Example2),
        other => Err(input(format!("unknown example {other}; expected 1 or 2"))),
    }
}

fn example_spec(ex: Example, n: usize, seed: u64) -> SimSpec {
    match ex {
        Example::Example2 => SimSpec::example2(n, seed),
        _ => SimSpec::example1(n, seed),
    }
}

/// Parses `lo:hi:count`.
fn parse_range(text: &str) -> Result<Vec<f64>> {
    let bad = || input(format!("expected lo:hi:count, got {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    let count: usize = count.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite()) || count == 0 {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect())
}

fn model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.json")
    } else {
        path.to_path_buf()
    }
}

fn load(path: &Path) -> Result<FittedModel> {
    let p = model_path(path);
    require_exists(&p)?;
    Ok(load_model(&p)?)
}

fn load_truth(path: &Path) -> Result<Truth> {
    require_exists(path)?;
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn test_rmse(model: &FittedModel, test: &Dataset) -> Result<f64> {
    let mut sse = 0.0;
    for r in 0..test.len() {
        sse += (predict(model, &test.row(r), test.positions()[r])? - test.responses()[r]).powi(2);
    }
    Ok((sse / test.len() as f64).sqrt())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    prepare_out_dir(&a.out)?;
    if a.grid {
        let (m, n) = (a.m.unwrap_or(50), a.n.unwrap_or(100));
        let mut spec = SimSpec::grid(m, n, a.seed);
        spec.dims = a.dims;
        if let Some(sd) = a.noise {
            spec.noise_sd = sd;
        }
        let data = gen_grid(&spec)?;
        write_grid_dir(&data, &a.out)?;
        for f in [foagp::io::GRID_INPUTS, foagp::io::GRID_POSITIONS, foagp::io::GRID_RESPONSES] {
            println!("{}", a.out.join(f).display());
        }
        return Ok(());
    }
    let ex = example(a.example.expect("clap requires --example without --grid"))?;
    if a.m.is_some() {
        return Err(input("--m only applies to --grid"));
    }
    let mut spec = example_spec(ex, a.n.unwrap_or(2000), a.seed);
    if let Some(sd) = a.noise {
        spec.noise_sd = sd;
    }
    let (train, test) = train_test_split(&generate(&spec)?)?;
    for (name, d) in [("data_train.csv", &train), ("data_test.csv", &test)] {
        let p = a.out.join(name);
        write_long_file(d, &p)?;
        println!("{}", p.display());
    }
    write_json(&a.out.join("truth.json"), &theoretical_truth(ex)?)
}

fn fit_config(o: &FitOptions) -> Result<FitConfig> {
    let mut cfg = match &o.config {
        Some(p) => {
            require_exists(p)?;
            serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| input(format!("{}: {e}", p.display())))?
        }
        None => FitConfig::default(),
    };
    if let Some(r) = o.restarts {
        cfg.restarts = r;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(m) = o.max_iter {
        cfg.max_iter = m;
    }
    if let Some(opt) = o.optimizer {
        cfg.optimizer = match opt {
            OptimizerArg::Lbfgs => Optimizer::Lbfgs,
            OptimizerArg::NelderMead => Optimizer::NelderMead,
            OptimizerArg::NelderMeadLbfgs => Optimizer::NelderMeadLbfgs,
        };
    }
    if let Some(period) = o.periodic {
        cfg.output_kernel = KernelFamily::Periodic { period };
    }
    cfg.force_dense |= o.force_dense;
    cfg.validate()?;
    Ok(cfg)
}

pub fn fit(a: FitArgs) -> Result<()> {
    require_exists(&a.data)?;
    if let Some(t) = &a.test {
        require_exists(t)?;
    }
    let cfg = fit_config(&a.options)?;
    prepare_out_dir(&a.out)?;
    let data = read_any(&a.data)?;
    let test = a.test.as_deref().map(read_long_file).transpose()?;
    let model = fit_model(data, &cfg)?;
    let report = model.report().cloned().expect("fit attaches a report");
    log::info!("fit used the {} path in {:.2} s", report.path, report.wall_time_secs);
    let rmse = test.as_ref().map(|t| test_rmse(&model, t)).transpose()?;
    let path = a.out.join("model.json");
    save_model(&model, &path)?;
    println!("{}", path.display());
    println!("{}", path.with_extension("bin").display());
    write_json(
        &a.out.join("fit_log.json"),
        &json!({
            "config": cfg,
            "report": report,
            "params": model.params(),
            "test_rmse": rmse,
        }),
    )?;
    println!("path: {}", report.path);
    println!("objective: {}", report.objective);
    if let Some(r) = rmse {
        println!("test_rmse: {r}");
    }
    Ok(())
}

fn read_points(path: &Path, dims: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    require_exists(path)?;
    let at = |e: csv::Error| input(format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(at)?;
    let header: Vec<String> = rdr.headers().map_err(at)?.iter().map(|h| h.trim().to_string()).collect();
    let mut expected: Vec<String> = (1..=dims).map(|i| format!("x{i}")).collect();
    expected.push("t".into());
    if header.len() < dims + 1 || header[..=dims] != expected[..] {
        return Err(input(format!("{}:1: expected header starting {}", path.display(), expected.join(","))));
    }
    let (mut x, mut t) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(at)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let vals: Vec<f64> = rec
            .iter()
            .take(dims + 1)
            .map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| input(format!("{}:{line}: invalid number", path.display())))?;
        t.push(vals[dims]);
        x.push(vals[..dims].to_vec());
    }
    Ok((x, t))
}

fn product_points(dims: usize, xs: &[f64], ts: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let count = (xs.len() as f64).powi(dims as i32) * ts.len() as f64;
    if count > MAX_POINTS as f64 {
        return Err(input(format!("product grid would have {count} points (limit {MAX_POINTS})")));
    }
    let mut rows: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dims {
        rows = rows.into_iter().flat_map(|r| xs.iter().map(move |&v| [r.clone(), vec![v]].concat())).collect();
    }
    let (mut x, mut t) = (Vec::new(), Vec::new());
    for r in &rows {
        for &tv in ts {
            x.push(r.clone());
            t.push(tv);
        }
    }
    Ok((x, t))
}

fn hdmr_scaling(truth: Option<&Truth>) -> Scaling {
    match truth.and_then(|t| t.example.distributions()) {
        Some(d) => Scaling::Known(d),
        None => Scaling::Empirical,
    }
}

fn write_side_by_side(path: &Path, gp: &EffectTable, hdmr: &EffectTable) -> Result<()> {
    let mut header: Vec<String> = (1..=gp.dims).map(|i| format!("x{i}")).collect();
    header.push("t".into());
    header.extend(gp.names.iter().cloned());
    header.push("total".into());
    header.extend(hdmr.names.iter().map(|n| format!("hdmr_{n}")));
    header.push("hdmr_total".into());
    let mut out = header.join(",") + "\n";
    for p in 0..gp.t.len() {
        let mut rec: Vec<String> = gp.x[p].iter().map(|v| v.to_string()).collect();
        rec.push(gp.t[p].to_string());
        rec.extend(gp.values.iter().map(|c| c[p].to_string()));
        rec.push(gp.total[p].to_string());
        rec.extend(hdmr.values.iter().map(|c| c[p].to_string()));
        rec.push(hdmr.total[p].to_string());
        out += &(rec.join(",") + "\n");
    }
    fs::write(path, out)?;
    Ok(())
}

fn hdmr_main(model: &HdmrModel, i: usize, x: f64, t: f64) -> foagp::Result<f64> {
    Ok(model.effects(&vec![x; model.dims], t)?.main[i - 1])
}

/// Main-effect and mean-curve RMSE against the ground truth.
fn truth_rmse(truth: &Truth, f: impl Fn(&EffectIndex, f64, f64) -> foagp::Result<f64>) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (name, surface) in &truth.main_effects {
        let u = EffectIndex::parse(name, 2)?;
        out.insert(name.clone(), surface.rmse(|x, t| f(&u, x, t))?);
    }
    let mut sse = 0.0;
    for (t, m) in truth.t_grid.iter().zip(&truth.mean_curve) {
        sse += (f(&EffectIndex::empty(), 0.0, *t)? - m).powi(2);
    }
    out.insert("f0".into(), (sse / truth.t_grid.len() as f64).sqrt());
    Ok(out)
}

pub fn decompose(a: DecomposeArgs) -> Result<()> {
    if let Some(p) = &a.truth {
        require_exists(p)?;
    }
    prepare_out_dir(&a.out)?;
    let model = load(&a.model)?;
    let d = model.dims();
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let (x, t) = match (&a.points, &a.x_grid, &a.t_grid) {
        (Some(p), _, _) => read_points(p, d)?,
        (None, Some(xg), Some(tg)) => product_points(d, &parse_range(xg)?, &parse_range(tg)?)?,
        (None, None, Some(_)) => return Err(input("--t-grid needs --x-grid")),
        _ => {
            let data = model.data().to_dense();
            ((0..data.len()).map(|r| data.row(r)).collect(), data.positions().to_vec())
        }
    };
    let max_order = a.max_order.unwrap_or_else(|| default_max_order(d));
    let table = decompose_effects(&model, &x, &t, max_order)?;
    let residual = table.sum_residual();
    let scale = table.total.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let mut summary = json!({
        "points": t.len(),
        "max_order": max_order,
        "complete": table.complete,
        "sum_residual": residual,
        "sum_identity_ok": !table.complete || residual <= 1e-10 * scale,
    });
    let effects_path = a.out.join("effects.csv");
    if a.baseline == Some(Baseline::Hdmr) {
        if d != 2 && truth.is_some() {
            log::warn!("truth comparison assumes two inputs");
        }
        let hdmr = fit_hdmr(&model.data().to_dense(), a.hdmr_order, a.ridge, &hdmr_scaling(truth.as_ref()))?;
        let hdmr_table = hdmr.decompose(&x, &t)?;
        write_side_by_side(&effects_path, &table, &hdmr_table)?;
        summary["hdmr"] = json!({
            "order": hdmr.order,
            "ridge": hdmr.ridge,
            "terms": hdmr.terms.len(),
            "training_rmse": hdmr.training_rmse,
            "estimation": "ridge least squares",
        });
        if let Some(truth) = &truth {
            let gp = truth_rmse(truth, |u, xv, tv| predict_effect(&model, u, &vec![xv; u.len()], tv))?;
            let hd = truth_rmse(truth, |u, xv, tv| match u.indices() {
                [] => Ok(hdmr.effects(&vec![xv; d], tv)?.mean),
                [i] => hdmr_main(&hdmr, *i, xv, tv),
                _ => unreachable!("truth holds main effects only"),
            })?;
            summary["rmse_vs_truth"] = json!({ "foagp": gp, "hdmr": hd });
        }
    } else {
        table.write_csv(create(&effects_path)?)?;
        if let Some(truth) = &truth {
            let gp = truth_rmse(truth, |u, xv, tv| predict_effect(&model, u, &vec![xv; u.len()], tv))?;
            summary["rmse_vs_truth"] = json!({ "foagp": gp });
        }
    }
    println!("{}", effects_path.display());
    write_json(&a.out.join("decompose_summary.json"), &summary)
}

pub fn sensitivity(a: SensitivityArgs) -> Result<()> {
    if let Some(p) = &a.truth {
        require_exists(p)?;
    }
    prepare_out_dir(&a.out)?;
    let model = load(&a.model)?;
    let truth = a.truth.as_deref().map(load_truth).transpose()?;
    let t_grid = match &a.t_grid {
        Some(g) => parse_range(g)?,
        None => {
            let pos = model.data().position_column();
            let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (0..101).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect()
        }
    };
    let max_order = a.max_order.unwrap_or_else(|| default_max_order(model.dims()));
    let report = sensitivity_report(&model, max_order, &t_grid)?;
    let indices: BTreeMap<String, f64> = report.ecv().into_iter().collect();
    let variances: BTreeMap<String, f64> =
        report.effects.iter().map(|e| (e.name.clone(), e.global_variance)).collect();
    let mut ecv = json!({
        "indices": indices,
        "global_variance": variances,
        "total_global_variance": report.total_global_variance,
        "index_sum": report.effects.iter().map(|e| e.ecv_index).sum::<f64>(),
        "complete": report.complete,
        "warnings": report.warnings,
    });
    if let Some(truth) = &truth {
        let cmp: BTreeMap<String, serde_json::Value> = truth
            .indices
            .iter()
            .map(|(name, &v)| {
                let est = report.effect(name).map(|e| e.ecv_index);
                (name.clone(), json!({ "estimate": est, "truth": v, "abs_error": est.map(|e| (e - v).abs()) }))
            })
            .collect();
        ecv["truth"] = json!(cmp);
    }
    write_json(&a.out.join("ecv.json"), &ecv)?;
    let curves = a.out.join("local_curves.csv");
    report.write_curves_csv(create(&curves)?)?;
    println!("{}", curves.display());
    fs::write(a.out.join("sensitivity.json"), report.to_json()? + "\n")?;
    println!("{}", a.out.join("sensitivity.json").display());
    for (name, s) in report.ecv() {
        println!("{name}: {s}");
    }
    Ok(())
}

/// Data seed of one benchmark cell.
fn cell_seed(base: u64, size: usize, repeat: usize) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(size as u64 * 1_000 + repeat as u64)
}

pub fn benchmark(a: BenchmarkArgs) -> Result<()> {
    let ex = example(a.example)?;
    if a.sizes.is_empty() || a.repeats == 0 {
        return Err(input("need at least one size and one repeat"));
    }
    if let Some(&s) = a.sizes.iter().find(|&&s| s < 10) {
        return Err(input(format!("sample size {s} is too small")));
    }
    let cfg = fit_config(&a.options)?;
    prepare_out_dir(&a.out)?;
    let truth = theoretical_truth(ex)?;
    let names = ["f1", "f2", "f12"];
    let mut rows = String::from("size,repeat,S1,S2,S12,rmse\n");
    let mut summary = String::from(
        "size,repeats,S1_mean,S1_sd,S2_mean,S2_sd,S12_mean,S12_sd,rmse_mean,rmse_sd,index_error_mean\n",
    );
    let mean_sd = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64 } else { 0.0 };
        (m, var.sqrt())
    };
    for &size in &a.sizes {
        let mut cols: [Vec<f64>; 4] = Default::default();
        let mut errors = Vec::new();
        for repeat in 0..a.repeats {
            let started = Instant::now();
            let data = generate(&example_spec(ex, size, cell_seed(a.data_seed, size, repeat)))?;
            let (train, test) = train_test_split(&data)?;
            let model = fit_model(train, &cfg)?;
            let report = sensitivity_report(&model, 2, &[])?;
            let s: Vec<f64> = names.iter().map(|n| report.effect(n).map(|e| e.ecv_index).unwrap_or(f64::NAN)).collect();
            let rmse = test_rmse(&model, &test)?;
            let err = names.iter().zip(&s).map(|(n, v)| (v - truth.indices[*n]).abs()).sum::<f64>() / 3.0;
            log::info!("size {size} repeat {repeat}: {:.1} s", started.elapsed().as_secs_f64());
            rows += &format!("{size},{repeat},{},{},{},{rmse}\n", s[0], s[1], s[2]);
            for (c, v) in cols.iter_mut().zip(s.iter().chain([&rmse])) {
                c.push(*v);
            }
            errors.push(err);
        }
        let stats: Vec<String> = cols.iter().map(|c| mean_sd(c)).map(|(m, sd)| format!("{m},{sd}")).collect();
        summary += &format!("{size},{},{},{}\n", a.repeats, stats.join(","), mean_sd(&errors).0);
    }
    let p = a.out.join("benchmark.csv");
    fs::write(&p, rows)?;
    println!("{}", p.display());
    let p = a.out.join("benchmark_summary.csv");
    fs::write(&p, summary)?;
    println!("{}", p.display());
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    require_exists(&a.input)?;
    if a.input.is_dir() {
        if !is_grid_dir(&a.input) {
            return Err(input(format!("{} is not a grid directory", a.input.display())));
        }
        let g = read_grid_dir(&a.input)?;
        write_long_file(&g.to_long(), &a.output)?;
        println!("{}", a.output.display());
    } else {
        let d = read_long_file(&a.input)?;
        let g = long_to_grid(&d)?;
        write_grid_dir(&g, &a.output)?;
        for f in [foagp::io::GRID_INPUTS, foagp::io::GRID_POSITIONS, foagp::io::GRID_RESPONSES] {
            println!("{}", a.output.join(f).display());
        }
    }
    Ok(())
}
