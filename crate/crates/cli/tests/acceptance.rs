//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;
use support::*;
use yieldnet::baselines::{linear_fit, DfnnConfig, FeatureMatrix, Penalty};
use yieldnet::model::{
    build_single_head, build_yieldnet, yieldnet_loss, CropLabels, LossContext, Variant, YieldNet, YieldNetConfig,
};
use yieldnet::raster::Cutoff;
use yieldnet::synth::{synth_dataset, WorldParams};
use yieldnet::tensor::{batchnorm, conv2d, dense, LayerSpec, Mode, Padding, ParamBlock};
use yieldnet::train::{compute_metrics, evaluate_in_season, split_by_year, train, Dataset, MetricsRow, TrainConfig};
use yieldnet::Crop;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn test_years() -> BTreeSet<u32> {
    [2016, 2017, 2018].into()
}

// ---------------------------------------------------------------- 1

fn parameter_exactness() -> Check {
    let out = Command::new(env!("CARGO_BIN_EXE_yieldnet")).arg("params").output().map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    let cfg = YieldNetConfig::default();
    let joint = build_yieldnet(&cfg, 0).map_err(|e| e.to_string())?.count_parameters();
    let single: Vec<usize> = Crop::ALL
        .iter()
        .map(|&c| build_single_head(&cfg, c, 0).unwrap().count_parameters())
        .collect();
    let mut r = rng(1);
    let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..8640).map(|_| r.random_range(0.0..1.0)).collect()).collect();
    let y = [150.0, 140.0, 160.0, 155.0, 130.0, 145.0];
    let linear = linear_fit(&FeatureMatrix::from_rows(&rows).unwrap(), &y, Penalty::L2, 1.0)
        .map_err(|e| e.to_string())?
        .parameter_count();
    let cli_ok = text.contains("yieldnet: 1,436,050 trainable parameters")
        && text.contains("single-head variant: 973,529")
        && text.contains("linear baseline (per crop): 8,641");
    ensure(
        out.status.success() && cli_ok && joint == 1_436_050 && single == [973_529, 973_529] && linear == 8_641,
        format!("joint {joint}, single {single:?}, linear {linear}, cli output ok: {cli_ok}"),
    )
}

// ---------------------------------------------------------------- 2

fn gradient_suite() -> Check {
    const TOL: f64 = 1e-4;
    let mut checks: Vec<(&str, f64)> = vec![
        ("conv valid", layer_grad_error(&[5, 5, 2], 2, vec![LayerSpec::conv(3, 1, Padding::Valid, 3)], Mode::Train, 1)),
        ("conv same s2", layer_grad_error(&[6, 5, 2], 2, vec![LayerSpec::conv(3, 2, Padding::Same, 2)], Mode::Train, 2)),
        ("conv same even", layer_grad_error(&[4, 5, 1], 2, vec![LayerSpec::conv(2, 1, Padding::Same, 2)], Mode::Train, 3)),
        ("batchnorm train", layer_grad_error(&[3, 3, 2], 4, vec![LayerSpec::batchnorm()], Mode::Train, 4)),
        ("batchnorm infer", layer_grad_error(&[3, 3, 2], 4, vec![LayerSpec::batchnorm()], Mode::Infer, 4)),
        ("batchnorm dense train", layer_grad_error(&[5], 4, vec![LayerSpec::batchnorm()], Mode::Train, 5)),
        ("relu", layer_grad_error(&[7], 3, vec![LayerSpec::Relu], Mode::Train, 6)),
        ("dense", layer_grad_error(&[4], 3, vec![LayerSpec::dense(5)], Mode::Train, 7)),
        ("flatten", layer_grad_error(&[2, 2, 3], 2, vec![LayerSpec::Flatten, LayerSpec::dense(2)], Mode::Train, 8)),
    ];
    let block = vec![
        LayerSpec::conv(2, 1, Padding::Same, 3),
        LayerSpec::batchnorm(),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::dense(1),
    ];
    checks.push(("conv-bn-relu block", layer_grad_error(&[3, 4, 2], 3, block, Mode::Train, 9)));
    let dfnn = DfnnConfig {
        hidden: vec![4, 4],
        ..DfnnConfig::new(6)
    };
    checks.push(("dfnn", layer_grad_error(&[6], 5, dfnn.layers(), Mode::Train, 10)));
    checks.push(("batchnorm dense infer", layer_grad_error(&[5], 4, vec![LayerSpec::batchnorm()], Mode::Infer, 5)));
    for seed in 0..3 {
        let (corn, soy, ctx) = tiny_batches(seed);
        let mut m = build_yieldnet(&YieldNetConfig::tiny(), seed).unwrap();
        randomize_params(m.graph_mut(), &mut rng(seed + 100));
        checks.push(("joint loss train", model_grad_error(&mut m, Some(&corn), Some(&soy), &ctx, Mode::Train)));
        checks.push(("joint loss infer", model_grad_error(&mut m, Some(&corn), Some(&soy), &ctx, Mode::Infer)));
    }
    let (corn, soy, ctx) = tiny_batches(11);
    let mut m = build_yieldnet(&YieldNetConfig::tiny(), 11).unwrap();
    randomize_params(m.graph_mut(), &mut rng(111));
    checks.push(("corn term only", model_grad_error(&mut m, Some(&corn), None, &ctx, Mode::Train)));
    let mut s = build_single_head(&YieldNetConfig::tiny(), Crop::Soybean, 12).unwrap();
    randomize_params(s.graph_mut(), &mut rng(13));
    checks.push(("single head", model_grad_error(&mut s, None, Some(&soy), &ctx, Mode::Train)));
    let (worst_name, worst) = checks.iter().fold(("", 0.0f64), |a, &(n, e)| if e > a.1 { (n, e) } else { a });
    ensure(
        checks.iter().all(|c| c.1 < TOL),
        format!("{} checks, worst relative error {worst:.2e} ({worst_name})", checks.len()),
    )
}

// ---------------------------------------------------------------- 3

fn oracle_equivalence() -> Check {
    let mut r = rng(3);
    let mut worst_layer: f64 = 0.0;
    for case in 0..200u64 {
        let (n, h, w) = (r.random_range(1..3), r.random_range(1..7), r.random_range(1..7));
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
        let (kh, kw, stride) = (r.random_range(1..4), r.random_range(1..4), r.random_range(1..3));
        let padding = if r.random::<bool>() { Padding::Same } else { Padding::Valid };
        let x = random_tensor(&mut r, vec![n, h, w, cin]);
        let params = ParamBlock::Affine {
            weights: random_tensor(&mut r, vec![kh, kw, cin, cout]),
            bias: random_tensor(&mut r, vec![cout]),
        };
        let ParamBlock::Affine { weights, bias } = &params else { unreachable!() };
        if let Some(expected) = naive_conv(&x, weights, bias.data(), stride, padding) {
            let got = conv2d(&x, &params, stride, padding).map_err(|e| format!("conv case {case}: {e}"))?;
            worst_layer = worst_layer.max(max_abs_diff(got.data(), expected.data()));
        }

        let c = r.random_range(1..4);
        let bn = r.random_range(2..5);
        let x = random_tensor(&mut r, vec![bn, h, w, c]);
        let mut block = ParamBlock::Norm {
            gamma: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
            beta: (0..c).map(|_| r.random_range(-1.0..1.0)).collect(),
            running_mean: (0..c).map(|_| r.random_range(-1.0..1.0)).collect(),
            running_var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
        };
        let mode = if case % 2 == 0 { Mode::Train } else { Mode::Infer };
        let expected = naive_batchnorm(&x, &block, 1e-5, mode);
        let got = batchnorm(&x, &mut block, 1e-5, 0.99, mode).map_err(|e| e.to_string())?;
        worst_layer = worst_layer.max(max_abs_diff(got.data(), expected.data()));

        let (f, u) = (r.random_range(1..8), r.random_range(1..6));
        let dn = r.random_range(1..6);
        let x = random_tensor(&mut r, vec![dn, f]);
        let params = ParamBlock::Affine {
            weights: random_tensor(&mut r, vec![f, u]),
            bias: random_tensor(&mut r, vec![u]),
        };
        let ParamBlock::Affine { weights, bias } = &params else { unreachable!() };
        let got = dense(&x, &params).map_err(|e| e.to_string())?;
        worst_layer = worst_layer.max(max_abs_diff(got.data(), naive_dense(&x, weights, bias.data()).data()));
    }

    let mut worst_ridge: f64 = 0.0;
    for (seed, (n, f, lambda)) in [(20, 5, 0.05), (30, 8, 1.0), (6, 9, 0.3)].into_iter().enumerate() {
        let mut r = rng(seed as u64 + 40);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..f).map(|j| r.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64).collect())
            .collect();
        let y: Vec<f64> = rows.iter().map(|row| 3.0 + row[0] - 2.0 * row[f - 1] + r.random_range(-0.5..0.5)).collect();
        let (w, b) = naive_ridge(&rows, &y, lambda);
        let m = linear_fit(&FeatureMatrix::from_rows(&rows).unwrap(), &y, Penalty::L2, lambda).map_err(|e| e.to_string())?;
        worst_ridge = worst_ridge.max(max_abs_diff(&m.weights, &w)).max((m.intercept - b).abs());
    }

    let m = compute_metrics(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 2.0, 6.0]).map_err(|e| e.to_string())?;
    let worst_metric = [
        (m.rmse - 1.5f64.sqrt()).abs(),
        (m.mae - 1.0).abs(),
        (m.r.unwrap_or(f64::NAN) - 6.0 / 60f64.sqrt()).abs(),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    ensure(
        worst_layer < 1e-9 && worst_ridge < 1e-8 && worst_metric < 1e-12,
        format!("layers {worst_layer:.1e} (< 1e-9), ridge {worst_ridge:.1e} (< 1e-8), metrics {worst_metric:.1e} (< 1e-12)"),
    )
}

// ---------------------------------------------------------------- 4

fn loss_properties() -> Check {
    let mut r = rng(4);
    let labels = |v: &[f64]| CropLabels::new(v.iter().map(|&y| Some(y)).collect()).unwrap();
    // Gap relative to max(1, L): rounding alone is a few ulps of L, which
    // exceeds 1e-12 in absolute terms once L passes ~1e4 (small ȳ).
    let (mut worst_scale, mut worst_abs, mut worst_at): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let cases = 2000;
    for case in 0..cases {
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let n = r.random_range(1..12);
            let y: Vec<f64> = (0..n).map(|_| r.random_range(1.0..300.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| r.random_range(-50.0..350.0)).collect();
            (y, p)
        };
        let (yc, mut pc) = draw(&mut r);
        let (ys, mut ps) = draw(&mut r);
        if case % 5 == 0 {
            pc = yc.clone();
        }
        if case % 7 == 0 {
            ps = ys.clone();
        }
        let (mc, ms) = (r.random_range(1.0..200.0), r.random_range(1.0..200.0));
        let ctx = LossContext::new(mc, ms).unwrap();
        let l = yieldnet_loss(&pc, &ps, &labels(&yc), &labels(&ys), &ctx).map_err(|e| e.to_string())?;
        if l.value < 0.0 {
            return Err(format!("case {case}: negative loss {}", l.value));
        }
        if (l.value == 0.0) != (pc == yc && ps == ys) {
            return Err(format!("case {case}: zero-iff-perfect violated"));
        }
        if l.value != l.terms.corn.value.max(l.terms.soybean.value) {
            return Err(format!("case {case}: loss is not the max of its terms"));
        }
        if l.terms.get(l.achieved_by.other()).grad.iter().any(|&g| g != 0.0) {
            return Err(format!("case {case}: non-achieving term has a gradient"));
        }
        let k = r.random_range(0.01..100.0);
        let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        let scaled = if case % 2 == 0 {
            let ctx = LossContext::new(mc * k, ms).unwrap();
            yieldnet_loss(&scale(&pc), &ps, &labels(&scale(&yc)), &labels(&ys), &ctx)
        } else {
            let ctx = LossContext::new(mc, ms * k).unwrap();
            yieldnet_loss(&pc, &scale(&ps), &labels(&yc), &labels(&scale(&ys)), &ctx)
        }
        .map_err(|e| e.to_string())?;
        let gap = (scaled.value - l.value).abs();
        worst_scale = worst_scale.max(gap / l.value.max(1.0));
        if gap > worst_abs {
            (worst_abs, worst_at) = (gap, l.value);
        }
    }
    ensure(
        worst_scale <= 1e-12,
        format!(
            "{cases} randomized batches; worst scale-invariance gap {worst_scale:.1e} of max(1, L) (<= 1e-12), largest absolute gap {worst_abs:.1e} at L = {worst_at:.3e}"
        ),
    )
}

// ---------------------------------------------------------------- 5 and 6

const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_ITERATIONS: usize = 800;

struct SeedRuns {
    joint: Vec<MetricsRow>,
    single: BTreeMap<Crop, Vec<MetricsRow>>,
}

fn world(seed: u64) -> WorldParams {
    WorldParams {
        seed,
        ..WorldParams::default()
    }
}

fn default_split(seed: u64) -> (Dataset, Dataset) {
    let cfg = YieldNetConfig::default();
    let data = synth_dataset(&world(seed), cfg.bins).expect("synthetic dataset");
    split_by_year(&data.dataset, &test_years()).expect("split")
}

fn ablation_runs() -> &'static Vec<SeedRuns> {
    static RUNS: OnceLock<Vec<SeedRuns>> = OnceLock::new();
    RUNS.get_or_init(|| {
        ABLATION_SEEDS
            .iter()
            .map(|&seed| {
                let (train_set, test_set) = default_split(seed);
                let cfg = TrainConfig {
                    iterations: ABLATION_ITERATIONS,
                    seed,
                    ..TrainConfig::default()
                };
                let fit = |variant| {
                    let mut m = YieldNet::build(&YieldNetConfig::default(), variant, seed).expect("build");
                    train(&mut m, &train_set, &cfg).expect("train");
                    evaluate_in_season(&m, &test_set, &Cutoff::ALL).expect("evaluate")
                };
                let joint = fit(Variant::Joint);
                let single = Crop::ALL.into_iter().map(|c| (c, fit(Variant::Single(c)))).collect();
                SeedRuns { joint, single }
            })
            .collect()
    })
}

fn mean_rmse(rows: &[MetricsRow], crop: Crop) -> f64 {
    let v: Vec<f64> = rows.iter().filter(|r| r.crop == crop).filter_map(|r| r.metrics.map(|m| m.rmse)).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn multitask_direction() -> Check {
    let runs = ablation_runs();
    let mut wins = 0;
    let mut lines = Vec::new();
    for (seed, run) in ABLATION_SEEDS.iter().zip(runs) {
        let mut both = true;
        let mut parts = Vec::new();
        for crop in Crop::ALL {
            let (j, s) = (mean_rmse(&run.joint, crop), mean_rmse(&run.single[&crop], crop));
            both &= j <= s;
            parts.push(format!("{crop} {j:.2} vs {s:.2}"));
        }
        wins += usize::from(both);
        lines.push(format!("seed {seed}: {}", parts.join(", ")));
    }
    ensure(wins >= 2, format!("joint <= single for both crops in {wins}/3 seeds [{}]", lines.join("; ")))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn in_season_monotonicity() -> Check {
    let runs = ablation_runs();
    let mut ok = true;
    let mut parts = Vec::new();
    for crop in Crop::ALL {
        let at = |cutoff: Cutoff| {
            median(
                runs.iter()
                    .flat_map(|r| r.joint.iter())
                    .filter(|r| r.crop == crop && r.cutoff == cutoff)
                    .filter_map(|r| r.metrics.map(|m| m.rmse))
                    .collect(),
            )
        };
        let (oct, jul) = (at(Cutoff::Oct23), at(Cutoff::Jul23));
        ok &= oct <= jul;
        parts.push(format!("{crop} Oct {oct:.2} vs Jul {jul:.2}"));
    }
    ensure(ok, format!("median test RMSE over 3 seeds x 3 years: {}", parts.join(", ")))
}

// ---------------------------------------------------------------- 7

fn training_sanity() -> Check {
    let (train_set, _) = default_split(0);
    let cfg = TrainConfig::default();
    let mut m = YieldNet::build(&YieldNetConfig::default(), Variant::Joint, 0).map_err(|e| e.to_string())?;
    let h = train(&mut m, &train_set, &cfg).map_err(|e| e.to_string())?;
    let (initial, last) = (h.initial().unwrap_or(f64::NAN), h.final_mean(50).unwrap_or(f64::NAN));

    let short = TrainConfig {
        iterations: 200,
        ..TrainConfig::default()
    };
    let history = || -> Result<Vec<u64>, String> {
        let mut m = YieldNet::build(&YieldNetConfig::default(), Variant::Joint, 0).map_err(|e| e.to_string())?;
        let h = train(&mut m, &train_set, &short).map_err(|e| e.to_string())?;
        Ok(h.losses().iter().map(|v| v.to_bits()).collect())
    };
    let identical = history()? == history()?;
    ensure(
        last < 0.2 * initial && identical && h.steps.len() == cfg.iterations,
        format!(
            "{} iterations: initial {initial:.4}, final (last-50 mean) {last:.4} = {:.1}% of initial; 200-step histories bit-identical: {identical}",
            h.steps.len(),
            100.0 * last / initial
        ),
    )
}

// ---------------------------------------------------------------- 8

const PIPELINE_CONFIG: &str = r#"{
  "world": { "n_locations": 24, "years": [2012, 2013, 2014, 2015, 2016, 2017, 2018], "timesteps": 30 },
  "train": { "iterations": 60 }
}"#;

fn run_pipeline(dir: &Path) -> Result<(), String> {
    std::fs::write(dir.join("run.json"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    for step in ["synth", "fit-bins", "ingest", "train", "evaluate"] {
        let out = Command::new(env!("CARGO_BIN_EXE_yieldnet"))
            .args(["--config", "run.json", step])
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{step} failed: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).expect("readable file");
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), bytes);
            }
        }
    }
    out
}

fn pipeline_integration() -> Check {
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let summary = std::fs::read_to_string(a.path().join("out/summary.csv")).map_err(|e| e.to_string())?;
    let rows = summary.lines().count() - 1;
    let mut svgs = 0;
    let mut svg_ok = true;
    for entry in std::fs::read_dir(a.path().join("out/plots")).map_err(|e| e.to_string())? {
        let text = std::fs::read_to_string(entry.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?;
        svgs += 1;
        match roxmltree::Document::parse(&text) {
            Ok(doc) => {
                let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
                let legend = doc.descendants().any(|n| n.attribute("class") == Some("legend"));
                svg_ok &= circles > 0 && legend;
            }
            Err(_) => svg_ok = false,
        }
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let identical = sa == sb;
    ensure(
        rows == 24 && svgs == 24 && svg_ok && identical,
        format!("{rows} summary rows, {svgs} SVG files (well-formed: {svg_ok}), {} files byte-identical across runs: {identical}", sa.len()),
    )
}

// ---------------------------------------------------------------- 9

fn non_reproduction_statement() -> Check {
    let readme = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md");
    let text = std::fs::read_to_string(&readme).map_err(|e| format!("{}: {e}", readme.display()))?;
    let statement = text.contains("17.49") && text.contains("5.07") && text.contains("not reproduced");
    let formats = ["RSR1", "MSK1", "HCB1", "index.json"].iter().all(|f| text.contains(f));
    ensure(statement && formats, format!("README statement present: {statement}; import formats documented: {formats}"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 9] = [
        (1, "parameter exactness", parameter_exactness),
        (2, "gradient suite", gradient_suite),
        (3, "oracle equivalence", oracle_equivalence),
        (4, "loss properties", loss_properties),
        (5, "multi-task ablation direction", multitask_direction),
        (6, "in-season monotonicity", in_season_monotonicity),
        (7, "training sanity", training_sanity),
        (8, "pipeline integration", pipeline_integration),
        (9, "non-reproducibility statement", non_reproduction_statement),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail} ({secs:.1} s)"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {detail} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
