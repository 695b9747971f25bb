use crate::config::{usage, ModelChoice, RunConfig};
use anyhow::{bail, Context, Result};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;
use yieldnet::baselines::{
    dfnn_build, dfnn_train, forest_fit, linear_fit, tree_fit, BaselineModel, DfnnConfig, DfnnTrainConfig,
    FeatureMatrix, ForestOptions, Penalty,
};
use yieldnet::ingest::{fit_bins_from_index, ingest_index, RawIndex};
use yieldnet::model::{read_yieldnet, write_yieldnet, Variant, YieldNet, YieldNetConfig};
use yieldnet::raster::{BinningManifest, HistogramCube};
use yieldnet::train::{
    evaluate_in_season, export_report, fmt_sig, load_dataset, render_scatter_svg, save_dataset, scatter_file_name,
    split_by_year, BaselinePair, Dataset, MetricsRow, Predictor, TrainHistory,
};
use yieldnet::{Crop, PerCrop};

fn thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn write(path: &PathBuf, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let report = yieldnet::synth::gen_dataset(&cfg.world, &cfg.paths.raw_dir)?;
    println!(
        "wrote {} location-years ({} rasters, {} clamped yields) to {}",
        report.samples,
        report.rasters,
        report.clamped,
        cfg.paths.raw_dir.display()
    );
    Ok(())
}

fn test_years(cfg: &RunConfig) -> BTreeSet<u32> {
    cfg.test_years.iter().copied().collect()
}

pub fn fit_bins(cfg: &RunConfig) -> Result<()> {
    let index = RawIndex::read(&cfg.paths.raw_dir)?;
    let test = test_years(cfg);
    let train: BTreeSet<u32> = index.samples.iter().map(|e| e.year).filter(|y| !test.contains(y)).collect();
    if train.is_empty() {
        bail!("no training years left after removing the test years");
    }
    let mut manifest = fit_bins_from_index(&cfg.paths.raw_dir, &index, cfg.bins, Some(&train))?;
    manifest.seed = Some(cfg.seed);
    manifest.source = cfg.paths.raw_dir.display().to_string();
    write(&cfg.paths.bins, &manifest.to_json()?)?;
    println!("fitted {} bins over {} bands -> {}", manifest.bins, manifest.bands.len(), cfg.paths.bins.display());
    Ok(())
}

fn read_manifest(cfg: &RunConfig) -> Result<BinningManifest> {
    let raw = std::fs::read_to_string(&cfg.paths.bins)
        .with_context(|| format!("reading bins {}", cfg.paths.bins.display()))?;
    Ok(BinningManifest::from_json(&raw)?)
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let index = RawIndex::read(&cfg.paths.raw_dir)?;
    let manifest = read_manifest(cfg)?;
    let ds = ingest_index(&cfg.paths.raw_dir, &index, &manifest)?;
    save_dataset(&ds, &cfg.paths.cube_dir)?;
    println!("wrote {} location-years of cubes to {}", ds.len(), cfg.paths.cube_dir.display());
    Ok(())
}

fn load_split(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let ds = load_dataset(&cfg.paths.cube_dir)?;
    Ok(split_by_year(&ds, &test_years(cfg))?)
}

fn network_for(ds: &Dataset) -> Result<YieldNetConfig> {
    let (time, bins, bands) = ds.cube_shape().context("dataset has no cubes")?;
    Ok(YieldNetConfig {
        time,
        bins,
        bands,
        ..YieldNetConfig::default()
    })
}

fn variant_of(model: ModelChoice) -> Option<Variant> {
    match model {
        ModelChoice::Yieldnet => Some(Variant::Joint),
        ModelChoice::YieldnetCorn => Some(Variant::Single(Crop::Corn)),
        ModelChoice::YieldnetSoy => Some(Variant::Single(Crop::Soybean)),
        _ => None,
    }
}

fn train_yieldnet(cfg: &RunConfig, train_set: &Dataset, variant: Variant) -> Result<(YieldNet, TrainHistory)> {
    let mut model = YieldNet::build(&network_for(train_set)?, variant, cfg.seed)?;
    let history = yieldnet::train::train(&mut model, train_set, &cfg.train)?;
    Ok((model, history))
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("iteration,loss,corn_term,soybean_term\n");
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), fmt_sig);
    for (i, step) in h.steps.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            i + 1,
            fmt_sig(step.value),
            opt(step.terms.corn),
            opt(step.terms.soybean)
        );
    }
    s
}

fn baseline_path(cfg: &RunConfig, crop: Crop) -> PathBuf {
    cfg.paths.out_dir.join(format!("{}_{crop}.ynb", cfg.model.name()))
}

fn labeled_view(ds: &Dataset, crop: Crop) -> (Vec<&HistogramCube>, Vec<f64>) {
    ds.samples()
        .iter()
        .filter_map(|s| s.observation(crop))
        .filter_map(|o| o.yield_value.map(|y| (&o.cube, y)))
        .unzip()
}

fn fit_baseline(cfg: &RunConfig, ds: &Dataset, crop: Crop) -> Result<BaselineModel> {
    let (cubes, y) = labeled_view(ds, crop);
    if cubes.is_empty() {
        bail!("no labeled {crop} samples to fit");
    }
    let x = FeatureMatrix::from_cubes(&cubes)?;
    let b = &cfg.baselines;
    Ok(match cfg.model {
        ModelChoice::Ridge => BaselineModel::Linear(linear_fit(&x, &y, Penalty::L2, b.ridge_lambda)?),
        ModelChoice::Lasso => BaselineModel::Linear(linear_fit(&x, &y, Penalty::L1, b.lasso_lambda)?),
        ModelChoice::Tree => BaselineModel::Tree(tree_fit(&x, &y, b.tree_depth, 1)?),
        ModelChoice::Forest => {
            let opts = ForestOptions {
                n_trees: b.forest_trees,
                max_depth: b.forest_depth,
                ..ForestOptions::default()
            };
            BaselineModel::Forest(forest_fit(&x, &y, &opts, cfg.seed ^ u64::from(crop.code()))?)
        }
        ModelChoice::Dfnn => {
            let train = DfnnTrainConfig {
                lr: cfg.train.lr,
                batch_size: cfg.train.batch_size,
                iterations: b.dfnn_iterations,
                seed: cfg.seed ^ u64::from(crop.code()),
                refresh_batchnorm: cfg.train.refresh_batchnorm,
            };
            BaselineModel::Dfnn(dfnn_train(&x, &y, &DfnnConfig::new(x.cols()), &train)?.0)
        }
        m => bail!("{} is not a baseline", m.name()),
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let (train_set, _) = load_split(cfg)?;
    if let Some(variant) = variant_of(cfg.model) {
        let (model, history) = train_yieldnet(cfg, &train_set, variant)?;
        write_yieldnet(&model, &cfg.paths.checkpoint)?;
        write(&cfg.paths.out_dir.join("loss_history.csv"), &history_csv(&history))?;
        println!(
            "trained {} for {} iterations: loss {} -> {} (last-50 mean); checkpoint {}",
            cfg.model.name(),
            history.steps.len(),
            history.initial().map_or("NA".into(), fmt_sig),
            history.final_mean(50).map_or("NA".into(), fmt_sig),
            cfg.paths.checkpoint.display()
        );
    } else {
        for crop in Crop::ALL {
            let model = fit_baseline(cfg, &train_set, crop)?;
            let path = baseline_path(cfg, crop);
            model.write(&path)?;
            println!("trained {} for {crop} -> {}", cfg.model.name(), path.display());
        }
    }
    Ok(())
}

fn load_predictor(cfg: &RunConfig) -> Result<Box<dyn Predictor>> {
    if variant_of(cfg.model).is_some() {
        let model = read_yieldnet(&cfg.paths.checkpoint)
            .with_context(|| format!("loading {}", cfg.paths.checkpoint.display()))?;
        Ok(Box::new(model))
    } else {
        let load = |c: Crop| BaselineModel::read(&baseline_path(cfg, c)).map(Some);
        Ok(Box::new(BaselinePair(PerCrop::new(load(Crop::Corn)?, load(Crop::Soybean)?))))
    }
}

fn write_reports(cfg: &RunConfig, rows: &[MetricsRow]) -> Result<()> {
    export_report(rows, &cfg.paths.out_dir)?;
    for row in rows {
        if let Some(m) = &row.metrics {
            let title = format!("{} {} {} ({})", cfg.model.name(), row.crop, row.year, row.cutoff);
            let svg = render_scatter_svg(&row.pairs(), m, &title);
            write(&cfg.paths.out_dir.join("plots").join(scatter_file_name(row)), &svg)?;
        }
    }
    Ok(())
}

fn print_rows(rows: &[MetricsRow]) {
    println!("{:<6} {:<5} {:<8} {:>10} {:>10} {:>8} {:>5}", "year", "month", "crop", "rmse", "mae", "r", "n");
    for r in rows {
        let m = r.metrics;
        let f = |v: Option<f64>| v.map_or("NA".to_string(), fmt_sig);
        println!(
            "{:<6} {:<5} {:<8} {:>10} {:>10} {:>8} {:>5}",
            r.year,
            r.cutoff.month(),
            r.crop.name(),
            f(m.map(|m| m.rmse)),
            f(m.map(|m| m.mae)),
            f(m.and_then(|m| m.r)),
            m.map_or(0, |m| m.n)
        );
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let (_, test_set) = load_split(cfg)?;
    let predictor = load_predictor(cfg)?;
    let rows = evaluate_in_season(predictor.as_ref(), &test_set, &cfg.cutoffs)?;
    write_reports(cfg, &rows)?;
    print_rows(&rows);
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let (train_set, test_set) = load_split(cfg)?;
    let mut results = Vec::new();
    for variant in [Variant::Joint, Variant::Single(Crop::Corn), Variant::Single(Crop::Soybean)] {
        let (model, _) = train_yieldnet(cfg, &train_set, variant)?;
        results.push(evaluate_in_season(&model, &test_set, &cfg.cutoffs)?);
    }
    let mut csv = String::from("crop,year,month,joint_rmse,single_rmse\n");
    let mut means = PerCrop::new((0.0, 0.0, 0usize), (0.0, 0.0, 0usize));
    for (ci, crop) in Crop::ALL.into_iter().enumerate() {
        for joint in results[0].iter().filter(|r| r.crop == crop) {
            let single = results[1 + ci]
                .iter()
                .find(|r| r.year == joint.year && r.cutoff == joint.cutoff)
                .context("single-head row missing")?;
            let (Some(a), Some(b)) = (joint.metrics, single.metrics) else { continue };
            let _ = writeln!(csv, "{crop},{},{},{},{}", joint.year, joint.cutoff.month(), fmt_sig(a.rmse), fmt_sig(b.rmse));
            let m = means.get_mut(crop);
            m.0 += a.rmse;
            m.1 += b.rmse;
            m.2 += 1;
        }
    }
    write(&cfg.paths.out_dir.join("ablation.csv"), &csv)?;
    for crop in Crop::ALL {
        let (j, s, n) = *means.get(crop);
        if n > 0 {
            println!(
                "{crop}: mean RMSE joint {} vs single-head {}",
                fmt_sig(j / n as f64),
                fmt_sig(s / n as f64)
            );
        }
    }
    Ok(())
}

pub fn params(cfg: &RunConfig) -> Result<()> {
    let network = YieldNetConfig {
        time: cfg.world.timesteps,
        bins: cfg.bins,
        bands: cfg.world.bands,
        ..YieldNetConfig::default()
    };
    let joint = YieldNet::build(&network, Variant::Joint, cfg.seed).map_err(|e| usage(e.to_string()))?;
    let single = YieldNet::build(&network, Variant::Single(Crop::Corn), cfg.seed)?;
    let features = network.time * network.bins * network.bands;
    println!("yieldnet: {} trainable parameters", thousands(joint.count_parameters()));
    for b in joint.parameter_breakdown() {
        println!(
            "  {:<40} {:<7} {:>9}",
            b.name,
            if b.shared { "shared" } else { "head" },
            thousands(b.count)
        );
    }
    println!("single-head variant: {}", thousands(single.count_parameters()));
    println!("linear baseline (per crop): {}", thousands(features + 1));
    println!("dfnn (per crop): {}", thousands(dfnn_build(features, cfg.seed)?.count_trainable()));
    Ok(())
}
