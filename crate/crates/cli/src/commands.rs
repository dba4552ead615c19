use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hystop::data::{prepare, read_dataset, write_dataset, Manifest, NormalizedDataset, SplitSpec};
use hystop::diffkernel::Real;
use hystop::material::{generate_corpus, read_loop, write_loop, LoopRecord, MaterialParams};
use hystop::models::{Checkpoint, ModelRegistry};
use hystop::train::{
    config_hash, denormalized_predictions, evaluate, fit, score, CheckpointSink, TrainData, TrainReport, TrainState,
};
use serde::{Deserialize, Serialize};

use crate::config::{usage, RunConfig};
use crate::plot::loop_svg;

const CORPUS_MANIFEST: &str = "corpus.json";
const RUN_CONFIG: &str = "config.json";

#[derive(Serialize, Deserialize)]
struct CorpusManifest {
    params_hash: String,
    params: MaterialParams,
    samples: usize,
    loops: Vec<CorpusEntry>,
}

#[derive(Serialize, Deserialize)]
struct CorpusEntry {
    file: String,
    freq: f64,
    b_peak: f64,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| usage(format!("{what} is required")))
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let g = &cfg.generate;
    let params = match &g.params {
        Some(p) => MaterialParams::load(p)?,
        None => MaterialParams::default(),
    };
    let loops = generate_corpus(&g.freqs, &g.peaks, &params, g.samples)?;
    create_dir(out)?;
    let hash = params.hash();
    let mut entries = Vec::with_capacity(loops.len());
    for rec in &loops {
        let file = format!("loop_f{:06.1}_b{:.3}.csv", rec.freq, rec.b_peak);
        write_loop(&out.join(&file), rec, &hash)?;
        entries.push(CorpusEntry {
            file,
            freq: rec.freq,
            b_peak: rec.b_peak,
        });
    }
    write_json(
        &out.join(CORPUS_MANIFEST),
        &CorpusManifest {
            params_hash: hash,
            params,
            samples: g.samples,
            loops: entries,
        },
    )?;
    write_json(&out.join(RUN_CONFIG), cfg)?;
    eprintln!("wrote {} loops to {}", loops.len(), out.display());
    Ok(out.to_path_buf())
}

fn read_corpus(dir: &Path) -> Result<(Vec<LoopRecord>, String)> {
    let path = dir.join(CORPUS_MANIFEST);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let loops = manifest
        .loops
        .iter()
        .map(|e| read_loop(&dir.join(&e.file)).map(|(rec, _)| rec))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((loops, manifest.params_hash))
}

pub fn augment(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let a = &cfg.augment;
    let (loops, params_hash) = read_corpus(required(&a.data, "augment.data (--data <corpus dir>)")?)?;
    let aug = a.augment_config();
    let spec = SplitSpec {
        ratios: a.split_ratios(),
        seed: cfg.seed,
    };
    let prepared = prepare(&loops, &a.regime, &aug, &spec, cfg.seed)?;
    let ds = &prepared.dataset;
    let manifest = Manifest {
        scheme: ds.scale.scheme.clone(),
        scale: ds.scale.clone(),
        regime: prepared.regime.clone(),
        augmentation: aug,
        augment_seed: cfg.seed,
        split: spec,
        split_indices: prepared.split.clone(),
        n_samples: ds.len(),
        sample_len: ds.sample_len()?,
        params_hash: Some(params_hash),
    };
    write_dataset(out, ds, &manifest)?;
    write_json(&out.join(RUN_CONFIG), cfg)?;
    eprintln!("wrote {} samples ({}) to {}", ds.len(), prepared.regime, out.display());
    Ok(out.to_path_buf())
}

struct Splits {
    train: NormalizedDataset,
    val: Option<NormalizedDataset>,
    test: NormalizedDataset,
    manifest: Manifest,
}

fn load_splits(dir: &Path) -> Result<Splits> {
    let (ds, manifest) = read_dataset(dir)?;
    let idx = &manifest.split_indices;
    if let Some(&bad) = idx
        .train
        .iter()
        .chain(&idx.val)
        .chain(&idx.test)
        .find(|&&i| i >= ds.len())
    {
        return Err(usage(format!(
            "split index {bad} exceeds the {} samples of {}",
            ds.len(),
            dir.display()
        )));
    }
    Ok(Splits {
        train: ds.subset(&idx.train),
        val: (!idx.val.is_empty()).then(|| ds.subset(&idx.val)),
        test: ds.subset(&idx.test),
        manifest,
    })
}

/// Trains and returns the run directory `<out>/<model>-<hash>`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.check_precision()?;
    match cfg.model.precision.as_str() {
        "f64" => train_as::<f64>(cfg, out),
        _ => train_as::<f32>(cfg, out),
    }
}

fn train_as<T: Real>(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let data_dir = required(&cfg.train.data, "train.data (--data <dataset dir>)")?;
    let splits = load_splits(data_dir)?;
    let model = ModelRegistry::<T>::builtin().create(&cfg.model.kind, &cfg.model.config)?;
    let tcfg = cfg.train_config();
    tcfg.validate()?;
    let hash = config_hash(&serde_json::json!({"run": cfg, "dataset": splits.manifest}));
    let run_dir = out.join(format!("{}-{}", model.kind(), &hash[..12]));
    create_dir(&run_dir)?;
    write_json(&run_dir.join(RUN_CONFIG), cfg)?;

    let layout = model.layout();
    let train = TrainData::<T>::assemble(&splits.train, layout)?;
    let val = splits
        .val
        .as_ref()
        .map(|v| TrainData::<T>::assemble(v, layout))
        .transpose()?;
    let test = (!splits.test.is_empty())
        .then(|| TrainData::<T>::assemble(&splits.test, layout))
        .transpose()?;
    let sink = CheckpointSink {
        dir: run_dir.clone(),
        meta: serde_json::json!({"run_hash": hash, "scale": splits.manifest.scale}),
    };
    let outcome = fit(
        model.as_ref(),
        TrainState::init(model.as_ref(), &tcfg),
        &train,
        val.as_ref(),
        &tcfg,
        Some(&sink),
    )?;
    let mut report: TrainReport = outcome.report.clone();
    report.config_hash = hash;
    if let Some(t) = &test {
        report.test_l2 = Some(evaluate(model.as_ref(), outcome.best_params(), t)?.mean_l2());
    }
    report.write_json(&run_dir.join("report.json"))?;
    report.write_loss_csv(&run_dir.join("loss.csv"))?;
    eprintln!(
        "{} epochs, final loss {:.4e}, test L2 {}",
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN),
        report.test_l2.map_or("n/a".into(), |v| format!("{v:.4e}"))
    );
    println!("{}", run_dir.display());
    Ok(run_dir)
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    model: &'a str,
    run: String,
    n_test: usize,
    mean_l2: f64,
    per_sample_l2: &'a [f64],
    core_loss: hystop::metrics::MetricsReport,
}

/// Writes `metrics.json`, per-loop CSVs and SVG plots to `out`.
pub fn evaluate_run(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let run_dir = required(&cfg.evaluate.run, "evaluate.run (--run <run dir>)")?;
    let run_cfg = RunConfig::load(&run_dir.join(RUN_CONFIG))?;
    run_cfg.check_precision()?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("eval"));
    match run_cfg.model.precision.as_str() {
        "f64" => evaluate_as::<f64>(cfg, &run_cfg, run_dir, &out),
        _ => evaluate_as::<f32>(cfg, &run_cfg, run_dir, &out),
    }?;
    Ok(out)
}

fn evaluate_as<T: Real>(cfg: &RunConfig, run_cfg: &RunConfig, run_dir: &Path, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::<T>::load(&run_dir.join("best.ckpt"))?;
    let kind = ckpt.meta["model"].as_str().unwrap_or_default().to_string();
    if kind != run_cfg.model.kind {
        return Err(usage(format!(
            "checkpoint holds a {kind:?} model but the run was configured for {:?}",
            run_cfg.model.kind
        )));
    }
    let model = ModelRegistry::<T>::builtin().create(&kind, &ckpt.meta["config"])?;
    let splits = load_splits(required(&run_cfg.train.data, "train.data")?)?;
    if ckpt.meta.get("scale") != Some(&serde_json::to_value(&splits.manifest.scale)?) {
        return Err(usage(
            "dataset normalization differs from the one the model was trained with",
        ));
    }
    let test = &splits.test;
    if test.is_empty() {
        return Err(usage("test split is empty; nothing to evaluate"));
    }
    let data = TrainData::<T>::assemble(test, model.layout())?;
    let ev = evaluate(model.as_ref(), &ckpt.params, &data)?;
    let report = score(test, &ev.predictions, cfg.evaluate.baseline_mre)?;
    create_dir(out)?;
    let h_pred = denormalized_predictions(test, &ev.predictions)?;
    let default_plots = if splits.manifest.n_samples == 36 { 4 } else { 5 };
    let n_plots = cfg.evaluate.plots.unwrap_or(default_plots).min(test.len());
    for (i, hp) in h_pred.iter().enumerate() {
        let (b, h) = test.raw(i);
        let prov = &test.samples[i].prov;
        let dt = 1.0 / (prov.freq * b.len() as f64);
        let mut text = String::from("t_s,b_T,h_ref_Apm,h_pred_Apm\n");
        for k in 0..b.len() {
            text.push_str(&format!("{},{},{},{}\n", k as f64 * dt, b[k], h[k], hp[k]));
        }
        let path = out.join(format!("loop_{i:03}.csv"));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        if i < n_plots {
            let title = format!("{} Hz, {} T, shift {}", prov.freq, prov.b_peak, prov.shift);
            let path = out.join(format!("loop_{i:03}.svg"));
            std::fs::write(&path, loop_svg(&title, &b, &h, hp))
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    write_json(
        &out.join("metrics.json"),
        &EvalOutput {
            model: &kind,
            run: run_dir.display().to_string(),
            n_test: test.len(),
            mean_l2: ev.mean_l2(),
            per_sample_l2: &ev.per_sample_l2,
            core_loss: report.clone(),
        },
    )?;
    eprintln!(
        "{} test loops, mean L2 {:.4e}, core-loss MRE {:.4e}",
        test.len(),
        ev.mean_l2(),
        report.aggregate.mre
    );
    println!("{}", out.display());
    Ok(())
}
