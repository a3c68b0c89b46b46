use std::io::Write as _;
use std::path::Path;

use serde::Serialize;
use zbcnn::data::synth::fau_name;
use zbcnn::data::{load_manifest, split_folds, subject_holdout, synth_generate, write_synth, Dataset, Role, SplitProtocol};
use zbcnn::fau::{collect_activations, fau_report, filter_selectivity_rank, write_report, HistConfig};
use zbcnn::gradcheck::{check_all, CheckConfig};
use zbcnn::introspect::{
    conv_maxima, guided_support_violation, receptive_window, render_grid, top_n, GridCell, GridEntry, MaximaTable,
    NeuronRef, ReconMode, Traced,
};
use zbcnn::model::ModelParams;
use zbcnn::train::{
    calibrate, cross_validate, evaluate, init_params, load_model_as, save_model, train, Control, CvConfig, CvProtocol, EpochMetrics,
};
use zbcnn::{Error, Result, Rng};

use crate::config::{DataSource, FilterSelect, Protocol, RawConfig, RunConfig};

// Fixed child streams of the run seed.
const STREAM_SYNTH: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TRAIN: u64 = 3;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Creates the output directory and writes the resolved configuration.
fn prepare_out(raw: &RawConfig, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    write_file(&cfg.out.join("config.resolved"), raw.snapshot())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synth { subjects, per_subject } => {
            synth_generate(*subjects, *per_subject, &cfg.classes, &Rng::new(cfg.seed).child(STREAM_SYNTH))
        }
        DataSource::Manifest { manifest, image_root } => load_manifest(manifest, image_root, &cfg.classes),
    }
}

struct Splits {
    train: Vec<usize>,
    valid: Vec<usize>,
    test: Vec<usize>,
}

fn splits(cfg: &RunConfig, ds: &Dataset) -> Result<Splits> {
    let mut rng = Rng::new(cfg.seed).child(STREAM_SPLIT);
    Ok(match cfg.protocol {
        Protocol::All => Splits { train: (0..ds.len()).collect(), valid: vec![], test: vec![] },
        Protocol::Holdout | Protocol::SubjectFolds => {
            let folds = if cfg.protocol == Protocol::Holdout { cfg.holdout_folds } else { cfg.cv_folds };
            let (train, test) = subject_holdout(ds, folds, &mut rng)?;
            Splits { train, valid: vec![], test }
        }
        Protocol::ManifestFolds => {
            let tags = ds.folds.as_ref().ok_or_else(|| Error::Usage("manifest has no fold/role columns".into()))?;
            let pick = |role| (0..ds.len()).filter(|&i| tags[i].fold == 0 && tags[i].role == Some(role)).collect();
            Splits { train: pick(Role::Train), valid: pick(Role::Valid), test: pick(Role::Test) }
        }
    })
}

fn load_weights(cfg: &RunConfig) -> Result<ModelParams<f32>> {
    let path = cfg.weights.as_ref().ok_or_else(|| Error::Usage("no weights file given (--weights)".into()))?;
    let m = zbcnn::train::load_model::<f32>(path)?;
    if m.n_classes() != cfg.classes.len() {
        return Err(Error::Usage(format!(
            "model has {} outputs but {} classes are configured",
            m.n_classes(),
            cfg.classes.len()
        )));
    }
    load_model_as(path, &m.spec)
}

fn metrics_line(fold: Option<usize>, m: &EpochMetrics) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        fold: Option<usize>,
        #[serde(flatten)]
        m: &'a EpochMetrics,
    }
    serde_json::to_string(&Line { fold, m }).expect("plain data")
}

pub fn synth(raw: &RawConfig) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let DataSource::Synth { subjects, per_subject } = cfg.data else {
        return Err(Error::Usage("synth generates data; do not set a manifest".into()));
    };
    let ds = load_dataset(&cfg)?;
    write_synth(&ds, &cfg.out)?;
    println!("wrote {} samples ({subjects} subjects x {per_subject}) to {}", ds.len(), cfg.out.display());
    Ok(())
}

pub fn train_cmd(raw: &RawConfig) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let sp = splits(&cfg, &ds)?;
    let root = Rng::new(cfg.seed);
    let (mut params, _) = init_params::<f32>(&cfg.spec, &cfg.init, &mut root.child(STREAM_INIT))?;
    params.meta.seed = cfg.seed;
    params.meta.config_hash = cfg.hash;
    let train_set = ds.prepare::<f32>(&sp.train)?;
    let valid_set = if sp.valid.is_empty() { None } else { Some(ds.prepare::<f32>(&sp.valid)?) };
    calibrate(&mut params, &train_set, &cfg.init)?;

    let mpath = cfg.out.join("metrics.jsonl");
    let mut metrics = std::fs::File::create(&mpath).map_err(io_err(&mpath))?;
    let mut write_err = None;
    let outcome = train(params, &train_set, valid_set.as_ref(), &cfg.train, &mut root.child(STREAM_TRAIN), &mut |m, _| {
        eprintln!(
            "epoch {:>4}  loss {:.4}  train {:.3}{}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            m.valid_acc.map(|v| format!("  valid {v:.3}")).unwrap_or_default()
        );
        match writeln!(metrics, "{}", metrics_line(None, m)) {
            Ok(()) => Control::Continue,
            Err(e) => {
                write_err = Some(e);
                Control::Stop
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&mpath, e));
    }
    save_model(&outcome.params, &cfg.out.join("weights.zbc"))?;
    print!("trained {} epochs (kept epoch {})", outcome.history.len(), outcome.best_epoch);
    if !sp.test.is_empty() {
        let test = ds.prepare::<f32>(&sp.test)?;
        let e = evaluate(&outcome.params, &test)?;
        print!("; held-out accuracy {:.1}% on {} samples", 100.0 * e.accuracy, sp.test.len());
    }
    println!();
    Ok(())
}

pub fn eval(raw: &RawConfig) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let params = load_weights(&cfg)?;
    let ds = load_dataset(&cfg)?;
    let sp = splits(&cfg, &ds)?;
    let idx = if sp.test.is_empty() { (0..ds.len()).collect() } else { sp.test };
    let e = evaluate(&params, &ds.prepare::<f32>(&idx)?)?;
    #[derive(Serialize)]
    struct Out<'a> {
        accuracy: f64,
        samples: usize,
        classes: &'a [String],
        confusion: &'a [Vec<usize>],
    }
    let json = serde_json::to_string_pretty(&Out {
        accuracy: e.accuracy,
        samples: idx.len(),
        classes: &cfg.classes,
        confusion: &e.confusion,
    })
    .expect("plain data");
    write_file(&cfg.out.join("eval.json"), json)?;
    println!("accuracy {:.1}% on {} samples", 100.0 * e.accuracy, idx.len());
    Ok(())
}

pub fn crossval(raw: &RawConfig) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let ds = load_dataset(&cfg)?;
    let mut rng = Rng::new(cfg.seed).child(STREAM_SPLIT);
    let (ds, protocol) = match cfg.protocol {
        Protocol::SubjectFolds => {
            (split_folds(ds, &SplitProtocol::SubjectKFold { folds: cfg.cv_folds }, &mut rng)?, CvProtocol::CkPlus10Fold)
        }
        Protocol::ManifestFolds => (split_folds(ds, &SplitProtocol::ManifestFolds, &mut rng)?, CvProtocol::Tfd5Fold),
        _ => return Err(Error::Usage("crossval needs protocol = ck_plus_10fold or tfd_5fold".into())),
    };
    let mpath = cfg.out.join("metrics.jsonl");
    let mut metrics = std::fs::File::create(&mpath).map_err(io_err(&mpath))?;
    let mut write_err = None;
    let cv = CvConfig { spec: cfg.spec.clone(), init: cfg.init.clone(), train: cfg.train.clone() };
    let report = cross_validate::<f32>(&ds, protocol, &cv, &Rng::new(cfg.seed).child(STREAM_TRAIN), &mut |fold, m| {
        eprintln!("fold {fold} epoch {:>4}  loss {:.4}", m.epoch, m.train_loss);
        if let Err(e) = writeln!(metrics, "{}", metrics_line(Some(fold), m)) {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(Error::io(&mpath, e));
    }
    write_file(&cfg.out.join("crossval.json"), serde_json::to_string_pretty(&report).expect("plain data"))?;
    for f in &report.folds {
        println!("fold {:>2}: {:.1}% ({} train / {} test)", f.fold, 100.0 * f.accuracy, f.n_train, f.n_test);
    }
    println!("{report}");
    Ok(())
}

/// Samples used for introspection and analysis: the training split unless
/// `split = all`.
fn analysis_indices(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<usize>> {
    if cfg.all_samples {
        return Ok((0..ds.len()).collect());
    }
    Ok(splits(cfg, ds)?.train)
}

fn select_filters(cfg: &RunConfig, table: &MaximaTable, labels: &[usize]) -> Result<Vec<usize>> {
    Ok(match &cfg.filters {
        FilterSelect::All => (0..table.filters).collect(),
        FilterSelect::List(l) => {
            if let Some(bad) = l.iter().find(|&&f| f >= table.filters) {
                return Err(Error::Usage(format!("filter {bad} out of range (layer has {})", table.filters)));
            }
            l.clone()
        }
        FilterSelect::Auto(k) => {
            let records: Vec<_> = (0..table.filters)
                .map(|f| zbcnn::fau::ActivationRecord {
                    filter: f,
                    sample_ids: table.sample_ids.clone(),
                    values: table.column(f),
                })
                .collect();
            filter_selectivity_rank(&records, labels, cfg.classes.len()).into_iter().take(*k).map(|(f, _)| f).collect()
        }
    })
}

pub fn visualize(raw: &RawConfig, verify: bool) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let params = load_weights(&cfg)?;
    let ds = load_dataset(&cfg)?;
    let idx = analysis_indices(&cfg, &ds)?;
    let set = ds.prepare::<f32>(&idx)?;
    let table = conv_maxima(&params, &set, cfg.layer)?;
    let filters = select_filters(&cfg, &table, &set.labels)?;
    if cfg.topn > set.len() {
        eprintln!("warning: topn {} exceeds the {} available samples; showing all", cfg.topn, set.len());
    }
    let pos_of: std::collections::HashMap<usize, usize> =
        set.sample_ids.iter().enumerate().map(|(p, &id)| (id, p)).collect();
    let modes: Vec<ReconMode> = if verify { vec![ReconMode::Plain, ReconMode::Guided] } else { vec![cfg.mode] };
    let conv = params.spec.conv_index(cfg.layer).expect("checked by conv_maxima");

    let mut entries = Vec::new();
    let mut maps: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); modes.len()];
    let mut inputs: Vec<Vec<Vec<f64>>> = Vec::new();
    for &f in &filters {
        let mut input_row = Vec::new();
        let mut rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); modes.len()];
        for e in top_n(&table, f, cfg.topn)? {
            let image = &set.images[pos_of[&e.sample_id]];
            let traced = Traced::new(&params, image, cfg.layer)?;
            let neuron = NeuronRef { layer: cfg.layer, filter: f, y: e.position.0, x: e.position.1 };
            for (m, &mode) in modes.iter().enumerate() {
                let rec = traced.reconstruct(&neuron, mode)?;
                if verify {
                    verify_reconstruction(&params, conv, &neuron, &rec, mode)?;
                }
                rows[m].push(rec.map.data().iter().map(|&v| v as f64).collect());
            }
            input_row.push(image.data().iter().map(|&v| v as f64).collect());
            entries.push(GridEntry { filter: f, rank: e.rank, sample_id: e.sample_id, value: e.value, position: e.position });
        }
        for (m, r) in rows.into_iter().enumerate() {
            maps[m].push(r);
        }
        inputs.push(input_row);
    }
    let side = zbcnn::data::IMAGE_SIDE;
    for (m, mode) in modes.iter().enumerate() {
        let cells: Vec<Vec<GridCell>> = maps[m]
            .iter()
            .zip(&inputs)
            .map(|(row, irow)| row.iter().zip(irow).map(|(r, i)| GridCell { reconstruction: r, input: i }).collect())
            .collect();
        let name = match mode {
            ReconMode::Plain => "grid_plain.png",
            ReconMode::Guided => "grid_guided.png",
        };
        render_grid(&cells, side, cfg.overlay, &entries, &cfg.out.join(name))?;
        println!("wrote {} ({} filters x {} images)", cfg.out.join(name).display(), filters.len(), cfg.topn.min(set.len()));
    }
    if verify {
        println!("verified: receptive-field confinement and guided support hold for all {} neurons", entries.len());
    }
    Ok(())
}

fn verify_reconstruction(
    params: &ModelParams<f32>,
    conv: usize,
    n: &NeuronRef,
    rec: &zbcnn::introspect::Reconstruction<f32>,
    mode: ReconMode,
) -> Result<()> {
    let (y0, y1, x0, x1) = receptive_window(&params.spec, conv, n.y, n.x)?;
    let [_, _, h, w] = rec.map.shape();
    for y in 0..h {
        for x in 0..w {
            if rec.map.at(0, 0, y, x) != 0.0 && !((y0..y1).contains(&y) && (x0..x1).contains(&x)) {
                return Err(Error::Numeric(format!("{n:?}: pixel ({y}, {x}) lies outside its receptive field")));
            }
        }
    }
    if mode == ReconMode::Guided {
        if let Some(layer) = guided_support_violation(rec) {
            return Err(Error::Numeric(format!("{n:?}: guided signal escapes the plain support at layer {layer}")));
        }
    }
    Ok(())
}

pub fn analyze_fau(raw: &RawConfig) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let params = load_weights(&cfg)?;
    let ds = load_dataset(&cfg)?;
    let idx = analysis_indices(&cfg, &ds)?;
    let set = ds.prepare::<f32>(&idx)?;
    let records = collect_activations(&params, &set, cfg.layer)?;
    let table = MaximaTable {
        layer: cfg.layer,
        filters: records.len(),
        sample_ids: set.sample_ids.clone(),
        values: (0..set.len()).flat_map(|s| records.iter().map(move |r| r.values[s])).collect(),
        positions: vec![(0, 0); set.len() * records.len()],
    };
    let filters = select_filters(&cfg, &table, &set.labels)?;
    let chosen: Vec<_> = filters.iter().map(|&f| records[f].clone()).collect();
    let fau_sets: Vec<_> = idx.iter().map(|&i| ds.samples[i].fau_set.clone()).collect();
    let sub = ds.subset(&idx);
    let faus = sub.fau_ids();
    let hist = HistConfig { bins: cfg.bins, min_support: cfg.min_support, ..HistConfig::default() };
    let report = fau_report(&chosen, &fau_sets, &faus, &hist)?;
    let synthetic = cfg.synthetic_names;
    let name = move |j: u32| if synthetic { fau_name(j) } else { format!("AU{j}") };
    write_report(&report, &cfg.out, name)?;
    for f in &filters {
        match report.top(*f) {
            Some(r) => println!("filter {f:>3}: {} (KL {:.4})", name(r.fau), r.kl.expect("top rows are supported")),
            None => println!("filter {f:>3}: no supported unit"),
        }
    }
    Ok(())
}

pub fn gradcheck(raw: &RawConfig, seeds: usize) -> Result<()> {
    let cfg = raw.resolve()?;
    prepare_out(raw, &cfg)?;
    let check = CheckConfig::default();
    let mut failed = Vec::new();
    let mut lines = String::from("seed,name,checked,max_rel_error,max_abs_error,passed\n");
    for s in 0..seeds as u64 {
        let seed = cfg.seed + s;
        for r in check_all(seed, &check)? {
            println!(
                "{} seed {seed:>3}  {:<40} max rel {:.2e}  max abs {:.2e}",
                if r.passed { "PASS" } else { "FAIL" },
                r.name,
                r.max_rel_error,
                r.max_abs_error
            );
            lines.push_str(&format!("{seed},{},{},{:e},{:e},{}\n", r.name, r.checked, r.max_rel_error, r.max_abs_error, r.passed));
            if !r.passed {
                failed.push(format!("{} (seed {seed})", r.name));
            }
        }
    }
    write_file(&cfg.out.join("gradcheck.csv"), lines)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed: {}", failed.join(", "))))
    }
}
