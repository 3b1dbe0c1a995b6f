use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ipt_core::dataset::fixture::{synth_fixture, write_fixture_corpus, FixtureCorpusConfig, FixtureSpec};
use ipt_core::dataset::{
    corpus_stats, format_stats_table, rasterize_labels, read_annotations, split_corpus, split_deviation,
    write_annotations, write_metadata, CorpusSplit, NoteAnnotation, SplitSizes, TrackMetadata,
};
use ipt_core::evaluation::{
    evaluate_tracks, mlcm_heatmap, piano_roll, EvaluationReport, SkippedTrack, TrackEvaluation,
};
use ipt_core::features::{load_audio, write_wav, Cqt, FeatureCache, HOP, SAMPLE_RATE};
use ipt_core::model::{binarize, load_checkpoint, MultiScaleNet};
use ipt_core::pipeline::{load_tracks, predict_waveform, select_tracks, track_examples, ClipExample, CorpusLayout, Track};
use ipt_core::training::train;

use crate::activations::{format_activations, read_activations, write_atomic};
use crate::config::{default_split, RunConfig};

/// Batch size for inference when no run config is involved.
const PREDICT_BATCH: usize = 10;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ipt_core::Error::io(dir, e))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ipt_core::Error::Serde(e.to_string()))?;
    write_atomic(path, text.as_bytes())
}

/// Notes of every annotated track. Falls back to `annotations/*.tsv` when
/// the corpus has no metadata file.
fn corpus_notes(root: &Path) -> Result<Vec<NoteAnnotation>> {
    if !root.is_dir() {
        bail!(ipt_core::Error::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found")));
    }
    let layout = CorpusLayout::new(root);
    if layout.metadata_path().is_file() {
        return Ok(layout.annotated_tracks()?.into_iter().flat_map(|(_, n)| n).collect());
    }
    let dir = root.join("annotations");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| ipt_core::Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
        .collect();
    files.sort();
    let mut notes = Vec::new();
    for f in files {
        notes.extend(read_annotations(&f)?);
    }
    Ok(notes)
}

pub fn stats(corpus: &Path, out: Option<&Path>) -> Result<()> {
    let notes = corpus_notes(corpus)?;
    if notes.is_empty() {
        log::warn!("{} contains no annotated notes", corpus.display());
    }
    let stats = corpus_stats(&notes);
    let table = format_stats_table(&stats);
    print!("{table}");
    if let Some(out) = out {
        if out.extension().is_some_and(|x| x == "json") {
            write_json(out, &stats)?;
        } else {
            write_atomic(out, table.as_bytes())?;
        }
    }
    Ok(())
}

pub struct SplitArgs {
    pub corpus: PathBuf,
    pub sizes: Option<SplitSizes>,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn split(args: SplitArgs) -> Result<()> {
    let tracks = CorpusLayout::new(&args.corpus).annotated_tracks()?;
    let sizes = args.sizes.unwrap_or_else(|| default_split(tracks.len()));
    let split = split_corpus(&tracks, sizes, args.seed)?;
    let deviation = split_deviation(&tracks, &split)?;
    write_json(&args.out, &split)?;
    println!(
        "{} train / {} valid / {} test tracks, largest share deviation {:.3}; written to {}",
        split.train.len(),
        split.valid.len(),
        split.test.len(),
        deviation,
        args.out.display()
    );
    Ok(())
}

fn load_or_make_split(cfg: &RunConfig) -> Result<CorpusSplit> {
    let path = cfg.paths.out.join("split.json");
    if path.is_file() {
        let text = std::fs::read_to_string(&path).map_err(|e| ipt_core::Error::io(&path, e))?;
        return serde_json::from_str(&text).with_context(|| format!("reading {}", path.display()));
    }
    let tracks = cfg.layout().annotated_tracks()?;
    Ok(split_corpus(&tracks, cfg.split_sizes(tracks.len()), cfg.seed)?)
}

fn examples_for(tracks: &[Track], cache: Option<&FeatureCache>) -> Result<Vec<ClipExample>> {
    let mut out = Vec::new();
    for t in tracks {
        out.extend(track_examples(t, Cqt::standard(), cache)?);
    }
    Ok(out)
}

fn load_all(layout: &CorpusLayout, metas: &[TrackMetadata]) -> Result<Vec<Track>> {
    let (tracks, failed) = load_tracks(layout, metas);
    if let Some((id, e)) = failed.into_iter().next() {
        return Err(anyhow::Error::new(e).context(format!("loading track {id}")));
    }
    Ok(tracks)
}

pub fn train_run(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(o) = out {
        cfg.paths.out = o;
    }
    let cfg = cfg.resolve()?;
    let model_cfg = cfg.model.clone().expect("resolved config has a model");
    let layout = cfg.layout();
    let run = cfg.paths.out.clone();
    create_dir(&run)?;

    let annotated = layout.annotated_tracks()?;
    let split = split_corpus(&annotated, cfg.split_sizes(annotated.len()), cfg.seed)?;
    write_atomic(&run.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    write_json(&run.join("split.json"), &split)?;

    let metas = layout.metadata()?;
    let cache = cfg.paths.cache.as_deref().map(FeatureCache::open).transpose()?;
    let train_tracks = load_all(&layout, &select_tracks(&metas, &split.train)?)?;
    let valid_tracks = load_all(&layout, &select_tracks(&metas, &split.valid)?)?;
    let train_ex = examples_for(&train_tracks, cache.as_ref())?;
    let valid_ex = examples_for(&valid_tracks, cache.as_ref())?;
    log::info!("{} training clips, {} validation clips", train_ex.len(), valid_ex.len());

    let net = MultiScaleNet::new(model_cfg, cfg.seed)?;
    let outcome = train(net, &train_ex, &valid_ex, &cfg.train, Some(&run))?;
    write_json(&run.join("class_weights.json"), &outcome.weights)?;
    println!(
        "best validation F1 {:.4} at epoch {}; run directory {}",
        outcome.best_f1,
        outcome.best_epoch,
        run.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub config: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub out: Option<PathBuf>,
    pub threshold: f64,
    pub predictions: Option<PathBuf>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(&args.config)?.resolve()?;
    let model_cfg = cfg.model.clone().expect("resolved config has a model");
    let layout = cfg.layout();
    let split = load_or_make_split(&cfg)?;
    let ids: Vec<String> = match args.split.as_str() {
        "train" => split.train.clone(),
        "valid" => split.valid.clone(),
        "test" => split.test.clone(),
        "all" => split.sets().concat(),
        other => bail!(ipt_core::Error::config("--split", format!("{other:?} is not one of train, valid, test, all"))),
    };
    let metas = select_tracks(&layout.metadata()?, &ids)?;
    let out = args.out.unwrap_or_else(|| cfg.paths.out.join(format!("eval-{}", args.split)));

    let mut skipped = Vec::new();
    let (evals, config_hash) = match &args.predictions {
        Some(dir) => {
            let mut evals = Vec::new();
            for m in &metas {
                let path = dir.join(format!("{}.tsv", m.audio_id));
                if !path.is_file() {
                    skipped.push((m.audio_id.clone(), format!("no activation file {}", path.display())));
                    continue;
                }
                let (predicted, likelihoods) = read_activations(&path)?;
                let notes = read_annotations(&layout.annotation_path(&m.audio_id))?;
                let truth = rasterize_labels(&notes, predicted.n_frames(), HOP, SAMPLE_RATE)?.labels;
                evals.push(TrackEvaluation {
                    audio_id: m.audio_id.clone(),
                    likelihoods,
                    predicted,
                    truth,
                });
            }
            (evals, None)
        }
        None => {
            let ckpt_path = args
                .checkpoint
                .clone()
                .unwrap_or_else(|| cfg.paths.out.join("checkpoints").join("best.json"));
            let ckpt = load_checkpoint(&ckpt_path, Some(&model_cfg))?;
            let hash = ckpt.config_hash.clone();
            let net = ckpt.into_net()?;
            let (tracks, failed) = load_tracks(&layout, &metas);
            skipped.extend(failed.into_iter().map(|(id, e)| (id, e.to_string())));
            let evals = evaluate_tracks(&net, &tracks, Cqt::standard(), args.threshold, cfg.train.batch_size)?;
            (evals, Some(hash))
        }
    };

    let mut report = EvaluationReport::from_tracks(&evals, &args.split, args.threshold, config_hash)?;
    report.skipped = skipped
        .iter()
        .map(|(id, reason)| SkippedTrack {
            audio_id: id.clone(),
            reason: reason.clone(),
        })
        .collect();
    create_dir(&out.join("piano_roll"))?;
    report.write(&out.join("report.json"))?;
    mlcm_heatmap(&report.mlcm_matrix()?, &out.join("mlcm.png"))?;
    for e in &evals {
        let path = out.join("piano_roll").join(format!("{}.png", e.audio_id));
        piano_roll(&e.truth, e.likelihoods.as_ref(), &e.predicted, &path)?;
    }
    println!(
        "{} split, {} tracks: precision {:.4} recall {:.4} F1 {:.4} (micro); report in {}",
        args.split,
        evals.len(),
        report.overall.precision,
        report.overall.recall,
        report.overall.f1,
        out.display()
    );
    if !skipped.is_empty() {
        for (id, reason) in &skipped {
            log::error!("skipped {id}: {reason}");
        }
        bail!(ipt_core::Error::Validation(format!(
            "{} of {} tracks could not be evaluated",
            skipped.len(),
            metas.len()
        )));
    }
    Ok(())
}

pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub audio: PathBuf,
    pub out: PathBuf,
    pub figure: Option<PathBuf>,
    pub threshold: f64,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let net = load_checkpoint(&args.checkpoint, None)?.into_net()?;
    let samples = load_audio(&args.audio)?;
    let pred = predict_waveform(&net, &samples, Cqt::standard(), PREDICT_BATCH)?;
    let active = binarize(&pred, args.threshold)?;
    let figure = args.figure.unwrap_or_else(|| args.out.with_extension("png"));

    // Render next to the target first so a failure leaves neither file behind.
    let fig_tmp = figure.with_extension("png.tmp");
    piano_roll(&active, Some(&pred.likelihoods), &active, &fig_tmp)?;
    if let Err(e) = write_atomic(&args.out, format_activations(&pred.likelihoods, &active).as_bytes()) {
        let _ = std::fs::remove_file(&fig_tmp);
        return Err(e);
    }
    std::fs::rename(&fig_tmp, &figure).map_err(|e| ipt_core::Error::io(&figure, e))?;
    println!("{} frames written to {}", active.n_frames(), args.out.display());
    Ok(())
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub spec: Option<PathBuf>,
    pub corpus: FixtureCorpusConfig,
    pub seed: u64,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let Some(spec_path) = args.spec else {
        let metas = write_fixture_corpus(&args.out, &args.corpus, args.seed)?;
        println!("{} fixture tracks written to {}", metas.len(), args.out.display());
        return Ok(());
    };
    let text = std::fs::read_to_string(&spec_path).map_err(|e| ipt_core::Error::io(&spec_path, e))?;
    let spec = FixtureSpec::from_toml(&text)?;
    let fixture = synth_fixture(&spec, args.seed)?;
    let id = spec_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "fixture".into());
    let layout = CorpusLayout::new(&args.out);
    create_dir(&args.out.join("audio"))?;
    create_dir(&args.out.join("annotations"))?;
    write_wav(&layout.audio_path(&id), &fixture.samples)?;
    write_annotations(&layout.annotation_path(&id), &fixture.notes)?;
    let meta = TrackMetadata {
        audio_id: id.clone(),
        audio_name: id.clone(),
        mode: String::new(),
        time_signature: String::new(),
        performer: "synthetic".into(),
        genre: "synthetic".into(),
        audio_length: spec.duration,
    };
    write_metadata(&layout.metadata_path(), &[meta])?;
    println!("fixture {id} ({} notes) written to {}", fixture.notes.len(), args.out.display());
    Ok(())
}
