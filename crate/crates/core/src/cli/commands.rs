use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use super::config::{load_json, FeatureConfig, TrainFile};
use super::{Cli, Command, Outcome};
use crate::analysis::{run_gradcheck, std_report, Fault, GradcheckConfig};
use crate::control::{apply_edits, extract_weights, layer_contributions, recompose, EditScript, WeightMatrix};
use crate::error::{Result, RsmError};
use crate::features::{encode_melf, extract_file, read_melf, MelExtractor, MelSpectrogram, Normalization};
use crate::io::{atomic_write, sha256_hex};
use crate::model::{Checkpoint, RsmModel};
use crate::numerics::{cosine_distance, cosine_similarity};
use crate::training::{gen_corpus, metrics_jsonl, prepare_mels, train, Corpus, CorpusConfig};

pub fn run(cli: Cli) -> Result<Outcome> {
    let Cli {
        seed,
        config,
        out,
        command,
    } = cli;
    match command {
        Command::Extract { input, normalization } => extract(&input, normalization, config.as_deref(), out),
        Command::Train { corpus } => cmd_train(config.as_deref(), corpus, seed, out),
        Command::Weights {
            checkpoint,
            input,
            compare,
            json,
            container,
            normalization,
        } => weights(
            &checkpoint,
            &input,
            compare.as_deref(),
            json,
            container,
            normalization,
            out,
        ),
        Command::Edit {
            checkpoint,
            src,
            tgt,
            script,
            provenance,
            normalization,
        } => edit(&checkpoint, &src, &tgt, &script, provenance, normalization, out),
        Command::AnalyzeStd {
            checkpoint,
            corpus,
            min_index,
            normalization,
        } => analyze_std(&checkpoint, &corpus, min_index, normalization, out),
        Command::Gradcheck { inject_fault } => gradcheck(config.as_deref(), seed, inject_fault, out),
        Command::GenCorpus {
            speakers,
            utterances,
            min_duration,
            max_duration,
        } => {
            let mut cfg: CorpusConfig = match config {
                Some(p) => load_json(&p)?,
                None => CorpusConfig::default(),
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.num_speakers = speakers.unwrap_or(cfg.num_speakers);
            cfg.utterances_per_speaker = utterances.unwrap_or(cfg.utterances_per_speaker);
            cfg.min_duration = min_duration.unwrap_or(cfg.min_duration);
            cfg.max_duration = max_duration.unwrap_or(cfg.max_duration);
            let out = required_out(out)?;
            let corpus = gen_corpus(&cfg)?;
            corpus.write_dir(&out)?;
            println!(
                "wrote {} utterances from {} speakers to {} (fingerprint {})",
                corpus.utterances.len(),
                corpus.speakers.len(),
                out.display(),
                corpus.fingerprint()
            );
            Ok(Outcome::Success)
        }
    }
}

fn required_out(out: Option<PathBuf>) -> Result<PathBuf> {
    out.ok_or_else(|| RsmError::config("--out", "this command needs an output path"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn extract(
    input: &Path,
    normalization: Option<Normalization>,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let mut cfg: FeatureConfig = match config {
        Some(p) => load_json(p)?,
        None => FeatureConfig::default(),
    };
    cfg.normalization = normalization.unwrap_or(cfg.normalization);
    cfg.mel.validate()?;
    let out = required_out(out)?;
    let extractor = MelExtractor::new(&cfg.mel)?;

    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        let mut wavs: Vec<PathBuf> = std::fs::read_dir(input)
            .map_err(|e| RsmError::file(input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_wav(p))
            .collect();
        wavs.sort();
        if wavs.is_empty() {
            return Err(RsmError::InvalidInput(format!(
                "no inputs: {} holds no .wav files",
                input.display()
            )));
        }
        std::fs::create_dir_all(&out).map_err(|e| RsmError::file(&out, e))?;
        wavs.into_iter()
            .map(|w| {
                let name = w.with_extension("melf");
                let dest = out.join(name.file_name().expect("file has a name"));
                (w, dest)
            })
            .collect()
    } else {
        let dest = if out.is_dir() {
            out.join(input.with_extension("melf").file_name().unwrap_or_default())
        } else {
            out
        };
        vec![(input.to_path_buf(), dest)]
    };

    let mut failures = Vec::new();
    for (src, dest) in &jobs {
        let result = extract_file(src, cfg.normalization, &extractor)
            .and_then(|mel| atomic_write(dest, &encode_melf(&mel)?).map(|_| mel.num_frames()));
        match result {
            Ok(frames) => println!("{} -> {} ({frames} frames)", src.display(), dest.display()),
            Err(e) => failures.push(format!("{}: {e}", src.display())),
        }
    }
    if failures.is_empty() {
        return Ok(Outcome::Success);
    }
    for f in &failures {
        eprintln!("error: {f}");
    }
    eprintln!("{} of {} inputs failed", failures.len(), jobs.len());
    Ok(Outcome::Failed)
}

fn cmd_train(
    config: Option<&Path>,
    corpus: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let path = config.ok_or_else(|| RsmError::config("--config", "train needs a configuration file"))?;
    let mut file: TrainFile = load_json(path)?;
    if let Some(c) = corpus {
        file.corpus = c;
    }
    if let Some(s) = seed {
        file.train.seed = s;
        file.model.seed = s;
    }
    file.validate()?;
    let out = out.unwrap_or_else(|| PathBuf::from("run"));
    std::fs::create_dir_all(&out).map_err(|e| RsmError::file(&out, e))?;

    let corpus = Corpus::read_dir(&file.corpus)?;
    let extractor = MelExtractor::new(&file.mel)?;
    let data = prepare_mels(&corpus, &extractor, file.normalization)?;
    let model = RsmModel::new(file.model.clone())?;
    let outcome = train(&data, model, &file.train)?;

    let ck_path = out.join("checkpoint.rsmc");
    let bytes = outcome.checkpoint.to_bytes()?;
    atomic_write(&ck_path, &bytes)?;
    atomic_write(out.join("metrics.jsonl"), metrics_jsonl(&outcome.metrics).as_bytes())?;
    let first = outcome.metrics.first().map_or(f64::NAN, |m| m.loss);
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
    println!(
        "trained {} ({}) for {} steps: loss {first:.4} -> {last:.4}",
        file.model.residual_mode.system_id(),
        file.model.residual_mode,
        file.train.max_steps
    );
    println!("checkpoint {} sha256 {}", ck_path.display(), sha256_hex(&bytes));
    Ok(Outcome::Success)
}

/// MELF files are read as-is; WAV files go through the checkpoint's front end.
fn load_features(path: &Path, checkpoint: &Checkpoint, norm: Normalization) -> Result<MelSpectrogram> {
    if is_wav(path) {
        extract_file(path, norm, &MelExtractor::new(&checkpoint.mel)?)
    } else {
        read_melf(path)
    }
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| RsmError::file(path, e))?))
}

fn weights(
    checkpoint: &Path,
    input: &Path,
    compare: Option<&Path>,
    json_out: Option<PathBuf>,
    container: Option<PathBuf>,
    norm: Normalization,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let out = required_out(out)?;
    let ck = Checkpoint::load(checkpoint)?;
    let w = extract_weights(&load_features(input, &ck, norm)?, &ck)?;
    // Re-validate exactly what the CSV will hold.
    let written = w.to_csv();
    let row_sums: Vec<f64> = WeightMatrix::from_csv(&written)?
        .as_matrix()
        .data()
        .chunks(w.tokens())
        .map(|r| r.iter().sum())
        .collect();
    atomic_write(&out, written.as_bytes())?;
    if let Some(p) = json_out {
        let rows: Vec<&[f64]> = (0..w.layers()).map(|i| w.row(i)).collect();
        write_json(
            &p,
            &json!({ "layers": w.layers(), "tokens": w.tokens(), "weights": rows, "row_sums": row_sums }),
        )?;
    }
    if let Some(p) = container {
        atomic_write(&p, &w.to_container(None)?)?;
    }
    let mut summary = json!({ "layers": w.layers(), "tokens": w.tokens(), "csv": out, "row_sums": row_sums });
    if let Some(other) = compare {
        let w2 = extract_weights(&load_features(other, &ck, norm)?, &ck)?;
        summary["flattened_cosine"] = json!(cosine_similarity(w.flattened(), w2.flattened()));
    }
    println!("{summary}");
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct LayerDistance {
    layer: usize,
    distance_to_source: f64,
    distance_to_target: f64,
}

fn edit(
    checkpoint: &Path,
    src: &Path,
    tgt: &Path,
    script_path: &Path,
    provenance: Option<PathBuf>,
    norm: Normalization,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let out = required_out(out)?;
    let text = std::fs::read_to_string(script_path)
        .map_err(|e| RsmError::config(script_path.display().to_string(), e.to_string()))?;
    let script = EditScript::from_json(&text)?;
    let ck = Checkpoint::load(checkpoint)?;
    let model = &ck.model;
    script.validate(model.config.n_layers, model.config.n_tokens)?;

    let ws = extract_weights(&load_features(src, &ck, norm)?, &ck)?;
    let wt = extract_weights(&load_features(tgt, &ck, norm)?, &ck)?;
    let edited = apply_edits(&ws, &wt, &script)?;
    let e_src = recompose(&ws, model)?;
    let e_tgt = recompose(&wt, model)?;
    let e = recompose(&edited, model)?;

    let (c_src, c_tgt, c_edit) = (
        layer_contributions(&ws, model)?,
        layer_contributions(&wt, model)?,
        layer_contributions(&edited, model)?,
    );
    let layers: Vec<LayerDistance> = (0..model.config.n_layers)
        .map(|i| LayerDistance {
            layer: i,
            distance_to_source: cosine_distance(&c_edit[i], &c_src[i]),
            distance_to_target: cosine_distance(&c_edit[i], &c_tgt[i]),
        })
        .collect();

    write_json(
        &out,
        &json!({ "format": "rsm-embedding", "version": 1, "dims": e.len(), "embedding": e }),
    )?;
    let prov_path = provenance.unwrap_or_else(|| {
        let mut s = out.clone().into_os_string();
        s.push(".provenance.json");
        PathBuf::from(s)
    });
    let record = json!({
        "script": script,
        "inputs": {
            "checkpoint": file_hash(checkpoint)?,
            "src": file_hash(src)?,
            "tgt": file_hash(tgt)?,
        },
        "distance_to_source": cosine_distance(&e, &e_src),
        "distance_to_target": cosine_distance(&e, &e_tgt),
        "layers": layers,
    });
    write_json(&prov_path, &record)?;
    println!(
        "edited embedding -> {} (distance to source {:.6}, to target {:.6})",
        out.display(),
        record["distance_to_source"],
        record["distance_to_target"]
    );
    Ok(Outcome::Success)
}

fn analyze_std(
    checkpoints: &[PathBuf],
    corpus: &Path,
    min_index: usize,
    norm: Normalization,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let cks = checkpoints.iter().map(Checkpoint::load).collect::<Result<Vec<_>>>()?;
    let corpus = Corpus::read_dir(corpus)?;
    let (_, kept) = corpus.split_by_index(min_index);
    if kept.utterances.is_empty() {
        return Err(RsmError::InvalidInput("empty corpus: no utterances to analyze".into()));
    }
    let extractor = MelExtractor::new(&cks[0].mel)?;
    let mels: Vec<MelSpectrogram> = prepare_mels(&kept, &extractor, norm)?
        .into_iter()
        .map(|u| u.mel)
        .collect();
    let refs: Vec<&Checkpoint> = cks.iter().collect();
    let report = std_report(&refs, &mels, kept.fingerprint())?;
    print!("{}", report.to_table());
    if let Some(p) = out {
        write_json(&p, &report)?;
    }
    Ok(Outcome::Success)
}

fn gradcheck(config: Option<&Path>, seed: Option<u64>, fault: Option<String>, out: Option<PathBuf>) -> Result<Outcome> {
    let mut cfg: GradcheckConfig = match config {
        Some(p) => load_json(p)?,
        None => GradcheckConfig::default(),
    };
    if let Some(s) = seed {
        cfg.model.seed = s;
    }
    let fault = fault.map(|parameter| Fault::ScaleGradient {
        parameter,
        factor: 1.01,
    });
    let report = run_gradcheck(&cfg, fault.as_ref())?;
    print!("{}", report.render());
    if let Some(p) = out {
        write_json(&p, &report)?;
    }
    Ok(if report.passed {
        Outcome::Success
    } else {
        Outcome::Failed
    })
}
