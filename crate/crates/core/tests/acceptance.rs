//! Acceptance criteria, one test per criterion. Each prints a single
//! `[PASS]` / `[FAIL]` line with the measured values before asserting.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm::analysis::{layer_std, mel_fingerprint, run_gradcheck, std_report, GradcheckConfig};
use rsm::control::{apply_edits, extract_weights, recompose, Edit, EditScript, EditSource};
use rsm::features::{MelConfig, MelExtractor, MelSpectrogram, Normalization};
use rsm::io::sha256_hex;
use rsm::model::{Checkpoint, ResidualMode, RsmConfig, RsmModel};
use rsm::numerics::{cosine_similarity, max_abs_diff, Matrix};
use rsm::training::{
    evaluate_embeddings, gen_corpus, prepare_mels, train, CorpusConfig, LabeledMel, StepRecord, TrainConfig,
};

const TRAIN_UTTERANCES: usize = 20;

fn verdict(id: &str, name: &str, pass: bool, detail: String) {
    let mark = if pass { "PASS" } else { "FAIL" };
    println!("[{mark}] {id} {name}: {detail}");
}

struct Data {
    train: Vec<LabeledMel>,
    held_out: Vec<LabeledMel>,
    unseen: Vec<LabeledMel>,
}

fn data() -> &'static Data {
    static DATA: OnceLock<Data> = OnceLock::new();
    DATA.get_or_init(|| {
        let ex = MelExtractor::new(&MelConfig::default()).unwrap();
        let seen = gen_corpus(&CorpusConfig::default()).unwrap();
        let (train_c, held_c) = seen.split_by_index(TRAIN_UTTERANCES);
        let unseen = gen_corpus(&CorpusConfig {
            seed: 4321,
            num_speakers: 10,
            utterances_per_speaker: 6,
            ..Default::default()
        })
        .unwrap();
        Data {
            train: prepare_mels(&train_c, &ex, Normalization::Peak).unwrap(),
            held_out: prepare_mels(&held_c, &ex, Normalization::Peak).unwrap(),
            unseen: prepare_mels(&unseen, &ex, Normalization::Peak).unwrap(),
        }
    })
}

struct Trained {
    checkpoint: Checkpoint,
    metrics: Vec<StepRecord>,
    elapsed: Duration,
}

fn train_desk(mode: ResidualMode, seed: u64) -> Trained {
    let model = RsmModel::new(RsmConfig {
        residual_mode: mode,
        seed,
        ..RsmConfig::desk()
    })
    .unwrap();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::desk()
    };
    let start = Instant::now();
    let out = train(&data().train, model, &cfg).unwrap();
    Trained {
        checkpoint: out.checkpoint,
        metrics: out.metrics,
        elapsed: start.elapsed(),
    }
}

fn p01() -> &'static Trained {
    static P01: OnceLock<Trained> = OnceLock::new();
    P01.get_or_init(|| train_desk(ResidualMode::PerLayer, 1234))
}

fn p02() -> &'static Trained {
    static P02: OnceLock<Trained> = OnceLock::new();
    P02.get_or_init(|| train_desk(ResidualMode::None, 1234))
}

fn random_frames(rng: &mut ChaCha8Rng, t: usize, bins: usize) -> Matrix {
    Matrix::from_vec(t, bins, (0..t * bins).map(|_| rng.random_range(-8.0..2.0)).collect()).unwrap()
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    for d_s in [8, 12, 16] {
        for alpha in [2, 4] {
            for n_tokens in [2, 5, 8] {
                for n_layers in 1..=4 {
                    let mut cfg = GradcheckConfig::default();
                    cfg.model.d_s = d_s;
                    cfg.model.alpha = alpha;
                    cfg.model.n_tokens = n_tokens;
                    cfg.model.n_layers = n_layers;
                    cfg.model.seed = (d_s * 1000 + alpha * 100 + n_tokens * 10 + n_layers) as u64;
                    let report = run_gradcheck(&cfg, None).unwrap();
                    for s in &report.sections {
                        cases += 1;
                        for f in &s.findings {
                            if f.max_relative_error > worst.0 {
                                worst = (
                                    f.max_relative_error,
                                    format!("{} d_s={d_s} a={alpha} n={n_tokens} K={n_layers} {}", s.mode, f.name),
                                );
                            }
                        }
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst.0 <= 1e-4 && elapsed < Duration::from_secs(60);
    verdict(
        "C1",
        "gradient check",
        pass,
        format!(
            "{cases} mode/shape cases, max rel err {:.2e} ({}), {:.1}s",
            worst.0,
            worst.1,
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_2_structural_identities() {
    let ck = &p01().checkpoint;
    let model = &ck.model;
    let (mut row_err, mut neg, mut tele, mut round, mut full) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let utts = &data().held_out;
    for (i, u) in utts.iter().enumerate() {
        let out = model.forward(&u.mel).unwrap();
        for l in &out.layers {
            row_err = row_err.max((l.weights.iter().sum::<f64>() - 1.0).abs());
            neg = neg.min(l.weights.iter().cloned().fold(f64::MAX, f64::min));
        }
        let mut sum = out.embedding.clone();
        sum.iter_mut().zip(out.final_residual()).for_each(|(a, r)| *a += r);
        tele = tele.max(max_abs_diff(&sum, &out.speaker));

        let w = extract_weights(&u.mel, ck).unwrap();
        round = round.max(max_abs_diff(&recompose(&w, model).unwrap(), &out.embedding));

        let other = &utts[(i + 7) % utts.len()];
        let wt = extract_weights(&other.mel, ck).unwrap();
        let all = EditScript::new(
            (0..model.config.n_layers)
                .map(|layer| Edit::ReplaceLayer {
                    layer,
                    source: EditSource::Tgt,
                })
                .collect(),
        );
        let replaced = recompose(&apply_edits(&w, &wt, &all).unwrap(), model).unwrap();
        full = full.max(max_abs_diff(&replaced, &recompose(&wt, model).unwrap()));
    }
    let pass = row_err <= 1e-9 && neg >= 0.0 && tele <= 1e-9 && round <= 1e-9 && full <= 1e-9;
    verdict(
        "C2",
        "structural identities",
        pass,
        format!(
            "{} utterances: (a) row-sum err {row_err:.1e}, min weight {neg:.1e}; (b) telescoping {tele:.1e}; (c) roundtrip {round:.1e}; (d) full replacement {full:.1e}",
            utts.len()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_pooling_contract() {
    let model = RsmModel::new(RsmConfig::desk()).unwrap();
    let bins = model.config.encoder.mel_bins;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let frames = random_frames(&mut rng, 40, bins);
    let s = model
        .speaker_vector(&MelSpectrogram {
            frames: frames.clone(),
            config: MelConfig::default(),
        })
        .unwrap();

    let mut perm_identical = true;
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..40).collect();
        for i in (1..40).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<Vec<f64>> = order.iter().map(|&r| frames.row(r).to_vec()).collect();
        let mel = MelSpectrogram {
            frames: Matrix::from_rows(&rows).unwrap(),
            config: MelConfig::default(),
        };
        perm_identical &= model.speaker_vector(&mel).unwrap() == s;
    }

    let doubled: Vec<Vec<f64>> = (0..80).map(|r| frames.row(r % 40).to_vec()).collect();
    let mel = MelSpectrogram {
        frames: Matrix::from_rows(&doubled).unwrap(),
        config: MelConfig::default(),
    };
    let dup = max_abs_diff(&model.speaker_vector(&mel).unwrap(), &s);

    let dims: Vec<usize> = [1, 5, 128, 1000]
        .iter()
        .map(|&t| {
            let mel = MelSpectrogram {
                frames: random_frames(&mut rng, t, bins),
                config: MelConfig::default(),
            };
            model.forward(&mel).unwrap().embedding.len()
        })
        .collect();
    let pass = perm_identical && dup <= 1e-12 && dims.iter().all(|&d| d == model.config.d_s);
    verdict(
        "C3",
        "mean-pooled encoder",
        pass,
        format!("permutation bit-identical: {perm_identical}; duplication diff {dup:.1e}; dims for T=1,5,128,1000: {dims:?}"),
    );
    assert!(pass);
}

fn mode_gap(n_layers: usize) -> f64 {
    let base = RsmConfig {
        n_layers,
        seed: 42,
        ..RsmConfig::desk()
    };
    let a = RsmModel::new(RsmConfig {
        residual_mode: ResidualMode::PerLayer,
        ..base.clone()
    })
    .unwrap();
    let b = RsmModel::new(RsmConfig {
        residual_mode: ResidualMode::VerbatimAlgorithm,
        ..base
    })
    .unwrap();
    assert_eq!(a.params, b.params);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mel = MelSpectrogram {
        frames: random_frames(&mut rng, 20, 80),
        config: MelConfig::default(),
    };
    max_abs_diff(&a.forward(&mel).unwrap().embedding, &b.forward(&mel).unwrap().embedding)
}

#[test]
fn criterion_4_mode_discrepancy() {
    let k2 = mode_gap(2);
    let k3 = mode_gap(3);
    verdict(
        "C4",
        "per_layer vs verbatim_algorithm at K=2",
        k2 > 1e-6,
        format!("max-abs diff {k2:.3e} (both readings feed layer 2 the query S - e1)"),
    );
    verdict(
        "C4+",
        "per_layer vs verbatim_algorithm at K=3",
        k3 > 1e-6,
        format!("max-abs diff {k3:.3e}"),
    );
    assert!(k3 > 1e-6);
    assert!(k2 > 1e-6, "K=2 readings coincide: diff {k2:e}");
}

fn epoch_mean(metrics: &[StepRecord], first: bool) -> f64 {
    let n = 25.min(metrics.len());
    let slice = if first {
        &metrics[..n]
    } else {
        &metrics[metrics.len() - n..]
    };
    slice.iter().map(|m| m.loss).sum::<f64>() / n as f64
}

#[test]
fn criterion_5_desk_training() {
    let untrained = evaluate_embeddings(&RsmModel::new(RsmConfig::desk()).unwrap(), &data().held_out).unwrap();
    println!(
        "[INFO] untrained seen-speaker accuracy {:.3} (chance {:.3}), gap {:.2e}",
        untrained.accuracy,
        1.0 / 20.0,
        untrained.gap
    );
    let t = p01();
    let steps = t.metrics.len();
    let (first, last) = (epoch_mean(&t.metrics, true), epoch_mean(&t.metrics, false));
    let seen = evaluate_embeddings(&t.checkpoint.model, &data().held_out).unwrap();
    let unseen = evaluate_embeddings(&t.checkpoint.model, &data().unseen).unwrap();
    let ratio = last / first;
    let pass = steps <= 5000
        && t.elapsed < Duration::from_secs(30 * 60)
        && ratio <= 0.5
        && seen.accuracy >= 0.9
        && unseen.gap > 0.1;
    verdict(
        "C5",
        "desk training",
        pass,
        format!(
            "{steps} steps in {:.0}s; loss {first:.3} -> {last:.3} (ratio {ratio:.3}); seen accuracy {:.3} on {} utterances; unseen gap {:.3} ({} speakers)",
            t.elapsed.as_secs_f64(),
            seen.accuracy,
            seen.num_utterances,
            unseen.gap,
            unseen.num_speakers
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_layer_std_trend() {
    let mels: Vec<MelSpectrogram> = data().held_out.iter().map(|u| u.mel.clone()).collect();
    let (a, b) = (&p01().checkpoint, &p02().checkpoint);
    let report = std_report(&[a, b], &mels, mel_fingerprint(&mels)).unwrap();
    println!("{}", report.to_table());
    let p01_std = layer_std(&a.model, &mels).unwrap();
    let pass = p01_std[3] < p01_std[0] && report.rows.len() == 2 && report.to_table().contains("| P02 |");
    verdict(
        "C6",
        "per-layer std trend",
        pass,
        format!(
            "P01 layer 1 {:.4} -> layer 4 {:.4}; P02 {:?}",
            p01_std[0], p01_std[3], report.rows[1].values
        ),
    );
    assert!(pass);
}

fn weight_similarity(ck: &Checkpoint, utts: &[LabeledMel]) -> (f64, f64) {
    let ws: Vec<_> = utts.iter().map(|u| extract_weights(&u.mel, ck).unwrap()).collect();
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
    for i in 0..utts.len() {
        for j in i + 1..utts.len() {
            let c = cosine_similarity(ws[i].flattened(), ws[j].flattened());
            if utts[i].speaker == utts[j].speaker {
                same += c;
                ns += 1;
            } else {
                diff += c;
                nd += 1;
            }
        }
    }
    (same / ns as f64, diff / nd as f64)
}

#[test]
fn criterion_7_weight_similarity_trend() {
    let mut lines = Vec::new();
    let mut pass = true;
    let extra: Vec<Trained> = [1235, 1236]
        .iter()
        .map(|&s| train_desk(ResidualMode::PerLayer, s))
        .collect();
    let models: Vec<(u64, &Checkpoint)> = std::iter::once((1234, &p01().checkpoint))
        .chain([1235u64, 1236].into_iter().zip(extra.iter().map(|t| &t.checkpoint)))
        .collect();
    for (seed, ck) in models {
        let (same, diff) = weight_similarity(ck, &data().held_out);
        pass &= same > diff;
        lines.push(format!("seed {seed}: same {same:.3} vs different {diff:.3}"));
    }
    verdict("C7", "flattened-weight similarity", pass, lines.join("; "));
    assert!(pass);
}

fn run(args: &[&str], cwd: &Path) -> std::process::Output {
    let o = Command::new(env!("CARGO_BIN_EXE_rsm"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    run(
        &[
            "gen-corpus",
            "--config",
            configs.join("corpus.json").to_str().unwrap(),
            "--out",
            "data/corpus",
        ],
        dir,
    );

    let mut cfg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(configs.join("desk_p01.json")).unwrap()).unwrap();
    cfg["train"]["max_steps"] = serde_json::json!(25);
    std::fs::write(dir.join("p01.json"), serde_json::to_vec(&cfg).unwrap()).unwrap();
    let mut hashes = Vec::new();
    for out in ["r1", "r2"] {
        run(&["train", "--config", "p01.json", "--seed", "1234", "--out", out], dir);
        hashes.push(sha256_hex(
            &std::fs::read(dir.join(out).join("checkpoint.rsmc")).unwrap(),
        ));
    }

    let wav = "data/corpus/spk000_utt000.wav";
    run(&["extract", wav, "--out", "a.melf"], dir);
    run(&["extract", wav, "--out", "b.melf"], dir);
    let melf_equal = std::fs::read(dir.join("a.melf")).unwrap() == std::fs::read(dir.join("b.melf")).unwrap();

    let pass = hashes[0] == hashes[1] && melf_equal;
    verdict(
        "C8",
        "determinism",
        pass,
        format!(
            "train hashes {} / {}; MELF byte-identical: {melf_equal}",
            &hashes[0][..16],
            &hashes[1][..16]
        ),
    );
    assert!(pass);
}
