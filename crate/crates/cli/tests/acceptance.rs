//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `cargo test --test acceptance -- <filter>` runs only criteria whose key
//! contains `<filter>`. Corpus-dependent criteria need `GUZHENG_TECH99_DIR`
//! (a corpus laid out as `metadata.csv`, `annotations/`, `audio/`); the
//! full training reproduction additionally needs `IPT_FULL_REPRO=1`.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use ipt_core::dataset::fixture::{synth_fixture, FixtureSpec};
use ipt_core::dataset::{rasterize_labels, FrameLabelMatrix, IptClass, TrackMetadata, N_CLASSES};
use ipt_core::evaluation::{frame_metrics, MlcmMatrix, NPL, NTL};
use ipt_core::features::{frame_count, write_wav, Cqt, CLIP_FRAMES, HOP, SAMPLE_RATE};
use ipt_core::model::{input_batch, self_attention, ModelConfig, MultiScaleNet, Prediction, SelfAttentionParams};
use ipt_core::nn::{Gradients, Graph, Mode, ParamId, ParamStore};
use ipt_core::pipeline::{track_examples, Track};
use ipt_core::training::{train, validate, weighted_bce, ClassWeights, TrainConfig};
use ndarray::{Array2, Array3, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_ENV: &str = "GUZHENG_TECH99_DIR";
const FULL_ENV: &str = "IPT_FULL_REPRO";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

struct Criterion {
    key: &'static str,
    title: &'static str,
    budget: Duration,
    run: fn() -> Verdict,
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn labels(values: Array2<u8>) -> FrameLabelMatrix {
    FrameLabelMatrix::from_values(values, HOP, SAMPLE_RATE).unwrap()
}

fn random_labels(r: &mut impl Rng, t: usize, density: f64) -> FrameLabelMatrix {
    labels(Array2::from_shape_fn((N_CLASSES, t), |_| u8::from(r.random_bool(density))))
}

// ---------------------------------------------------------------- metrics

fn metric_oracle() -> Verdict {
    let mut r = rng(20);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (dp, dt) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let pred = random_labels(&mut r, 50, dp);
        let truth = random_labels(&mut r, 50, dt);
        let m = frame_metrics(&pred, &truth, None).unwrap();
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for c in 0..N_CLASSES {
            for t in 0..50 {
                match (pred.values()[[c, t]], truth.values()[[c, t]]) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fn_ += 1,
                    _ => {}
                }
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        let c = m.counts.total;
        if (c.tp, c.fp, c.fn_) != (tp, fp, fn_) || m.micro.precision != p || m.micro.recall != rc || m.micro.f1 != f1 {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{}/1000 instances exact", 1000 - mismatches))
}

// -------------------------------------------------------------- attention

/// softmax(Q K^T / sqrt(d_k)) V written out index by index.
fn attention_loops(x: &Array2<f64>, p: &SelfAttentionParams) -> Array2<f64> {
    let (t, d_m, d_k) = (x.nrows(), p.d_m(), p.d_k());
    let project = |w: &Array2<f64>| {
        let mut out = Array2::zeros((t, d_k));
        for i in 0..t {
            for j in 0..d_k {
                let mut acc = 0.0;
                for m in 0..d_m {
                    acc += x[[i, m]] * w[[m, j]];
                }
                out[[i, j]] = acc;
            }
        }
        out
    };
    let (q, k, v) = (project(&p.w_q), project(&p.w_k), project(&p.w_v));
    let mut out = Array2::zeros((t, d_k));
    for i in 0..t {
        let mut scores = vec![0.0; t];
        for (j, sc) in scores.iter_mut().enumerate() {
            let mut dot = 0.0;
            for a in 0..d_k {
                dot += q[[i, a]] * k[[j, a]];
            }
            *sc = dot / (d_k as f64).sqrt();
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        for j in 0..t {
            let a = (scores[j] - max).exp() / z;
            for c in 0..d_k {
                out[[i, c]] += a * v[[j, c]];
            }
        }
    }
    out
}

fn random_attention(r: &mut ChaCha8Rng) -> (Array2<f64>, SelfAttentionParams) {
    let t = r.random_range(1..=8);
    let d_m = r.random_range(1..=8);
    let d_k = r.random_range(1..=8);
    let x = Array2::from_shape_fn((t, d_m), |_| r.random_range(-2.0..2.0));
    (x, SelfAttentionParams::random(d_m, d_k, r))
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn attention_oracle() -> Verdict {
    let mut r = rng(21);
    let worst = (0..100)
        .map(|_| {
            let (x, p) = random_attention(&mut r);
            max_abs_diff(&self_attention(x.view(), &p).unwrap(), &attention_loops(&x, &p))
        })
        .fold(0.0, f64::max);
    check(worst <= 1e-6, format!("100 instances, max |diff| {worst:.2e} (tol 1e-6)"))
}

fn attention_permutation() -> Verdict {
    let mut r = rng(22);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (x, p) = random_attention(&mut r);
        let mut perm: Vec<usize> = (0..x.nrows()).collect();
        perm.shuffle(&mut r);
        let xp = Array2::from_shape_fn(x.dim(), |(i, j)| x[[perm[i], j]]);
        let y = self_attention(x.view(), &p).unwrap();
        let yp = self_attention(xp.view(), &p).unwrap();
        let expected = Array2::from_shape_fn(y.dim(), |(i, j)| y[[perm[i], j]]);
        worst = worst.max(max_abs_diff(&yp, &expected));
    }
    check(worst <= 1e-6, format!("50 instances, max |diff| {worst:.2e} (tol 1e-6)"))
}

// --------------------------------------------------------- gradient check

fn tiny_model() -> ModelConfig {
    ModelConfig {
        channels_per_branch: vec![4, 8, 16],
        attention_dim: 16,
        ..ModelConfig::default()
    }
}

struct GradProblem {
    input: ArrayD<f64>,
    targets: Array3<f64>,
    mask: Array2<bool>,
    weights: Vec<f64>,
}

/// Batch of two so per-item normalization statistics are non-degenerate;
/// one padded frame exercises the mask.
fn grad_problem(t: usize, seed: u64) -> GradProblem {
    let mut r = rng(seed);
    let b = 2;
    let mut mask = Array2::from_elem((b, t), true);
    mask[[0, t - 1]] = false;
    GradProblem {
        input: ArrayD::from_shape_fn(IxDyn(&[b, 1, 88, t]), |_| r.random_range(0.0..1.0)),
        targets: Array3::from_shape_fn((b, N_CLASSES, t), |_| f64::from(r.random_bool(0.3))),
        mask,
        weights: (0..N_CLASSES).map(|c| 1.0 + c as f64 * 0.5).collect(),
    }
}

/// Loss at `params`, reusing `base` for every node before `upto`.
fn grad_loss(net: &MultiScaleNet, base: &Graph, upto: usize, params: &ParamStore, p: &GradProblem) -> f64 {
    let mut g = Graph::resume(base, params, upto);
    let x = g.input(p.input.clone());
    let z = net.forward(&mut g, x).unwrap();
    let l = g.weighted_bce_with_logits(z, &p.targets, p.mask.view(), &p.weights).unwrap();
    g.value(l)[[]]
}

const FD_STEP: f64 = 1e-5;
const GRAD_TOLERANCE: f64 = 1e-4;
// Clear of every rectifier input and pooling tie by this much, so a step of
// FD_STEP cannot flip a branch.
const KINK_MARGIN: f64 = 3e-4;

fn sweep(
    net: &MultiScaleNet,
    base: &Graph,
    p: &GradProblem,
    grads: &Gradients,
    coords: &[(ParamId, usize)],
) -> (f64, String) {
    let mut scratch = net.params().clone();
    let mut worst = (0.0f64, String::new());
    for &(id, i) in coords {
        let upto = base.first_use(id).expect("parameter unused by the forward pass");
        let orig = scratch.get(id).as_slice().unwrap()[i];
        scratch.get_mut(id).as_slice_mut().unwrap()[i] = orig + FD_STEP;
        let up = grad_loss(net, base, upto, &scratch, p);
        scratch.get_mut(id).as_slice_mut().unwrap()[i] = orig - FD_STEP;
        let down = grad_loss(net, base, upto, &scratch, p);
        scratch.get_mut(id).as_slice_mut().unwrap()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g.as_slice().unwrap()[i]);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > worst.0 {
            worst = (rel, format!("{}[{i}]", net.params().name(id)));
        }
    }
    worst
}

fn gradient_check() -> Verdict {
    // Central differences straddling a rectifier or pooling tie are
    // meaningless, so take the first seed whose point is clear of both.
    let Some((seed, net, p)) = (0..200u64).find_map(|seed| {
        let net = MultiScaleNet::new(tiny_model(), seed).unwrap();
        let p = grad_problem(16, 1000 + seed);
        let mut g = Graph::new(net.params(), Mode::Train);
        let x = g.input(p.input.clone());
        net.forward(&mut g, x).unwrap();
        (g.kink_margin() >= KINK_MARGIN).then_some((seed, net, p))
    }) else {
        return Verdict::Fail("no kink-free evaluation point in 200 seeds".into());
    };
    let mut g = Graph::new(net.params(), Mode::Train);
    let x = g.input(p.input.clone());
    let z = net.forward(&mut g, x).unwrap();
    let l = g.weighted_bce_with_logits(z, &p.targets, p.mask.view(), &p.weights).unwrap();
    let grads = g.backward(l).unwrap();

    let coords: Vec<(ParamId, usize)> = net
        .params()
        .trainable_ids()
        .flat_map(|id| (0..net.params().get(id).len()).map(move |i| (id, i)))
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = coords.len().div_ceil(threads);
    let worst = std::thread::scope(|s| {
        let handles: Vec<_> = coords.chunks(chunk).map(|c| s.spawn(|| sweep(&net, &g, &p, &grads, c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .fold((0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a })
    });
    check(
        worst.0 < GRAD_TOLERANCE,
        format!(
            "seed {seed}, {} parameters, T=16, max rel err {:.2e} at {} (tol 1e-4)",
            coords.len(),
            worst.0,
            worst.1
        ),
    )
}

// ------------------------------------------------------------ shape suite

fn fixture_track(spec: &FixtureSpec, seed: u64) -> Track {
    let f = synth_fixture(spec, seed).unwrap();
    let meta = TrackMetadata {
        audio_id: format!("fixture{seed}"),
        audio_name: String::new(),
        mode: String::new(),
        time_signature: String::new(),
        performer: "synthetic".into(),
        genre: String::new(),
        audio_length: spec.duration,
    };
    Track::new(meta, f.notes, f.samples).unwrap()
}

fn shape_suite() -> Verdict {
    let net = MultiScaleNet::new(ModelConfig::default(), 0).unwrap();
    let mut r = rng(23);
    for t in [32, 100, 259, 300] {
        let spec = Array2::from_shape_fn((88, t), |_| r.random_range(0.0f32..1.0));
        let out = net.predict_batch(input_batch(&[spec.view()]).unwrap()).unwrap();
        if out[0].likelihoods.dim() != (N_CLASSES, t) {
            return Verdict::Fail(format!("T={t} gave {:?}", out[0].likelihoods.dim()));
        }
    }
    let cqt = Cqt::standard();
    let min = cqt.params().max_window() as f64 / SAMPLE_RATE as f64;
    for i in 0..20 {
        let duration = r.random_range(min..8.0);
        let spec = ipt_core::dataset::fixture::random_fixture_spec(duration, 0.2, &mut r);
        let track = fixture_track(&spec, i);
        let n = track.samples.len();
        let cols = cqt.compute(&track.samples).unwrap().n_frames();
        let raster = rasterize_labels(&track.notes, frame_count(n), HOP, SAMPLE_RATE).unwrap().labels;
        // Independent count: one frame centred on every hop that starts inside the signal.
        let expected = (0..).take_while(|k| k * HOP <= n).count();
        if cols != raster.n_frames() || cols != expected {
            return Verdict::Fail(format!("{duration:.3} s: CQT {cols}, labels {}, expected {expected}", raster.n_frames()));
        }
        for ex in track_examples(&track, cqt, None).unwrap() {
            if ex.features.ncols() != ex.n_frames() || ex.n_frames() != CLIP_FRAMES {
                return Verdict::Fail(format!("clip at {} s misaligned", ex.start_offset));
            }
        }
    }
    Verdict::Pass("(7,T) for T in {32,100,259,300}; 20 durations aligned".into())
}

// ---------------------------------------------------------- overfit sanity

/// One 3 s clip with every class present.
const OVERFIT_CLIP: &str = r#"
duration = 3.0

[[events]]
class = "vibrato"
onset = 0.05
duration = 0.6
freq = 440.0

[[events]]
class = "plucks"
onset = 0.2
duration = 0.4
freq = 220.0

[[events]]
class = "upward_portamento"
onset = 0.75
duration = 0.45
freq = 330.0
end_freq = 440.0

[[events]]
class = "downward_portamento"
onset = 1.3
duration = 0.45
freq = 523.25
end_freq = 392.0

[[events]]
class = "point_note"
onset = 1.85
duration = 0.4
freq = 293.66

[[events]]
class = "glissando"
onset = 2.3
duration = 0.3
freq = 261.63

[[events]]
class = "tremolo"
onset = 2.65
duration = 0.3
freq = 349.23
"#;

fn overfit() -> Verdict {
    let track = fixture_track(&FixtureSpec::from_toml(OVERFIT_CLIP).unwrap(), 1);
    let ex = track_examples(&track, Cqt::standard(), None).unwrap();
    assert_eq!(ex.len(), 1);
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        ..TrainConfig::default()
    };
    let net = MultiScaleNet::new(ModelConfig::default(), 0).unwrap();
    let out = match train(net, &ex, &ex, &cfg, None) {
        Ok(o) => o,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let f1 = validate(&out.last, &ex, 1).unwrap().micro.f1;
    check(f1 >= 0.99, format!("{} steps, training F1 {f1:.4} (need >= 0.99)", out.steps))
}

// ---------------------------------------------------------- CLI helpers

fn ipt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn failure(out: &Output) -> Option<String> {
    (!out.status.success()).then(|| String::from_utf8_lossy(&out.stderr).trim().to_string())
}

fn read_report(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// ---------------------------------------------------- fixture end-to-end

fn fixture_end_to_end() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let run = dir.path().join("run");
    if let Some(e) = failure(&ipt(&["synth", "--out", s(&corpus), "--tracks", "20", "--duration", "180", "--seed", "7"])) {
        return Verdict::Fail(e);
    }
    let config = dir.path().join("run.toml");
    let text = format!(
        "seed = 7\n\n[paths]\ncorpus = {:?}\ncache = {:?}\nout = {:?}\n\n[split]\ntrain = 14\nvalid = 3\ntest = 3\n\n[train]\nepochs = 10\n",
        s(&corpus),
        s(&dir.path().join("cache")),
        s(&run)
    );
    std::fs::write(&config, text).unwrap();
    if let Some(e) = failure(&ipt(&["train", "--config", s(&config)])) {
        return Verdict::Fail(e);
    }
    if let Some(e) = failure(&ipt(&["eval", "--config", s(&config), "--split", "test"])) {
        return Verdict::Fail(e);
    }
    let f1 = read_report(&run.join("eval-test").join("report.json"))["overall"]["f1"].as_f64().unwrap();

    // A trained fixture model should stay silent on silence.
    let silence = dir.path().join("silence.wav");
    write_wav(&silence, &vec![0.0; 3 * SAMPLE_RATE as usize]).unwrap();
    let tsv = dir.path().join("silence.tsv");
    let ckpt = run.join("checkpoints").join("best.json");
    if let Some(e) = failure(&ipt(&["predict", "--checkpoint", s(&ckpt), s(&silence), "--out", s(&tsv)])) {
        return Verdict::Fail(e);
    }
    let active: usize = std::fs::read_to_string(&tsv)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').skip(1 + N_CLASSES).filter(|v| *v == "1").count())
        .sum();
    check(
        f1 >= 0.80,
        format!("20 tracks x 180 s, 10 epochs, test micro F1 {f1:.4} (need >= 0.80); {active} active cells on silence"),
    )
}

// ------------------------------------------------------------ loss oracle

fn loss_oracle() -> Verdict {
    let mut r = rng(24);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let t = r.random_range(1..40);
        let probs = Array2::from_shape_fn((N_CLASSES, t), |_| r.random_range(0.0..1.0));
        let target = random_labels(&mut r, t, 0.3);
        let weights = ClassWeights {
            w: std::array::from_fn(|_| r.random_range(1.0..20.0)),
        };
        let mut valid: Vec<bool> = (0..t).map(|_| r.random_bool(0.8)).collect();
        valid[0] = true;
        let got = weighted_bce(&Prediction::new(probs.clone()).unwrap(), &target, &weights, &valid).unwrap();
        let (mut sum, mut n) = (0.0, 0usize);
        for c in 0..N_CLASSES {
            for f in 0..t {
                if !valid[f] {
                    continue;
                }
                let p = probs[[c, f]].clamp(1e-7, 1.0 - 1e-7);
                let y = f64::from(target.values()[[c, f]]);
                sum += -(weights.w[c] * y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                n += 1;
            }
        }
        worst = worst.max((got - sum / n as f64).abs());
    }
    let mut one = FrameLabelMatrix::zeros(1, HOP, SAMPLE_RATE);
    one.set(IptClass::Vibrato, 0, true);
    let cell = Prediction::new(Array2::from_elem((N_CLASSES, 1), 0.5)).unwrap();
    // Only the vibrato cell is positive; every other cell contributes -ln(0.5) too.
    let ln2 = weighted_bce(&cell, &one, &ClassWeights::uniform(), &[true]).unwrap();
    let ln2_err = (ln2 - std::f64::consts::LN_2).abs();
    check(
        worst <= 1e-9 && ln2_err <= 1e-12,
        format!("200 instances, max |diff| {worst:.2e} (tol 1e-9); p=0.5 cell gives {ln2:.12}"),
    )
}

// ------------------------------------------------------------------ MLCM

/// Per-cell allocation for one frame, decided cell by cell.
fn mlcm_cells(truth: &[bool; N_CLASSES], pred: &[bool; N_CLASSES]) -> Array2<u64> {
    let any_t = truth.iter().any(|&v| v);
    let any_p = pred.iter().any(|&v| v);
    let any_missed = (0..N_CLASSES).any(|c| truth[c] && !pred[c]);
    let any_spurious = (0..N_CLASSES).any(|c| pred[c] && !truth[c]);
    Array2::from_shape_fn((N_CLASSES + 1, N_CLASSES + 1), |(r, c)| {
        let hit = |k: usize| k < N_CLASSES && truth[k] && pred[k];
        let missed = |k: usize| k < N_CLASSES && truth[k] && !pred[k];
        let spurious = |k: usize| k < N_CLASSES && pred[k] && !truth[k];
        let v = if r == NTL && c == NPL {
            !any_t && !any_p
        } else if r == NTL {
            !any_t && pred[c]
        } else if c == NPL {
            missed(r) && !any_spurious
        } else if r == c {
            hit(r)
        } else {
            (missed(r) && spurious(c)) || (!any_missed && hit(r) && spurious(c))
        };
        u64::from(v)
    })
}

fn mlcm_properties() -> Verdict {
    let mut r = rng(25);
    let truth = random_labels(&mut r, 200, 0.3);
    let mut m = MlcmMatrix::default();
    m.accumulate(&truth, &truth, None).unwrap();
    let off_diagonal: u64 = m.counts.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, v)| v).sum();
    let mut mismatches = 0;
    for _ in 0..500 {
        let (dt, dp) = (r.random_range(0.0..0.6), r.random_range(0.0..0.6));
        let t: [bool; N_CLASSES] = std::array::from_fn(|_| r.random_bool(dt));
        let p: [bool; N_CLASSES] = std::array::from_fn(|_| r.random_bool(dp));
        let mut m = MlcmMatrix::default();
        m.add_frame(&t, &p);
        mismatches += usize::from(m.counts != mlcm_cells(&t, &p));
    }
    check(
        off_diagonal == 0 && mismatches == 0,
        format!("perfect prediction off-diagonal mass {off_diagonal}; {}/500 frames match", 500 - mismatches),
    )
}

// ------------------------------------------------------ corpus criteria

fn corpus_dir() -> Option<PathBuf> {
    std::env::var_os(CORPUS_ENV).map(PathBuf::from)
}

/// (class, num, sum, mean, max, min)
const TABLE_ONE: [(&str, &str, &str, &str, &str, &str); 7] = [
    ("vibrato", "1994", "1650.31", "0.83", "4.37", "0.21"),
    ("UP", "756", "544.12", "0.72", "3.84", "0.10"),
    ("DP", "208", "126.56", "0.61", "3.44", "0.19"),
    ("PN", "209", "153.12", "0.73", "3.24", "0.23"),
    ("glissando", "734", "67.54", "0.09", "0.39", "0.03"),
    ("tremolo", "77", "152.75", "1.98", "4.67", "0.21"),
    ("plucks", "11860", "7066.19", "0.60", "6.82", "0.07"),
];

fn stats_reproduction() -> Verdict {
    let Some(root) = corpus_dir() else {
        return Verdict::Skip(format!("set {CORPUS_ENV} to the public corpus"));
    };
    let out = ipt(&["stats", "--corpus", s(&root)]);
    if let Some(e) = failure(&out) {
        return Verdict::Fail(e);
    }
    let table = String::from_utf8_lossy(&out.stdout);
    let mut wrong = Vec::new();
    for (name, num, sum, mean, max, min) in TABLE_ONE {
        let row: Vec<&str> = table
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .map(|l| l.split_whitespace().collect())
            .unwrap_or_default();
        if row.get(1..6) != Some(&[num, sum, mean, max, min][..]) {
            wrong.push(format!("{name}: {row:?}"));
        }
    }
    check(wrong.is_empty(), if wrong.is_empty() { "all 7 rows match".into() } else { wrong.join("; ") })
}

fn full_reproduction() -> Verdict {
    let Some(root) = corpus_dir().filter(|_| std::env::var_os(FULL_ENV).is_some()) else {
        return Verdict::Skip(format!("long-running; set {CORPUS_ENV} and {FULL_ENV}=1"));
    };
    let dir = tempfile::tempdir().unwrap();
    let mut f1 = Vec::new();
    for preset in ["default", "single_scale"] {
        let run = dir.path().join(preset);
        let config = dir.path().join(format!("{preset}.toml"));
        let text = format!(
            "seed = 0\nmodel_preset = {preset:?}\n\n[paths]\ncorpus = {:?}\ncache = {:?}\nout = {:?}\n",
            s(&root),
            s(&dir.path().join("cache")),
            s(&run)
        );
        std::fs::write(&config, text).unwrap();
        for args in [vec!["train", "--config", s(&config)], vec!["eval", "--config", s(&config)]] {
            if let Some(e) = failure(&ipt(&args)) {
                return Verdict::Fail(format!("{preset}: {e}"));
            }
        }
        f1.push(100.0 * read_report(&run.join("eval-test").join("report.json"))["overall"]["f1"].as_f64().unwrap());
    }
    check(
        (f1[0] - 86.54).abs() <= 2.0 && f1[0] - f1[1] >= 5.0,
        format!("full F1 {:.2} (86.54 +/- 2.0), single-scale {:.2} (need >= 5 lower)", f1[0], f1[1]),
    )
}

const CRITERIA: [Criterion; 11] = [
    Criterion { key: "metric_oracle", title: "Metric oracle equivalence", budget: Duration::from_secs(10), run: metric_oracle },
    Criterion { key: "attention_oracle", title: "Attention oracle", budget: Duration::from_secs(5), run: attention_oracle },
    Criterion {
        key: "attention_permutation",
        title: "Attention permutation equivariance",
        budget: Duration::from_secs(5),
        run: attention_permutation,
    },
    Criterion { key: "gradient_check", title: "Gradient check", budget: Duration::from_secs(120), run: gradient_check },
    Criterion { key: "shape_suite", title: "Shape suite", budget: Duration::from_secs(60), run: shape_suite },
    Criterion { key: "overfit", title: "Overfit sanity", budget: Duration::from_secs(300), run: overfit },
    Criterion {
        key: "fixture_end_to_end",
        title: "Fixture end-to-end",
        budget: Duration::from_secs(1800),
        run: fixture_end_to_end,
    },
    Criterion { key: "loss_oracle", title: "Loss oracle", budget: Duration::from_secs(5), run: loss_oracle },
    Criterion { key: "mlcm", title: "MLCM properties", budget: Duration::from_secs(10), run: mlcm_properties },
    Criterion { key: "stats", title: "Stats reproduction", budget: Duration::from_secs(120), run: stats_reproduction },
    Criterion {
        key: "full_reproduction",
        title: "Full reproduction (optional)",
        budget: Duration::from_secs(u64::MAX),
        run: full_reproduction,
    },
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.key.contains(f.as_str()))) {
        let start = Instant::now();
        let verdict = (c.run)();
        let took = start.elapsed();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) if took > c.budget => ("FAIL", format!("{d}; over the {} s budget", c.budget.as_secs())),
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => ("FAIL", d),
            Verdict::Skip(d) => ("SKIP", d),
        };
        failed += usize::from(tag == "FAIL");
        println!("{tag} {:<36} {:>8.2} s  {detail}", c.title, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
