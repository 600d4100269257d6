//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line reaches the output of
//! `cargo test`. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 4 5`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use pixdial::bpe::{tokens_per_word, train_bpe};
use pixdial::checkpoint::Checkpoint;
use pixdial::config::RunConfig;
use pixdial::corpus::{
    make_dialect_eval, parse_conllu, read_conllu, read_lines, serialize_conllu, Sentence, Token,
    Upos,
};
use pixdial::corpus::synthetic::generate_treebank;
use pixdial::encoder::EncoderConfig;
use pixdial::finetune::{finetune, FinetuneConfig, Task, TaskData, TaskModel};
use pixdial::heads::decode::{decode_tree, is_single_root_tree, ScoreMatrix};
use pixdial::mae::{sample_span_mask, SpanMaskPolicy};
use pixdial::metrics::{attachment_counts, las_by_distance, per_tag_counts, tagging_counts, DistanceBuckets};
use pixdial::model::{Backbone, FrontEndKind};
use pixdial::pipeline::{cmd_evaluate, cmd_finetune, drops_by_front_end};
use pixdial::pretrain::{frozen_batch_loss, prepare_corpus, pretrain, Objective, PretrainConfig};
use pixdial::render::{png_bytes, render_text, render_words, word_patch_count};
use pixdial_tensor::gradcheck::{max_relative_error, GradCheckOptions};
use pixdial_tensor::rng::{stream_rng, SeededRng, Stream};
use pixdial_tensor::{linear, Tensor, VarStore, IGNORE_INDEX};
use rand::Rng;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/v1").join(name)
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

const GRAD_CASES: u64 = 20;
const GRAD_TOLERANCE: f32 = 1e-2;
const GRAD_STEP: f32 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);

type Built = (Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> pixdial_tensor::Result<Tensor>>);

fn random(rng: &mut SeededRng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.gen_range(-scale..scale)).collect(), shape).unwrap()
}

/// Scalarizes an output with fixed random weights.
fn weighted(out: &Tensor, seed: u64) -> pixdial_tensor::Result<Tensor> {
    let mut rng = stream_rng(seed ^ 0x5EED, Stream::Synthetic);
    let w = random(&mut rng, out.shape(), 1.0);
    out.mul(&w)?.sum()
}

fn dims(rng: &mut SeededRng) -> (usize, usize) {
    (rng.gen_range(1..6), rng.gen_range(1..6))
}

fn op_cases() -> Vec<(&'static str, fn(&mut SeededRng, u64) -> Built)> {
    vec![
        ("add", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].add(&x[1])?, s)))
        }),
        ("sub", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].sub(&x[1])?, s)))
        }),
        ("mul", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].mul(&x[1])?, s)))
        }),
        ("scale", |rng, s| {
            let (r, c) = dims(rng);
            let k = rng.gen_range(-3.0..3.0);
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].scale(k)?, s)))
        }),
        ("add_row", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[c], 1.0)], Box::new(move |x| weighted(&x[0].add_row(&x[1])?, s)))
        }),
        ("matmul", |rng, s| {
            let (m, k) = dims(rng);
            let n = rng.gen_range(1..6);
            (vec![random(rng, &[m, k], 1.0), random(rng, &[k, n], 1.0)], Box::new(move |x| weighted(&x[0].matmul(&x[1])?, s)))
        }),
        ("linear", |rng, s| {
            let (m, k) = dims(rng);
            let n = rng.gen_range(1..6);
            let xs = vec![random(rng, &[m, k], 1.0), random(rng, &[k, n], 1.0), random(rng, &[n], 1.0)];
            (xs, Box::new(move |x| weighted(&linear(&x[0], &x[1], &x[2])?, s)))
        }),
        ("transpose", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].transpose()?, s)))
        }),
        ("reshape", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].reshape(&[c, r])?, s)))
        }),
        ("sum", |rng, _| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0)], Box::new(|x| x[0].mul(&x[0])?.sum()))
        }),
        ("mean", |rng, _| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0)], Box::new(|x| x[0].mul(&x[0])?.mean()))
        }),
        ("mean_rows", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].mean_rows()?, s)))
        }),
        ("gather_rows", |rng, s| {
            let (r, c) = dims(rng);
            let idx: Vec<usize> = (0..rng.gen_range(1..7)).map(|_| rng.gen_range(0..r)).collect();
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].gather_rows(&idx)?, s)))
        }),
        ("replace_rows", |rng, s| {
            let (r, c) = dims(rng);
            let rows: Vec<usize> = (0..r).filter(|_| rng.gen_bool(0.5)).collect();
            let xs = vec![random(rng, &[r, c], 1.0), random(rng, &[c], 1.0)];
            (xs, Box::new(move |x| weighted(&x[0].replace_rows(&rows, &x[1])?, s)))
        }),
        ("concat_rows", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[c], 1.0)], Box::new(move |x| weighted(&Tensor::concat_rows(x)?, s)))
        }),
        ("concat_cols", |rng, s| {
            let (r, c) = dims(rng);
            let c2 = rng.gen_range(1..4);
            let xs = vec![random(rng, &[r, c], 1.0), random(rng, &[r, c2], 1.0)];
            (xs, Box::new(move |x| weighted(&Tensor::concat_cols(x)?, s)))
        }),
        ("slice_cols", |rng, s| {
            let (r, c) = dims(rng);
            let start = rng.gen_range(0..c);
            let len = rng.gen_range(1..=c - start);
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].slice_cols(start, len)?, s)))
        }),
        ("masked_fill", |rng, s| {
            let (r, c) = dims(rng);
            let mask: Vec<bool> = (0..r * c).map(|_| rng.gen_bool(0.3)).collect();
            (vec![random(rng, &[r, c], 1.0)], Box::new(move |x| weighted(&x[0].masked_fill(&mask, -5.0)?, s)))
        }),
        ("gelu", |rng, s| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 3.0)], Box::new(move |x| weighted(&x[0].gelu()?, s)))
        }),
        ("softmax", |rng, s| {
            let (r, c) = dims(rng);
            let axis = rng.gen_range(0..2);
            (vec![random(rng, &[r, c], 2.0)], Box::new(move |x| weighted(&x[0].softmax(axis)?, s)))
        }),
        ("masked_softmax", |rng, s| {
            let (r, c) = dims(rng);
            let mut keep: Vec<bool> = (0..c).map(|_| rng.gen_bool(0.6)).collect();
            keep[rng.gen_range(0..c)] = true;
            (vec![random(rng, &[r, c], 2.0)], Box::new(move |x| weighted(&x[0].masked_softmax(&keep)?, s)))
        }),
        ("layer_norm", |rng, s| {
            let r = rng.gen_range(1..5);
            let c = rng.gen_range(3..7);
            let xs = vec![random(rng, &[r, c], 2.0), random(rng, &[c], 1.0), random(rng, &[c], 1.0)];
            (xs, Box::new(move |x| weighted(&x[0].layer_norm(&x[1], &x[2], 1e-5)?, s)))
        }),
        ("dropout", |rng, s| {
            let (r, c) = dims(rng);
            let rate = rng.gen_range(0.1..0.6);
            // Same seed on every evaluation, so the mask is fixed.
            let f = move |x: &[Tensor]| {
                let mut mask_rng = stream_rng(s, Stream::Dropout);
                weighted(&x[0].dropout(rate, &mut mask_rng)?, s)
            };
            (vec![random(rng, &[r, c], 1.0)], Box::new(f))
        }),
        ("cross_entropy", |rng, _| {
            let (n, c) = dims(rng);
            let mut labels: Vec<usize> =
                (0..n).map(|_| if rng.gen_bool(0.2) { IGNORE_INDEX } else { rng.gen_range(0..c) }).collect();
            labels[0] = rng.gen_range(0..c);
            (vec![random(rng, &[n, c], 2.0)], Box::new(move |x| x[0].cross_entropy(&labels)))
        }),
        ("mse_loss", |rng, _| {
            let (r, c) = dims(rng);
            (vec![random(rng, &[r, c], 1.0), random(rng, &[r, c], 1.0)], Box::new(|x| x[0].mse_loss(&x[1])))
        }),
    ]
}

fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        hidden_dim: 16,
        num_layers: 2,
        num_heads: 2,
        mlp_ratio: 2,
        max_positions: 32,
        ..EncoderConfig::default()
    }
}

/// Relative error of the full parameter gradient of a backbone+head loss,
/// evaluated at a random point so no gradient vanishes by initialization.
fn composition_error(kind: FrontEndKind, task: Task, case: u64) -> std::result::Result<f32, String> {
    let sentences = generate_treebank(12, 100 + case, "g");
    let enc = tiny_encoder();
    let mut vs = VarStore::new();
    let mut rng = stream_rng(case, Stream::Init);
    let backbone = match kind {
        FrontEndKind::Pixel => ok(Backbone::pixel(&mut vs, &enc, 32, &mut rng))?,
        FrontEndKind::Subword => {
            let texts: Vec<String> = sentences.iter().map(Sentence::text).collect();
            let vocab = ok(train_bpe(&texts, 160))?;
            ok(Backbone::subword(&mut vs, &enc, vocab, 32, &mut rng))?
        }
    };
    let cfg = FinetuneConfig { task, ..FinetuneConfig::default() };
    let model = ok(TaskModel::new(&mut vs, backbone, &cfg, TaskData::Treebank(&sentences), &mut rng))?;
    let examples = ok(model.prepare(TaskData::Treebank(&sentences)))?;
    let example = examples
        .into_iter()
        .find(|e| e.fitted_words() >= 2)
        .ok_or("no example with two fitted words")?;

    let mut noise = stream_rng(case, Stream::Perturb);
    let ids: Vec<_> = vs.ids().collect();
    for &id in &ids {
        let t = vs.get(id);
        let moved: Vec<f32> = t.data().iter().map(|v| v + noise.gen_range(-0.3f32..0.3)).collect();
        ok(vs.set(id, ok(Tensor::new(moved, t.shape()))?))?;
    }
    let loss = |store: &VarStore| -> std::result::Result<Tensor, String> {
        ok(model.loss(store, &example, None))?.ok_or_else(|| "example produced no loss".to_string())
    };
    loss(&vs)?.backward().map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f32>> = ids.iter().map(|&id| vs.get(id).grad().unwrap_or_default()).collect();

    // The whole gradient is one vector: probe a few coordinates of every
    // parameter and compare the stacked probes by norm.
    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    let mut pick = stream_rng(case, Stream::Split);
    for (k, &id) in ids.iter().enumerate() {
        let base = vs.get(id).detach();
        for _ in 0..4 {
            let j = pick.gen_range(0..base.numel());
            let eval = |delta: f32| -> std::result::Result<f64, String> {
                let mut d = base.to_vec();
                d[j] += delta;
                let mut probe = vs.detached();
                ok(probe.set(id, ok(Tensor::new(d, base.shape()))?))?;
                Ok(f64::from(loss(&probe)?.item()))
            };
            let numeric = (eval(GRAD_STEP)? - eval(-GRAD_STEP)?) / (2.0 * f64::from(GRAD_STEP));
            let a = f64::from(analytic[k].get(j).copied().unwrap_or(0.0));
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
        }
    }
    let denom = a2.sqrt().max(n2.sqrt());
    Ok(if denom < 1e-12 { 0.0 } else { (diff2.sqrt() / denom) as f32 })
}

fn criterion_gradients() -> Check {
    let start = Instant::now();
    let mut worst = (0.0f32, "");
    let mut instances = 0;
    let ops = op_cases();
    for (name, make) in &ops {
        for case in 0..GRAD_CASES {
            let mut rng = stream_rng(case, Stream::Synthetic);
            let (inputs, f) = make(&mut rng, case);
            let opts = GradCheckOptions { step: GRAD_STEP, max_coords: None, seed: case };
            let err = ok(max_relative_error(&inputs, |x| f(x), opts))?;
            ensure!(err < GRAD_TOLERANCE, "{name} case {case}: relative error {err:.3e}");
            if err > worst.0 {
                worst = (err, name);
            }
            instances += 1;
        }
    }
    let compositions = [
        ("pixel+pos", FrontEndKind::Pixel, Task::Pos),
        ("pixel+parse", FrontEndKind::Pixel, Task::Parse),
        ("subword+parse", FrontEndKind::Subword, Task::Parse),
    ];
    for (name, kind, task) in compositions {
        for case in 0..GRAD_CASES {
            let err = composition_error(kind, task, case)?;
            ensure!(err < GRAD_TOLERANCE, "{name} case {case}: relative error {err:.3e}");
            if err > worst.0 {
                worst = (err, name);
            }
            instances += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < GRAD_BUDGET, "took {elapsed:.1?}, budget {GRAD_BUDGET:?}");
    Ok(format!(
        "{} ops + {} encoder/head compositions, {instances} instances; worst relative error {:.2e} ({}) < {GRAD_TOLERANCE:e}",
        ops.len(),
        compositions.len(),
        worst.0,
        worst.1
    ))
}

// ---------------------------------------------------------------------------
// 2. Renderer determinism

/// Pinned FNV-1a digest of every patch tensor of the rendered fixture corpus.
const CORPUS_PIXEL_DIGEST: u64 = 0x92bb_07d2_f38d_f025;

fn fnv1a(state: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *state ^= u64::from(b);
        *state = state.wrapping_mul(0x0100_0000_01b3);
    }
}

fn render_corpus(lines: &[String]) -> std::result::Result<(Vec<Vec<u32>>, Vec<Vec<u8>>), String> {
    let mut tensors = Vec::with_capacity(lines.len());
    let mut pngs = Vec::with_capacity(lines.len());
    for line in lines {
        let r = ok(render_text(line, 96))?;
        tensors.push(r.pixels().iter().map(|v| v.to_bits()).collect());
        pngs.push(ok(png_bytes(&r))?);
    }
    Ok((tensors, pngs))
}

fn criterion_render() -> Check {
    let lines = ok(read_lines(data("corpus.txt")))?;
    let (t1, p1) = render_corpus(&lines)?;
    // Second pass on another thread, with a different atlas lookup history.
    let (t2, p2) = std::thread::scope(|s| s.spawn(|| render_corpus(&lines)).join().expect("render thread"))?;
    ensure!(t1 == t2, "patch tensors differ between passes");
    ensure!(p1 == p2, "PNG bytes differ between passes");
    let mut digest = 0xcbf2_9ce4_8422_2325u64;
    for t in &t1 {
        for v in t {
            fnv1a(&mut digest, &v.to_le_bytes());
        }
    }
    ensure!(
        digest == CORPUS_PIXEL_DIGEST,
        "pixel digest {digest:#018x} differs from the pinned {CORPUS_PIXEL_DIGEST:#018x}"
    );
    let herzlich = ok(render_text("Herzlich", 96))?.num_text_patches();
    ensure!(herzlich == 4, "\"Herzlich\" rendered to {herzlich} text patches, expected 4");
    ensure!(word_patch_count("Herzlich") == 4, "word_patch_count(\"Herzlich\") != 4");
    let words = ok(render_words(&["Herzlich", "willkommen!"], 96))?;
    ensure!(
        words.word_spans() == Some(&[(0, 3), (4, 9)][..]),
        "word spans {:?}",
        words.word_spans()
    );
    Ok(format!(
        "{} lines rendered twice, tensors and {} PNGs bit-identical, digest {digest:#018x}; \"Herzlich\" -> 4 patches",
        lines.len(),
        p1.len()
    ))
}

// ---------------------------------------------------------------------------
// 3. Span-mask statistics

fn criterion_span_mask() -> Check {
    const MASKS: usize = 10_000;
    const LENGTH: usize = 512;
    let start = Instant::now();
    let policy = SpanMaskPolicy { mask_ratio: 0.25, max_span_length: 6 };
    let mut rng = stream_rng(7, Stream::Masking);
    let mut len_rng = stream_rng(7, Stream::Synthetic);
    let mut fraction_sum = 0.0f64;
    let mut full_length = 0.0f64;
    for i in 0..MASKS {
        // Half the masks fill the sequence up to the separator; the rest
        // leave padding behind it.
        let n = if i % 2 == 0 { LENGTH - 1 } else { len_rng.gen_range(LENGTH / 2..LENGTH - 1) };
        let text_mask = ok(sample_span_mask(n, &policy, &mut rng))?;
        ensure!(text_mask.len() == n, "mask covers {} positions for {n} text patches", text_mask.len());
        let mut slots = vec![false; LENGTH];
        slots[..n].copy_from_slice(&text_mask);
        ensure!(!slots[n], "mask {i} touches the separator at {n}");
        ensure!(slots[n + 1..].iter().all(|m| !m), "mask {i} touches padding");
        let masked = text_mask.iter().filter(|&&m| m).count();
        fraction_sum += masked as f64 / n as f64;
        if i % 2 == 0 {
            full_length += masked as f64 / LENGTH as f64;
        }
    }
    let mean = fraction_sum / MASKS as f64;
    ensure!((mean - 0.25).abs() <= 0.0075, "mean masked fraction {mean:.5}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:.1?}");
    Ok(format!(
        "{MASKS} masks over {LENGTH} slots: mean masked fraction {mean:.5} (full-length masks {:.5} of all slots); separator and padding never masked; {elapsed:.1?}",
        full_length / (MASKS / 2) as f64
    ))
}

// ---------------------------------------------------------------------------
// 4. Tree decoder against exhaustive enumeration

/// Independent tree check: exactly one root child and every word reaches
/// the root without revisiting a node.
fn oracle_is_tree(heads: &[usize]) -> bool {
    let n = heads.len();
    if heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    (1..=n).all(|start| {
        let mut node = start;
        for _ in 0..=n {
            if node == 0 {
                return true;
            }
            node = heads[node - 1];
        }
        false
    })
}

fn brute_force_best(scores: &ScoreMatrix) -> f64 {
    let n = scores.words();
    let mut heads = vec![0usize; n];
    let mut best = f64::NEG_INFINITY;
    loop {
        if heads.iter().enumerate().all(|(i, &h)| h != i + 1) && oracle_is_tree(&heads) {
            let s: f64 = heads.iter().enumerate().map(|(i, &h)| f64::from(scores.get(h, i + 1))).sum();
            best = best.max(s);
        }
        let mut k = 0;
        while k < n {
            heads[k] += 1;
            if heads[k] <= n {
                break;
            }
            heads[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
    }
}

fn criterion_decoder() -> Check {
    let start = Instant::now();
    let mut rng = stream_rng(11, Stream::Synthetic);
    let mut worst_gap = 0.0f64;
    for case in 0..1000 {
        let n = rng.gen_range(4..=6);
        // Every fourth matrix uses small integers so ties are common.
        let integer = case % 4 == 0;
        let mut scores = ScoreMatrix::from_fn(n + 1, |_, _| 0.0);
        for h in 0..=n {
            for d in 0..=n {
                let v = if integer { rng.gen_range(-3i32..=3) as f32 } else { rng.gen_range(-5.0f32..5.0) };
                scores.set(h, d, v);
            }
        }
        let heads = ok(decode_tree(&scores))?;
        ensure!(heads.len() == n, "case {case}: {} heads for {n} words", heads.len());
        ensure!(oracle_is_tree(&heads), "case {case}: {heads:?} is not a single-root tree");
        ensure!(heads.iter().enumerate().all(|(i, &h)| h != i + 1), "case {case}: self loop in {heads:?}");
        ensure!(is_single_root_tree(&heads), "case {case}: library tree check rejects {heads:?}");
        let got: f64 = heads.iter().enumerate().map(|(i, &h)| f64::from(scores.get(h, i + 1))).sum();
        let best = brute_force_best(&scores);
        let gap = (best - got).abs();
        ensure!(gap <= 1e-4 * best.abs().max(1.0), "case {case}: decoded {got}, optimum {best}");
        worst_gap = worst_gap.max(gap);
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:.1?}");
    Ok(format!(
        "1000 matrices with 4-6 words: decoded score equals the exhaustive optimum (max gap {worst_gap:.1e}); all single-root trees; {elapsed:.1?}"
    ))
}

// ---------------------------------------------------------------------------
// 5. Metric fixtures

fn sentence(rows: &[(&str, Upos, usize, &str)]) -> Sentence {
    Sentence::new(
        rows.iter()
            .enumerate()
            .map(|(i, &(form, upos, head, rel))| Token::annotated(i + 1, form, upos, head, rel))
            .collect(),
    )
}

/// Ten tokens. Heads right: 3 + 3 = 6. Heads and labels right: 2 + 2 = 4.
fn hand_fixture() -> (Vec<Sentence>, Vec<Sentence>) {
    use Upos::*;
    let gold = vec![
        sentence(&[("Die", Det, 2, "det"), ("Katze", Noun, 3, "nsubj"), ("schläft", Verb, 0, "root"), (".", Punct, 3, "punct")]),
        sentence(&[
            ("Er", Pron, 2, "nsubj"),
            ("sieht", Verb, 0, "root"),
            ("den", Det, 4, "det"),
            ("Hund", Noun, 2, "obj"),
            ("gestern", Adv, 2, "advmod"),
            (".", Punct, 2, "punct"),
        ]),
    ];
    let pred = vec![
        // det ok; nsubj gets the right head with label obj; root ok; punct wrong head.
        sentence(&[("Die", Det, 2, "det"), ("Katze", Noun, 3, "obj"), ("schläft", Verb, 0, "root"), (".", Punct, 1, "punct")]),
        // nsubj, root ok; den, Hund, gestern wrong heads; punct right head, label obl.
        sentence(&[
            ("Er", Pron, 2, "nsubj"),
            ("sieht", Verb, 0, "root"),
            ("den", Pron, 2, "det"),
            ("Hund", Noun, 3, "obj"),
            ("gestern", Adj, 4, "advmod"),
            (".", Punct, 2, "obl"),
        ]),
    ];
    (gold, pred)
}

fn criterion_metrics() -> Check {
    let (gold, pred) = hand_fixture();
    let counts = ok(attachment_counts(&gold, &pred))?;
    let (uas, las) = (counts.uas().unwrap(), counts.las().unwrap());
    ensure!(uas == 60.0 && las == 40.0, "UAS {uas} LAS {las}, expected 60.0 / 40.0");

    let tags = ok(per_tag_counts(&gold, &pred))?;
    let overall_tags = ok(tagging_counts(&gold, &pred))?;
    let tag_correct: usize = tags.values().map(|c| c.correct).sum();
    let tag_total: usize = tags.values().map(|c| c.total).sum();
    ensure!(
        (tag_correct, tag_total) == (overall_tags.correct, overall_tags.total),
        "per-tag sums {tag_correct}/{tag_total} vs overall {}/{}",
        overall_tags.correct,
        overall_tags.total
    );
    ensure!(overall_tags.correct == 8 && overall_tags.total == 10, "tagging {overall_tags:?}, expected 8/10");

    let buckets = DistanceBuckets::default();
    let by_dist = ok(las_by_distance(&gold, &pred, &buckets))?;
    let sum = |f: fn(&pixdial::metrics::AttachmentCounts) -> (usize, usize, usize)| {
        by_dist.values().map(f).fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2))
    };
    let (u, l, t) = sum(|c| (c.unlabeled.correct, c.labeled.correct, c.labeled.total));
    ensure!(
        (u, l, t) == (counts.unlabeled.correct, counts.labeled.correct, counts.labeled.total),
        "distance buckets sum to {u}/{l}/{t}"
    );
    let weighted_las: f64 = by_dist.values().map(|c| c.las().unwrap() * c.labeled.total as f64).sum::<f64>() / t as f64;
    let weighted_uas: f64 = by_dist.values().map(|c| c.uas().unwrap() * c.unlabeled.total as f64).sum::<f64>() / t as f64;
    ensure!((weighted_las - las).abs() <= 1e-9, "weighted by-distance LAS {weighted_las} vs {las}");
    ensure!((weighted_uas - uas).abs() <= 1e-9, "weighted by-distance UAS {weighted_uas} vs {uas}");
    Ok(format!(
        "UAS {uas:.1} / LAS {las:.1}; per-tag sums {tag_correct}/{tag_total} match; {} distance buckets sum to totals, weighted LAS {weighted_las:.9}",
        by_dist.len()
    ))
}

// ---------------------------------------------------------------------------
// 6. Overfit smoke

fn overfit(task: Task) -> std::result::Result<(f64, usize, Duration), String> {
    let start = Instant::now();
    let sentences = ok(read_conllu(data("overfit.conllu")))?;
    ensure!(sentences.len() == 32, "overfit treebank has {} sentences", sentences.len());
    let enc = EncoderConfig::default();
    ensure!(enc.num_layers == 2 && enc.hidden_dim == 64, "default encoder is not the tiny config");
    let cfg = FinetuneConfig { task, seeds: vec![1], ..FinetuneConfig::default() };
    ensure!(cfg.max_steps.pixel <= 300, "max_steps {} above 300", cfg.max_steps.pixel);
    let mut vs = VarStore::new();
    let mut rng = stream_rng(1, Stream::Init);
    let backbone = ok(Backbone::pixel(&mut vs, &enc, 96, &mut rng))?;
    let model = ok(TaskModel::new(&mut vs, backbone, &cfg, TaskData::Treebank(&sentences), &mut rng))?;
    let examples = ok(model.prepare(TaskData::Treebank(&sentences)))?;
    ensure!(examples.iter().all(|e| !e.input.truncated), "overfit sentences do not fit the window");
    let outcome = ok(finetune(&mut vs, &model, &examples, &examples, &cfg, 1))?;
    let train_metric = ok(model.evaluate(&outcome.best, &examples))?;
    Ok((train_metric, outcome.best_step, start.elapsed()))
}

fn criterion_overfit() -> Check {
    let budget = Duration::from_secs(300);
    let (pos, pos_step, pos_time) = overfit(Task::Pos)?;
    ensure!(pos == 100.0, "POS train accuracy {pos:.2} after {pos_step} steps");
    ensure!(pos_time < budget, "POS overfit took {pos_time:.1?}");
    let (las, las_step, las_time) = overfit(Task::Parse)?;
    ensure!(las >= 95.0, "train LAS {las:.2} after {las_step} steps");
    ensure!(las_time < budget, "parse overfit took {las_time:.1?}");
    Ok(format!(
        "POS train accuracy {pos:.1}% at step {pos_step} ({pos_time:.1?}); train LAS {las:.1}% at step {las_step} ({las_time:.1?})"
    ))
}

// ---------------------------------------------------------------------------
// 7. Pretraining smoke

fn pretrain_curve(lines: &[String], seed: u64) -> std::result::Result<(Vec<f32>, f32, f32), String> {
    let cfg = PretrainConfig { steps: 200, seed, ..PretrainConfig::default() };
    let mut vs = VarStore::new();
    let mut rng = stream_rng(seed, Stream::Init);
    let backbone = ok(Backbone::pixel(&mut vs, &EncoderConfig::default(), 96, &mut rng))?;
    let objective = ok(Objective::for_backbone(&mut vs, &backbone, &cfg, &mut rng))?;
    let inputs = ok(prepare_corpus(&backbone, &objective, &cfg, lines))?;
    let probe = &inputs[..64.min(inputs.len())];
    let before = ok(frozen_batch_loss(&vs, &backbone, &objective, &cfg, probe, 99))?;
    let curve = ok(pretrain(&mut vs, &backbone, &objective, &inputs, &cfg, |_, _| Ok(())))?;
    let after = ok(frozen_batch_loss(&vs, &backbone, &objective, &cfg, probe, 99))?;
    Ok((curve.iter().map(|r| r.loss).collect(), before, after))
}

fn criterion_pretrain() -> Check {
    let lines = ok(read_lines(data("corpus.txt")))?;
    ensure!(lines.len() == 1000, "corpus has {} lines", lines.len());
    let (a, before, after) = pretrain_curve(&lines, 0)?;
    let (b, _, _) = pretrain_curve(&lines, 0)?;
    ensure!(a.len() == 200, "{} steps recorded", a.len());
    let bits = |c: &[f32]| c.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure!(bits(&a) == bits(&b), "identical seeds produced different loss curves");
    let initial = a[0];
    let last: f32 = a[a.len() - 10..].iter().sum::<f32>() / 10.0;
    let ratio = last / initial;
    ensure!(ratio <= 0.5, "loss {initial:.5} -> {last:.5} (mean of last 10 steps), ratio {ratio:.3} > 0.5");
    Ok(format!(
        "MAE loss {initial:.5} -> {last:.5} (last-10 mean), ratio {ratio:.3} <= 0.5; held-out batch {before:.5} -> {after:.5}; reruns bit-identical"
    ))
}

// ---------------------------------------------------------------------------
// 8. Checkpoint round trip

fn criterion_checkpoint() -> Check {
    let sentences = generate_treebank(8, 3, "c");
    let build = |seed: u64| -> std::result::Result<VarStore, String> {
        let mut vs = VarStore::new();
        let mut rng = stream_rng(seed, Stream::Init);
        let backbone = ok(Backbone::pixel(&mut vs, &EncoderConfig::default(), 96, &mut rng))?;
        let cfg = FinetuneConfig { task: Task::Parse, ..FinetuneConfig::default() };
        ok(TaskModel::new(&mut vs, backbone, &cfg, TaskData::Treebank(&sentences), &mut rng))?;
        Ok(vs)
    };
    let mut original = build(1)?;
    // Include values that text formats tend to mangle.
    let first = original.ids().next().unwrap();
    let mut d = original.get(first).to_vec();
    d[..4].copy_from_slice(&[-0.0, f32::MIN_POSITIVE, 1.0e-42, f32::MAX]);
    let shape = original.get(first).shape().to_vec();
    ok(original.set(first, ok(Tensor::param(d, &shape))?))?;

    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("model.pxlm");
    let meta = serde_json::json!({"front_end": "pixel", "note": "acceptance"});
    ok(Checkpoint::from_store(meta.clone(), &original).save(&path))?;
    let loaded = ok(Checkpoint::load(&path))?;
    ensure!(loaded.meta == meta, "metadata changed");
    let mut restored = build(2)?;
    ensure!(!restored.bit_equal(&original), "fresh model already equals the original");
    let n = ok(loaded.restore_into(&mut restored, |_| true))?;
    ensure!(n == original.len(), "restored {n} of {} tensors", original.len());
    ensure!(restored.bit_equal(&original), "restored parameters differ bitwise");

    let bytes = ok(std::fs::read(&path))?;
    let mut rejected = Vec::new();
    let mut corrupt = |name: &str, bad: Vec<u8>| -> std::result::Result<(), String> {
        ensure!(Checkpoint::from_bytes(&bad).is_err(), "corrupt {name} accepted");
        rejected.push(name.to_string());
        Ok(())
    };
    let mut b = bytes.clone();
    b[..4].copy_from_slice(b"PXLN");
    corrupt("magic", b)?;
    let mut b = bytes.clone();
    b[4..8].copy_from_slice(&2u32.to_le_bytes());
    corrupt("version", b)?;
    let mut b = bytes.clone();
    b[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    corrupt("metadata length", b)?;
    let mut b = bytes.clone();
    b[12] = b'!';
    corrupt("metadata", b)?;
    corrupt("truncated header", bytes[..10].to_vec())?;
    corrupt("truncated data", bytes[..bytes.len() - 3].to_vec())?;
    let mut b = bytes.clone();
    b.extend_from_slice(&[0, 0]);
    corrupt("trailing bytes", b)?;
    corrupt("empty file", Vec::new())?;
    Ok(format!(
        "{} tensors ({} values) restored bit-exactly; rejected corrupt {}",
        original.len(),
        original.num_elements(),
        rejected.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 9. CoNLL-U round trip

fn criterion_conllu() -> Check {
    let mut checked = Vec::new();
    for name in ["fixture.conllu", "overfit.conllu", "train.conllu", "dev.conllu", "test.conllu"] {
        let text = ok(std::fs::read_to_string(data(name)))?;
        let sentences = ok(parse_conllu(&text))?;
        let back = ok(serialize_conllu(&sentences))?;
        ensure!(back == text, "{name}: serialization differs from the input bytes");
        checked.push(name);
    }
    let fixture = ok(std::fs::read_to_string(data("fixture.conllu")))?;
    let comments = fixture.lines().filter(|l| l.starts_with('#')).count();
    let ranges = fixture.lines().filter(|l| l.split('\t').next().is_some_and(|id| id.contains('-'))).count();
    let empty_nodes = fixture.lines().filter(|l| l.split('\t').next().is_some_and(|id| id.contains('.'))).count();
    ensure!(comments > 0 && ranges > 0, "fixture lacks comment or multiword-token lines");
    Ok(format!(
        "byte-identical on {}; fixture has {comments} comments, {ranges} multiword ranges, {empty_nodes} empty nodes",
        checked.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 10. BPE oracle

fn criterion_bpe() -> Check {
    let toy = ok(train_bpe(&["abab ab"], 200))?;
    let first = toy.merges().first().cloned();
    ensure!(
        first == Some(("a".to_string(), "b".to_string())),
        "first merge {first:?}, expected (a, b)"
    );

    let train = ok(read_conllu(data("train.conllu")))?;
    let mut texts: Vec<String> = train.iter().map(Sentence::text).collect();
    texts.extend(ok(read_lines(data("corpus.txt")))?);
    let vocab = ok(train_bpe(&texts, 400))?;
    for line in &texts {
        let back = ok(vocab.decode(&vocab.encode(line)))?;
        ensure!(&back == line, "decode(encode({line:?})) = {back:?}");
    }

    let test = ok(read_conllu(data("test.conllu")))?;
    let clean: Vec<String> = test.iter().map(Sentence::text).collect();
    let clean_tpw = tokens_per_word(&vocab, &clean);
    let mut parts = vec![format!("clean {clean_tpw:.3}")];
    for rate in [0.1, 0.2] {
        let noisy: Vec<String> = ok(make_dialect_eval(&test, rate, 0))?.iter().map(Sentence::text).collect();
        let tpw = tokens_per_word(&vocab, &noisy);
        ensure!(tpw >= clean_tpw, "tokens per word {tpw:.3} at rate {rate} below clean {clean_tpw:.3}");
        parts.push(format!("rate {rate} {tpw:.3}"));
    }
    Ok(format!(
        "first merge (a, b); decode(encode(x)) == x on {} lines; tokens per word {}",
        texts.len(),
        parts.join(", ")
    ))
}

// ---------------------------------------------------------------------------
// 11. Robustness diagnostic

const ROBUSTNESS_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const ROBUSTNESS_RATES: [f64; 3] = [0.0, 0.1, 0.2];

fn criterion_robustness() -> Check {
    let dir = ok(tempfile::tempdir())?;
    let out = dir.path();
    let path_str = |p: PathBuf| serde_json::to_string(&p.display().to_string()).unwrap();
    let common = |extra: &[String]| -> std::result::Result<RunConfig, String> {
        let mut o = vec![
            format!("paths.train={}", path_str(data("train.conllu"))),
            format!("paths.dev={}", path_str(data("dev.conllu"))),
            format!("paths.test={}", path_str(data("test.conllu"))),
            format!("paths.corpus={}", path_str(data("corpus.txt"))),
            format!("paths.out={}", path_str(out.to_path_buf())),
            "finetune.task=pos".to_string(),
            format!("finetune.seeds={:?}", ROBUSTNESS_SEEDS),
            format!("eval.perturb_rates={:?}", ROBUSTNESS_RATES),
        ];
        o.extend_from_slice(extra);
        ok(RunConfig::resolve(None, &o))
    };
    for kind in ["pixel", "subword"] {
        let cfg = common(&[format!("model.front_end={kind}"), format!("paths.run_name={kind}")])?;
        let runs = ok(cmd_finetune(&cfg))?;
        ensure!(runs.len() == ROBUSTNESS_SEEDS.len(), "{kind}: {} seed runs", runs.len());
    }
    let cfg = common(&[
        format!("paths.runs=[{},{}]", path_str(out.join("pixel")), path_str(out.join("subword"))),
        "paths.run_name=\"eval\"".to_string(),
    ])?;
    let eval = ok(cmd_evaluate(&cfg))?;
    for kind in ["pixel", "subword"] {
        for rate in ROBUSTNESS_RATES {
            let row = eval
                .summary
                .iter()
                .find(|r| r.front_end == kind && r.rate == rate && r.metric == "pos_acc")
                .ok_or_else(|| format!("no summary row for {kind} at rate {rate}"))?;
            ensure!(row.runs == ROBUSTNESS_SEEDS.len(), "{kind} rate {rate}: {} runs averaged", row.runs);
        }
    }
    ensure!(eval.table.contains('±'), "comparison table lacks mean ± std cells");
    ensure!(eval.dir.join("comparison.txt").is_file(), "comparison.txt not written");
    println!("{}", eval.table.trim_end());
    let drops = drops_by_front_end(&eval.summary, "pos_acc");
    let (pixel, subword) = (drops.get("pixel").copied(), drops.get("subword").copied());
    let direction = match (pixel, subword) {
        (Some(p), Some(s)) if p < s => "holds",
        (Some(_), Some(_)) => "does not hold",
        _ => "undetermined",
    };
    println!(
        "DIAGNOSTIC 11: relative POS drop at rate 0.2: pixel {:.1}%, subword {:.1}%; smaller drop for pixel {direction} (non-gating)",
        pixel.unwrap_or(f64::NAN),
        subword.unwrap_or(f64::NAN)
    );
    Ok(format!(
        "comparison table for {} seeds x rates {:?} x 2 front-ends emitted with mean ± std",
        ROBUSTNESS_SEEDS.len(),
        ROBUSTNESS_RATES
    ))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 11] = [
        (1, "gradient suite", criterion_gradients),
        (2, "renderer determinism", criterion_render),
        (3, "span-mask statistics", criterion_span_mask),
        (4, "tree-decoder oracle", criterion_decoder),
        (5, "metric fixtures", criterion_metrics),
        (6, "overfit smoke", criterion_overfit),
        (7, "pretraining smoke", criterion_pretrain),
        (8, "checkpoint round trip", criterion_checkpoint),
        (9, "CoNLL-U round trip", criterion_conllu),
        (10, "BPE oracle", criterion_bpe),
        (11, "robustness diagnostic", criterion_robustness),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (n, name, _) in &criteria {
            println!("criterion_{n:02}_{}: test", name.replace([' ', '-'], "_").to_lowercase());
        }
        return;
    }
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {n:>2} {name} [{secs:.1} s]: {detail}"),
            Err(detail) => {
                println!("FAIL  {n:>2} {name} [{secs:.1} s]: {detail}");
                failed.push(n);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
