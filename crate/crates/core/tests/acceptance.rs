//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. Pass substrings as arguments to run a
//! subset, e.g. `cargo test -p uhd-core --test acceptance -- oracle`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uhd_core::encoder::Nonlinearity;
use uhd_core::eval::{
    density_profile, ideal_layer_oracle, mrr_at, spearman, tune_bucket_weights, Qrels, Run,
    WeightGrid,
};
use uhd_core::index::{build_index, index_bytes};
use uhd_core::pipeline::{encode_texts, index_reps, rerank_set, retrieve};
use uhd_core::sparse::relevance;
use uhd_core::sparsifier::{checkpoint_bytes, WtaLayer};
use uhd_core::synth::{generate, SynthConfig, SyntheticCorpus};
use uhd_core::trainer::{finite_difference_audit, train, AuditSize, TrainConfig, TrainOutcome};
use uhd_core::{BucketDescriptor, BucketedRepresentation, SparseVector, UhdModel};

const LEARNING_CONFIG: &str = r#"{
    "h": 64, "n": 8192, "k": 16, "weight_sparsity": 0.3, "layers": [2], "mode": "single",
    "batch_size": 8, "steps": 2000, "lr": 0.002, "warmup_steps": 200, "seed": 7,
    "encoder_depth": 2
}"#;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trained {
    corpus: SyntheticCorpus,
    outcome: TrainOutcome,
    elapsed: Duration,
}

fn corpus() -> SyntheticCorpus {
    generate(&SynthConfig::default()).expect("synthetic corpus")
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let corpus = corpus();
        let config = TrainConfig::from_json(LEARNING_CONFIG).unwrap();
        let start = Instant::now();
        let outcome = train(&corpus.triples, &config, |_| {}).expect("training");
        Trained {
            corpus,
            outcome,
            elapsed: start.elapsed(),
        }
    })
}

fn texts(items: &[uhd_core::synth::SynthText]) -> Vec<(String, String)> {
    items
        .iter()
        .map(|t| (t.id.clone(), t.text.clone()))
        .collect()
}

/// Encodes the corpus and held-out queries with `model`, retrieves the top
/// 100 and returns `(run, MRR@10)`.
fn heldout_mrr(model: &UhdModel, corpus: &SyntheticCorpus) -> (Run, f64) {
    let docs = encode_texts(model, &texts(&corpus.docs), false).unwrap();
    let index = index_reps(&docs).unwrap();
    let queries = encode_texts(model, &texts(&corpus.heldout_queries), true).unwrap();
    let run = retrieve(&index, &queries, 100).unwrap();
    let mrr = mrr_at(&run, &corpus.heldout_qrels, 10).unwrap().value;
    (run, mrr)
}

// ---------------------------------------------------------------------------

fn random_vector(rng: &mut ChaCha8Rng, n: u32, max_nnz: usize) -> SparseVector {
    let nnz = rng.gen_range(0..=max_nnz);
    let pairs: BTreeMap<u32, f32> = (0..nnz)
        .map(|_| {
            // Squaring skews dims toward the low end so posting lists overlap.
            let u: f64 = rng.gen();
            let dim = ((u * u) * f64::from(n)) as u32;
            // Coarse weights produce exact score ties.
            let w = rng.gen_range(1..=8) as f32 / 8.0;
            (dim.min(n - 1), w)
        })
        .collect();
    SparseVector::from_pairs(n, pairs).unwrap()
}

fn random_rep(rng: &mut ChaCha8Rng, n: u32, max_nnz: usize) -> BucketedRepresentation {
    BucketedRepresentation::new(
        (1..=3)
            .map(|j| {
                (
                    BucketDescriptor::new(j, 1, n),
                    random_vector(rng, n, max_nnz),
                )
            })
            .collect(),
    )
    .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let n = 8192;
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for corpus_seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + corpus_seed);
        let docs: Vec<(String, BucketedRepresentation)> = (0..1000)
            .map(|i| (format!("doc{i}"), random_rep(&mut rng, n, 48)))
            .collect();
        let index = build_index(docs.clone()).unwrap();
        for _ in 0..200 {
            let weights: Vec<f32> = (0..3)
                .map(|_| [0.0, 0.5, 1.0, rng.gen_range(0.1..2.0)][rng.gen_range(0..4)])
                .collect();
            let q = random_rep(&mut rng, n, 16).with_weights(&weights).unwrap();
            let got = index.search(&q, 100).unwrap();
            let mut want: Vec<(u32, f64)> = docs
                .iter()
                .enumerate()
                .filter(|(_, (_, d))| {
                    q.buckets()
                        .iter()
                        .zip(d.buckets())
                        .any(|((qd, qv), (_, dv))| {
                            qd.weight != 0.0 && qv.indices().iter().any(|&i| dv.get(i).is_some())
                        })
                })
                .map(|(i, (_, d))| (i as u32, relevance(&q, d).unwrap()))
                .collect();
            want.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            want.truncate(100);
            checked += 1;
            if got.hits.len() != want.len()
                || got.hits.iter().zip(&want).any(|(h, w)| h.ordinal != w.0)
            {
                mismatches += 1;
            }
            for (h, w) in got.hits.iter().zip(&want) {
                worst = worst.max((h.score - w.1).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && worst <= 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "{checked} queries over 5×1000 docs, {mismatches} ordering mismatches, \
             max |Δscore| {worst:.1e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn exact_k_and_mask() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut violations = 0;
    let mut zero_winner_cases = 0;
    for call in 0..10_000 {
        let h = rng.gen_range(1..=24);
        let n = rng.gen_range(1..=300);
        let k = rng.gen_range(1..=n);
        let sparsity = [0.0, 0.3, 0.6][call % 3];
        let mut layer = WtaLayer::random(h, n, k, sparsity, &mut rng).unwrap();
        if call % 4 == 0 {
            // Zero bias plus a sparse input makes exact-zero activations common.
            let bias = vec![0.0; n];
            layer = WtaLayer::from_parts(
                h,
                n,
                layer.weight().to_vec(),
                bias,
                layer.mask().to_vec(),
                k,
                sparsity,
            )
            .unwrap();
        }
        let e: Vec<f32> = (0..h)
            .map(|_| {
                if rng.gen_bool(0.3) {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let out = layer.forward(&e, k).unwrap();
        // Independent oracle: dense activations and the k-th best value.
        let mut z: Vec<(usize, f64)> = (0..n)
            .map(|d| {
                let mut v = layer.bias()[d];
                for (i, &ei) in e.iter().enumerate() {
                    if ei != 0.0 {
                        v += f64::from(ei) * layer.weight()[i * n + d];
                    }
                }
                (d, v)
            })
            .collect();
        z.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let zero_winners = z[..k]
            .iter()
            .filter(|w| w.1 == 0.0 || (w.1 as f32) == 0.0)
            .count();
        if zero_winners > 0 {
            zero_winner_cases += 1;
        }
        let ok = out.nnz() <= k && (zero_winners > 0 || out.nnz() == k);
        if !ok {
            violations += 1;
        }
    }

    let corpus = generate(&SynthConfig {
        topics: 4,
        docs_per_topic: 6,
        train_queries: 12,
        heldout_queries: 0,
        ..Default::default()
    })
    .unwrap();
    let config = TrainConfig::from_json(
        r#"{"h": 8, "n": 256, "k": 8, "weight_sparsity": 0.3, "layers": [1, 2],
            "mode": "vertical", "batch_size": 4, "steps": 1000, "lr": 0.01,
            "warmup_steps": 50, "seed": 3, "encoder_depth": 2}"#,
    )
    .unwrap();
    let out = train(&corpus.triples, &config, |_| {}).unwrap();
    let masked_max = out
        .model
        .plan
        .entries()
        .iter()
        .map(|e| e.wta.masked_weight_max())
        .fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        violations == 0 && masked_max == 0.0 && elapsed < Duration::from_secs(30),
        format!(
            "10000 forward calls, {violations} violations ({zero_winner_cases} with zero \
             winners); max |W⊙(1−M)| after 1000 steps = {masked_max}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn gradient_audit() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut loser = 0.0f64;
    let mut masked = 0.0f64;
    let mut compared = 0;
    let mut skipped = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20u64 {
        let dim = rng.gen_range(8..=32);
        let size = AuditSize {
            hidden: rng.gen_range(3..=8),
            dim,
            tokens: rng.gen_range(1..=4),
            k: rng.gen_range(1..=6.min(dim)),
            vocab: rng.gen_range(3..=9),
            depth: rng.gen_range(1..=3),
            nonlinearity: [
                Nonlinearity::Identity,
                Nonlinearity::Tanh,
                Nonlinearity::Gelu,
            ][i as usize % 3],
        };
        let r = finite_difference_audit(i, &size).unwrap();
        worst = worst.max(r.max_rel_error);
        loser = loser.max(r.loser_grad_max);
        masked = masked.max(r.masked_grad_max);
        compared += r.compared;
        skipped += r.skipped_nonsmooth;
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && loser == 0.0 && masked == 0.0 && elapsed < Duration::from_secs(60),
        format!(
            "20 instances, {compared} gradients compared ({skipped} non-smooth skipped), \
             max rel err {worst:.2e}, loser |g| {loser}, masked |g| {masked}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn learning_sanity() -> Outcome {
    let t = trained();
    let log = &t.outcome.log;
    let initial = log[0].report.mean_loss;
    let tail = &log[log.len() - 100..];
    let final_loss = tail.iter().map(|e| e.report.mean_loss).sum::<f64>() / tail.len() as f64;
    let (_, mrr) = heldout_mrr(&t.outcome.model, &t.corpus);
    outcome(
        final_loss < 0.5 * initial && mrr >= 0.9 && t.elapsed < Duration::from_secs(600),
        format!(
            "loss {initial:.4} → {final_loss:.4} (mean of last 100 steps), \
             held-out MRR@10 {mrr:.4}, training {:.1}s",
            t.elapsed.as_secs_f64()
        ),
    )
}

fn k_sweep() -> Outcome {
    let t = trained();
    let (_, base) = heldout_mrr(&t.outcome.model, &t.corpus);
    let mut values = Vec::new();
    for k in [4, 8, 16] {
        let mut m = t.outcome.model.clone();
        m.set_infer_k(k).unwrap();
        values.push((k, heldout_mrr(&m, &t.corpus).1));
    }
    let monotone = values.windows(2).all(|w| w[1].1 >= w[0].1);
    let matches = (values[2].1 - base).abs() <= 0.02;
    let shown: Vec<String> = values
        .iter()
        .map(|(k, m)| format!("k={k}: {m:.4}"))
        .collect();
    outcome(
        monotone && matches,
        format!("{}; train-k result {base:.4}", shown.join(", ")),
    )
}

fn density_trend() -> Outcome {
    let t = trained();
    let model = &t.outcome.model;
    let queries: Vec<_> = t
        .corpus
        .train_queries
        .iter()
        .chain(&t.corpus.heldout_queries)
        .collect();
    let items: Vec<(String, String)> = queries
        .iter()
        .map(|q| (q.id.clone(), q.text.clone()))
        .collect();
    let reps = encode_texts(model, &items, true).unwrap();
    let lens: Vec<usize> = queries
        .iter()
        .map(|q| model.tokenize(&q.text, true).unwrap().len())
        .collect();
    let profile = density_profile(lens.iter().copied().zip(reps.iter().map(|r| &r.1)));
    let xs: Vec<f64> = profile.keys().map(|&l| l as f64).collect();
    let ys: Vec<f64> = profile.values().map(|r| r.mean_density).collect();
    let rho = spearman(&xs, &ys).unwrap_or(f64::NAN);
    let mut table = String::new();
    for (l, r) in &profile {
        let _ = write!(table, " {l}:{:.2e}", r.mean_density);
    }
    outcome(
        profile.len() >= 5 && rho > 0.5,
        format!(
            "{} length groups, Spearman ρ = {rho:.3};{table}",
            profile.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn multi_bucket() -> Outcome {
    let corpus = corpus();
    let config = TrainConfig::from_json(
        r#"{"h": 32, "n": 8192, "k": 16, "weight_sparsity": 0.3, "layers": [1, 2, 3],
            "mode": "vertical", "batch_size": 8, "steps": 300, "lr": 0.002,
            "warmup_steps": 50, "seed": 11, "encoder_depth": 3}"#,
    )
    .unwrap();
    let model = train(&corpus.triples, &config, |_| {}).unwrap().model;
    let docs = encode_texts(&model, &texts(&corpus.docs), false).unwrap();
    let index = index_reps(&docs).unwrap();
    let queries = encode_texts(&model, &texts(&corpus.heldout_queries), true).unwrap();
    let run = retrieve(&index, &queries, 100).unwrap();
    let set = rerank_set(&run, &queries, &docs).unwrap();
    let qrels: &Qrels = &corpus.heldout_qrels;
    let oracle = ideal_layer_oracle(&set, qrels).unwrap();
    let best_single = oracle.single_bucket_mrr.iter().copied().fold(0.0, f64::max);
    let grid = WeightGrid::thirds(3).unwrap();
    let tuned = tune_bucket_weights(&set, qrels, &grid).unwrap();
    let ones = set.mrr(qrels, &[1.0, 1.0, 1.0]);
    outcome(
        oracle.mrr >= best_single && tuned.mrr >= ones,
        format!(
            "oracle {:.4} vs single buckets {:?}; tuned {:?} → {:.4} vs all-ones {ones:.4}",
            oracle.mrr,
            oracle
                .single_bucket_mrr
                .iter()
                .map(|m| format!("{m:.4}"))
                .collect::<Vec<_>>(),
            tuned
                .weights
                .iter()
                .map(|w| format!("{w:.2}"))
                .collect::<Vec<_>>(),
            tuned.mrr
        ),
    )
}

// ---------------------------------------------------------------------------

struct Artifacts {
    checkpoint: Vec<u8>,
    index: Vec<u8>,
    run: Vec<u8>,
    metrics: String,
}

fn full_pipeline(steps: u64) -> Artifacts {
    let corpus = corpus();
    let mut config = TrainConfig::from_json(LEARNING_CONFIG).unwrap();
    config.steps = steps;
    let model = train(&corpus.triples, &config, |_| {}).unwrap().model;
    let docs = encode_texts(&model, &texts(&corpus.docs), false).unwrap();
    let index = index_reps(&docs).unwrap();
    let queries = encode_texts(&model, &texts(&corpus.heldout_queries), true).unwrap();
    let run = retrieve(&index, &queries, 100).unwrap();
    let mut run_bytes = Vec::new();
    run.write(&mut run_bytes, "uhd").unwrap();
    let mrr = mrr_at(&run, &corpus.heldout_qrels, 10).unwrap();
    Artifacts {
        checkpoint: checkpoint_bytes(&model),
        index: index_bytes(&index),
        run: run_bytes,
        metrics: format!("mrr@10\t{:.6}\n", mrr.value),
    }
}

fn determinism() -> Outcome {
    let a = full_pipeline(300);
    let b = full_pipeline(300);
    let same = [
        ("checkpoint", a.checkpoint == b.checkpoint),
        ("index", a.index == b.index),
        ("run", a.run == b.run),
        ("metrics", a.metrics == b.metrics),
    ];
    let diff: Vec<&str> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    outcome(
        diff.is_empty(),
        if diff.is_empty() {
            format!(
                "checkpoint ({} B), index ({} B), run ({} B) and metrics identical across runs",
                a.checkpoint.len(),
                a.index.len(),
                a.run.len()
            )
        } else {
            format!("differs: {}", diff.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 8] = [
        ("oracle-equivalence", oracle_equivalence),
        ("exact-k-and-mask", exact_k_and_mask),
        ("gradient-audit", gradient_audit),
        ("learning-sanity", learning_sanity),
        ("k-sweep", k_sweep),
        ("density-trend", density_trend),
        ("multi-bucket-dominance", multi_bucket),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        ran += 1;
        let o = f();
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
