use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use uhd_core::encoder::read_embedding_file;
use uhd_core::eval::{
    activation_frequency, density_profile, ideal_layer_oracle, interpret_dimensions, mrr_at,
    recall_at, tune_bucket_weights, Qrels, Run, WeightGrid, TUNE_CUTOFF,
};
use uhd_core::index::{read_index, write_index};
use uhd_core::pipeline::{
    encode_records, encode_texts, index_reps, read_texts, rerank_set, retrieve,
};
use uhd_core::sparsifier::{read_checkpoint, write_checkpoint};
use uhd_core::synth::{generate, SynthConfig};
use uhd_core::trainer::{read_triples, write_loss_log, TrainConfig};
use uhd_core::{BucketedRepresentation, Budget, UhdModel};

use crate::{
    AnalyzeArgs, EvalArgs, IndexArgs, SearchArgs, SynthArgs, TrainArgs, TuneArgs, UsageError,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn load_model(path: &Path, infer_k: Option<usize>) -> Result<UhdModel> {
    require(path, "checkpoint")?;
    let mut model =
        read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    if let Some(k) = infer_k {
        model.set_infer_k(k)?;
    }
    Ok(model)
}

fn parse_weights(text: &str) -> Result<Vec<f32>> {
    text.split(':')
        .map(|w| {
            w.trim()
                .parse::<f32>()
                .map_err(|_| usage(format!("bad bucket weight {w:?} in {text:?}")))
        })
        .collect()
}

/// Shortest decimal form with at most four fractional digits.
fn fmt_weight(w: f64) -> String {
    let s = format!("{w:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let corpus = generate(&SynthConfig {
        seed: args.seed,
        ..Default::default()
    })?;
    corpus.write_dir(&args.out)?;
    println!("docs\t{}", corpus.docs.len());
    println!("train_queries\t{}", corpus.train_queries.len());
    println!("heldout_queries\t{}", corpus.heldout_queries.len());
    println!("triples\t{}", corpus.triples.len());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    require(&args.triples, "triples file")?;
    require(&args.config, "config file")?;
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config =
        TrainConfig::from_json(&text).with_context(|| format!("in {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    let triples = read_triples(&args.triples)?;
    let outcome = uhd_core::trainer::train(&triples, &config, |e| {
        if e.step % 100 == 0 {
            log::info!("step {} loss {:.6}", e.step, e.report.mean_loss);
        }
    })?;
    write_checkpoint(&outcome.model, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    let mut w = create(&log_path)?;
    write_loss_log(&mut w, &outcome.log)?;
    w.flush()?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!("steps\t{}", outcome.log.len());
        println!("initial_loss\t{:.6}", first.report.mean_loss);
        println!("final_loss\t{:.6}", last.report.mean_loss);
    }
    Ok(())
}

pub fn index(args: &IndexArgs) -> Result<()> {
    let model = load_model(&args.checkpoint, args.infer_k)?;
    let docs = match (&args.collection, &args.embeddings) {
        (Some(path), _) => {
            require(path, "collection")?;
            encode_texts(&model, &read_texts(path)?, false)?
        }
        (None, Some(path)) => {
            require(path, "embeddings file")?;
            let (_, records) =
                read_embedding_file(path).with_context(|| format!("reading {}", path.display()))?;
            encode_records(&model, &records)?
        }
        (None, None) => return Err(usage("one of --collection or --embeddings is required")),
    };
    let index = index_reps(&docs)?;
    write_index(&index, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("docs\t{}", index.doc_count());
    println!("postings\t{}", index.total_postings());
    Ok(())
}

fn weighted(
    reps: Vec<(String, BucketedRepresentation)>,
    weights: Option<&[f32]>,
) -> Result<Vec<(String, BucketedRepresentation)>> {
    match weights {
        None => Ok(reps),
        Some(w) => reps
            .into_iter()
            .map(|(id, r)| Ok((id, r.with_weights(w)?)))
            .collect(),
    }
}

pub fn search(args: &SearchArgs) -> Result<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    require(&args.index, "index")?;
    let model = load_model(&args.checkpoint, args.infer_k)?;
    let weights = args.weights.as_deref().map(parse_weights).transpose()?;
    let index = read_index(&args.index)
        .with_context(|| format!("reading index {}", args.index.display()))?;

    if let Some(text) = &args.query {
        let rep = model.encode_text(text, true, Budget::Infer)?;
        let rep = weighted(vec![(String::new(), rep)], weights.as_deref())?
            .remove(0)
            .1;
        let result = index.search(&rep, args.k)?;
        let stdout = io::stdout();
        let mut out = stdout.lock();
        for (rank, hit) in result.hits.iter().enumerate() {
            writeln!(out, "{} {} {:.6}", rank + 1, hit.doc_id, hit.score)?;
        }
        return Ok(());
    }

    let queries = match (&args.queries, &args.query_embeddings) {
        (Some(path), _) => {
            require(path, "queries file")?;
            encode_texts(&model, &read_texts(path)?, true)?
        }
        (None, Some(path)) => {
            require(path, "query embeddings file")?;
            let (_, records) =
                read_embedding_file(path).with_context(|| format!("reading {}", path.display()))?;
            encode_records(&model, &records)?
        }
        (None, None) => {
            return Err(usage(
                "one of --query, --queries or --query-embeddings is required",
            ))
        }
    };
    let queries = weighted(queries, weights.as_deref())?;
    let run = retrieve(&index, &queries, args.k)?;
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            run.write(&mut w, &args.tag)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            run.write(&mut w, &args.tag)?;
            w.flush()?;
        }
    }
    Ok(())
}

enum Metric {
    Mrr(usize),
    Recall(usize),
}

fn parse_metric(name: &str) -> Result<Metric> {
    let bad = || {
        usage(format!(
            "unknown metric {name:?}; expected mrr@K or recall@K"
        ))
    };
    let (kind, cutoff) = name.split_once('@').ok_or_else(bad)?;
    let cutoff: usize = cutoff.parse().map_err(|_| bad())?;
    if cutoff == 0 {
        return Err(bad());
    }
    match kind {
        "mrr" => Ok(Metric::Mrr(cutoff)),
        "recall" => Ok(Metric::Recall(cutoff)),
        _ => Err(bad()),
    }
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let metrics = args
        .metrics
        .split(',')
        .map(|m| parse_metric(m.trim()))
        .collect::<Result<Vec<_>>>()?;
    require(&args.run, "run file")?;
    require(&args.qrels, "qrels file")?;
    let qrels = Qrels::read(&args.qrels)?;
    let run = Run::read(&args.run)?;
    for (name, m) in args.metrics.split(',').zip(metrics) {
        let v = match m {
            Metric::Mrr(c) => mrr_at(&run, &qrels, c)?,
            Metric::Recall(c) => recall_at(&run, &qrels, c)?,
        };
        println!("{}\t{:.4}", name.trim(), v.value);
    }
    Ok(())
}

fn grid(spec: &str, buckets: usize) -> Result<WeightGrid> {
    let g = match spec {
        "thirds" => WeightGrid::thirds(buckets)?,
        "tenths" => {
            let values: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
            WeightGrid::uniform(buckets, &values)?
        }
        list => {
            let values = list
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| usage(format!("bad grid value {v:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            WeightGrid::uniform(buckets, &values)?
        }
    };
    Ok(g)
}

pub fn tune(args: &TuneArgs) -> Result<()> {
    for (p, what) in [
        (&args.run, "run file"),
        (&args.queries, "queries file"),
        (&args.collection, "collection"),
        (&args.qrels, "qrels file"),
    ] {
        require(p, what)?;
    }
    let model = load_model(&args.checkpoint, args.infer_k)?;
    let buckets = model.plan.len();
    let grid = grid(&args.grid, buckets)?;
    let qrels = Qrels::read(&args.qrels)?;
    let run = Run::read(&args.run)?;
    let queries: Vec<(String, String)> = read_texts(&args.queries)?
        .into_iter()
        .filter(|(id, _)| run.ranking(id).is_some())
        .collect();
    let needed: std::collections::HashSet<&str> = run
        .iter()
        .flat_map(|(_, r)| r.iter().map(|e| e.doc_id.as_str()))
        .collect();
    let docs: Vec<(String, String)> = read_texts(&args.collection)?
        .into_iter()
        .filter(|(id, _)| needed.contains(id.as_str()))
        .collect();
    let queries = encode_texts(&model, &queries, true)?;
    let docs = encode_texts(&model, &docs, false)?;
    let set = rerank_set(&run, &queries, &docs)?;
    let result = tune_bucket_weights(&set, &qrels, &grid)?;
    let shown: Vec<String> = result.weights.iter().map(|&w| fmt_weight(w)).collect();
    println!("{}", shown.join(":"));
    println!("mrr@{TUNE_CUTOFF}\t{:.4}", result.mrr);
    println!("grid_points\t{}", result.evaluated);
    if args.oracle {
        let oracle = ideal_layer_oracle(&set, &qrels)?;
        println!("oracle_mrr@{TUNE_CUTOFF}\t{:.4}", oracle.mrr);
        for (b, m) in oracle.single_bucket_mrr.iter().enumerate() {
            println!("bucket{}_mrr@{TUNE_CUTOFF}\t{m:.4}", b + 1);
        }
    }
    Ok(())
}

fn emit(
    out: Option<&Path>,
    file: &str,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<()> {
    match out {
        Some(dir) => {
            let path = dir.join(file);
            let mut w = create(&path)?;
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs) -> Result<()> {
    let all = !(args.density || args.activation || args.interpret);
    let (density, activation, interpret) = (
        all || args.density,
        all || args.activation,
        all || args.interpret,
    );
    let selected = [density, activation, interpret]
        .iter()
        .filter(|&&b| b)
        .count();
    if args.out.is_none() && selected > 1 {
        return Err(usage(
            "--out is required when more than one analysis is selected",
        ));
    }
    require(&args.queries, "queries file")?;
    let model = load_model(&args.checkpoint, args.infer_k)?;
    if args.bucket >= model.plan.len() {
        return Err(usage(format!(
            "--bucket {} out of range; the model has {} buckets",
            args.bucket,
            model.plan.len()
        )));
    }
    let texts = read_texts(&args.queries)?;
    let reps = encode_texts(&model, &texts, true)?;
    let out = args.out.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    if density {
        let lens = texts
            .iter()
            .map(|(_, t)| model.tokenize(t, true).map(|ids| ids.len()))
            .collect::<uhd_core::Result<Vec<_>>>()?;
        let profile = density_profile(lens.into_iter().zip(reps.iter().map(|r| &r.1)));
        emit(out, "density.csv", |w| {
            writeln!(w, "length,mean_density")?;
            for (len, row) in &profile {
                writeln!(w, "{len},{:.9}", row.mean_density)?;
            }
            Ok(())
        })?;
    }
    if activation {
        let freq = activation_frequency(reps.iter().map(|r| &r.1), args.bucket);
        emit(out, "activation.csv", |w| {
            writeln!(w, "dim,count")?;
            for (dim, count) in &freq {
                writeln!(w, "{dim},{count}")?;
            }
            Ok(())
        })?;
    }
    if interpret {
        let tokenizer = model
            .tokenizer
            .as_ref()
            .ok_or_else(|| usage("the checkpoint has no tokenizer"))?;
        let words: Vec<Vec<String>> = texts
            .iter()
            .map(|(_, t)| tokenizer.words(t, true))
            .collect();
        let terms = interpret_dimensions(
            words
                .iter()
                .map(Vec::as_slice)
                .zip(reps.iter().map(|r| &r.1)),
            args.bucket,
            args.min_count,
        );
        emit(out, "interpret.csv", |w| {
            writeln!(w, "dim,term,count")?;
            for (dim, list) in &terms.dims {
                for (term, count) in list {
                    writeln!(w, "{dim},{term},{count}")?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}
