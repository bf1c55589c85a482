use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use uhd_core::encoder::{DenseTokenMatrix, EmbeddingHeader, EmbeddingWriter};

const CONFIG: &str = r#"{
    "h": 8, "n": 256, "k": 8, "weight_sparsity": 0.3, "layers": [1], "mode": "single",
    "batch_size": 4, "steps": 30, "lr": 0.01, "warmup_steps": 5, "seed": 1,
    "encoder_depth": 1
}"#;

fn uhd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uhd"))
        .args(args)
        .output()
        .expect("spawn uhd")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn ok(o: Output) -> Output {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    o
}

#[track_caller]
fn exits(o: &Output, code: i32) {
    assert_eq!(o.status.code(), Some(code), "stderr: {}", stderr(o));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(uhd(&[
            "synth",
            "--out",
            s(&root.join("corpus")),
            "--seed",
            "5",
        ]));
        fs::write(root.join("config.json"), CONFIG).unwrap();
        Self { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn corpus(&self, name: &str) -> String {
        s(&self.root.join("corpus").join(name)).to_string()
    }

    fn train(&self, out: &str) -> PathBuf {
        let ckpt = self.p(out);
        ok(uhd(&[
            "train",
            "--triples",
            &self.corpus("triples.tsv"),
            "--config",
            s(&self.p("config.json")),
            "--out",
            s(&ckpt),
        ]));
        ckpt
    }

    fn index(&self, ckpt: &Path, out: &str) -> PathBuf {
        let idx = self.p(out);
        ok(uhd(&[
            "index",
            "--checkpoint",
            s(ckpt),
            "--collection",
            &self.corpus("docs.tsv"),
            "--out",
            s(&idx),
        ]));
        idx
    }

    fn run(&self, ckpt: &Path, idx: &Path, out: &str) -> PathBuf {
        let run = self.p(out);
        ok(uhd(&[
            "search",
            "--index",
            s(idx),
            "--checkpoint",
            s(ckpt),
            "--queries",
            &self.corpus("queries.heldout.tsv"),
            "--k",
            "100",
            "--out",
            s(&run),
        ]));
        run
    }
}

#[test]
fn end_to_end_is_idempotent() {
    let f = Fixture::new();
    let a = f.train("a.uhdw");
    let b = f.train("b.uhdw");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let log = fs::read_to_string(f.p("a.uhdw.loss.csv")).unwrap();
    assert!(log.starts_with("step,mean_loss,mean_pos,mean_neg\n"));
    assert_eq!(log.lines().count(), 31);

    let ia = f.index(&a, "a.uhdi");
    let ib = f.index(&a, "b.uhdi");
    assert_eq!(fs::read(&ia).unwrap(), fs::read(&ib).unwrap());
    let ra = f.run(&a, &ia, "a.run");
    let rb = f.run(&a, &ia, "b.run");
    let run = fs::read_to_string(&ra).unwrap();
    assert_eq!(run, fs::read_to_string(&rb).unwrap());
    assert_eq!(run.lines().count(), 50 * 100);
    assert!(run.lines().next().unwrap().ends_with(" uhd"));

    let eval = |run: &Path| {
        stdout(&ok(uhd(&[
            "eval",
            "--run",
            s(run),
            "--qrels",
            &f.corpus("qrels.heldout.txt"),
        ])))
    };
    let metrics = eval(&ra);
    assert_eq!(metrics, eval(&rb));
    let names: Vec<&str> = metrics
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(names, ["mrr@10", "recall@100", "recall@1000"]);
}

#[test]
fn index_reports_counts_and_infer_k() {
    let f = Fixture::new();
    let ckpt = f.train("m.uhdw");
    let out = ok(uhd(&[
        "index",
        "--checkpoint",
        s(&ckpt),
        "--collection",
        &f.corpus("docs.tsv"),
        "--out",
        s(&f.p("k8.uhdi")),
    ]));
    let text = stdout(&out);
    assert!(text.starts_with("docs\t500\npostings\t"), "{text}");
    let postings = |t: &str| -> usize { t.lines().nth(1).unwrap()[9..].parse().unwrap() };
    let small = ok(uhd(&[
        "index",
        "--checkpoint",
        s(&ckpt),
        "--collection",
        &f.corpus("docs.tsv"),
        "--out",
        s(&f.p("k2.uhdi")),
        "--infer-k",
        "2",
    ]));
    assert!(postings(&stdout(&small)) < postings(&text));
}

#[test]
fn single_query_search_prints_ranked_lines() {
    let f = Fixture::new();
    let ckpt = f.train("m.uhdw");
    let idx = f.index(&ckpt, "m.uhdi");
    let query = fs::read_to_string(f.corpus("docs.tsv")).unwrap();
    let text = query
        .lines()
        .next()
        .unwrap()
        .split('\t')
        .nth(1)
        .unwrap()
        .to_string();
    let out = ok(uhd(&[
        "search",
        "--index",
        s(&idx),
        "--checkpoint",
        s(&ckpt),
        "--query",
        &text,
        "--k",
        "10",
    ]));
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(lines.len(), 10);
    for (i, l) in lines.iter().enumerate() {
        let cols: Vec<&str> = l.split(' ').collect();
        assert_eq!(cols.len(), 3);
        assert_eq!(cols[0], (i + 1).to_string());
        cols[2].parse::<f64>().unwrap();
    }
    // All-zero bucket weights leave nothing to score.
    let empty = ok(uhd(&[
        "search",
        "--index",
        s(&idx),
        "--checkpoint",
        s(&ckpt),
        "--query",
        &text,
        "--weights",
        "0",
    ]));
    assert!(stdout(&empty).is_empty());
}

#[test]
fn eval_perfect_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("r.txt");
    let qrels = dir.path().join("q.txt");
    fs::write(&run, "q1 Q0 d1 1 2.0 x\nq1 Q0 d2 2 1.0 x\n").unwrap();
    fs::write(&qrels, "q1 0 d1 1\n").unwrap();
    let out = ok(uhd(&[
        "eval",
        "--run",
        s(&run),
        "--qrels",
        s(&qrels),
        "--metrics",
        "mrr@10",
    ]));
    assert_eq!(stdout(&out), "mrr@10\t1.0000\n");
}

#[test]
fn tune_and_analyze() {
    let f = Fixture::new();
    fs::write(
        f.p("config.json"),
        CONFIG
            .replace(
                r#""layers": [1], "mode": "single""#,
                r#""layers": [1, 2], "mode": "vertical""#,
            )
            .replace(r#""encoder_depth": 1"#, r#""encoder_depth": 2"#),
    )
    .unwrap();
    let ckpt = f.train("v.uhdw");
    let idx = f.index(&ckpt, "v.uhdi");
    let run = f.run(&ckpt, &idx, "v.run");
    let out = ok(uhd(&[
        "tune",
        "--checkpoint",
        s(&ckpt),
        "--run",
        s(&run),
        "--queries",
        &f.corpus("queries.heldout.tsv"),
        "--collection",
        &f.corpus("docs.tsv"),
        "--qrels",
        &f.corpus("qrels.heldout.txt"),
        "--grid",
        "0,1",
        "--oracle",
    ]));
    let text = stdout(&out);
    let first = text.lines().next().unwrap();
    let parts: Vec<&str> = first.split(':').collect();
    assert_eq!(parts.len(), 2, "{text}");
    assert!(parts.iter().all(|p| *p == "0" || *p == "1"), "{text}");
    assert!(text.contains("\noracle_mrr@10\t"));
    assert!(text.contains("\nbucket2_mrr@10\t"));

    let density = ok(uhd(&[
        "analyze",
        "--checkpoint",
        s(&ckpt),
        "--queries",
        &f.corpus("queries.train.tsv"),
        "--density",
    ]));
    let text = stdout(&density);
    assert!(text.starts_with("length,mean_density\n"));
    assert!(text.lines().count() >= 6);

    let dir = f.p("analysis");
    ok(uhd(&[
        "analyze",
        "--checkpoint",
        s(&ckpt),
        "--queries",
        &f.corpus("queries.train.tsv"),
        "--out",
        s(&dir),
        "--min-count",
        "1",
    ]));
    for (file, header) in [
        ("density.csv", "length,mean_density"),
        ("activation.csv", "dim,count"),
        ("interpret.csv", "dim,term,count"),
    ] {
        let body = fs::read_to_string(dir.join(file)).unwrap();
        assert_eq!(body.lines().next(), Some(header));
        assert!(body.lines().count() > 1, "{file}");
    }
}

#[test]
fn index_from_embeddings() {
    let f = Fixture::new();
    let ckpt = f.train("m.uhdw");
    let emb = f.p("docs.uhde");
    let mut w = EmbeddingWriter::create(
        &emb,
        EmbeddingHeader {
            layers: 1,
            hidden: 8,
        },
    )
    .unwrap();
    for i in 0..20u32 {
        let tokens = 1 + (i as usize % 4);
        let values = (0..tokens * 8)
            .map(|j| ((i as usize * 31 + j * 7) % 13) as f32 / 13.0 - 0.4)
            .collect();
        let m = DenseTokenMatrix::new(1, tokens, 8, values).unwrap();
        w.write_record(&format!("e{i}"), &[m]).unwrap();
    }
    w.finish().unwrap();
    let out = ok(uhd(&[
        "index",
        "--checkpoint",
        s(&ckpt),
        "--embeddings",
        s(&emb),
        "--out",
        s(&f.p("e.uhdi")),
    ]));
    assert!(stdout(&out).starts_with("docs\t20\n"));
    let run = ok(uhd(&[
        "search",
        "--index",
        s(&f.p("e.uhdi")),
        "--checkpoint",
        s(&ckpt),
        "--query-embeddings",
        s(&emb),
        "--k",
        "3",
    ]));
    assert_eq!(stdout(&run).lines().count(), 60);
}

#[test]
fn exit_code_matrix() {
    let f = Fixture::new();
    let triples = f.corpus("triples.tsv");
    let train_with = |config: &str| {
        let path = f.p("bad.json");
        fs::write(&path, config).unwrap();
        uhd(&[
            "train",
            "--triples",
            &triples,
            "--config",
            s(&path),
            "--out",
            s(&f.p("x.uhdw")),
        ])
    };

    // Usage errors.
    exits(&uhd(&["train"]), 2);
    exits(&uhd(&["frobnicate"]), 2);
    let o = train_with(&CONFIG.replace(r#""h": 8, "#, ""));
    exits(&o, 2);
    assert!(stderr(&o).contains("`h`"), "{}", stderr(&o));
    let o = train_with(&CONFIG.replace(r#""batch_size": 4"#, r#""batch_size": 1"#));
    exits(&o, 2);
    assert!(stderr(&o).contains("batch_size"), "{}", stderr(&o));
    exits(
        &uhd(&[
            "eval",
            "--run",
            s(&f.p("missing.run")),
            "--qrels",
            &f.corpus("qrels.heldout.txt"),
        ]),
        2,
    );
    exits(
        &uhd(&["eval", "--run", "x", "--qrels", "y", "--metrics", "ndcg@10"]),
        2,
    );

    // Data errors.
    let bad_triples = f.p("bad.tsv");
    fs::write(&bad_triples, "q\tp\tn\nonly two\tcolumns\n").unwrap();
    let o = uhd(&[
        "train",
        "--triples",
        s(&bad_triples),
        "--config",
        s(&f.p("config.json")),
        "--out",
        s(&f.p("x.uhdw")),
    ]);
    exits(&o, 3);
    assert!(stderr(&o).contains("bad.tsv:2"), "{}", stderr(&o));

    let ckpt = f.train("m.uhdw");
    let dup = f.p("dup.tsv");
    fs::write(&dup, "d1\tsome words\nd1\tother words\n").unwrap();
    exits(
        &uhd(&[
            "index",
            "--checkpoint",
            s(&ckpt),
            "--collection",
            s(&dup),
            "--out",
            s(&f.p("d.uhdi")),
        ]),
        3,
    );

    let qrels = f.p("bad.qrels");
    fs::write(&qrels, "q1 0 d1 1\nq2 d2\n").unwrap();
    let run = f.p("r.txt");
    fs::write(&run, "q1 Q0 d1 1 1.0 x\n").unwrap();
    let o = uhd(&["eval", "--run", s(&run), "--qrels", s(&qrels)]);
    exits(&o, 3);
    assert!(stderr(&o).contains("bad.qrels:2"), "{}", stderr(&o));

    // A checkpoint with a different bucket structure than the index.
    let idx = f.index(&ckpt, "m.uhdi");
    fs::write(
        f.p("config.json"),
        CONFIG.replace(r#""n": 256"#, r#""n": 128"#),
    )
    .unwrap();
    let other = f.train("other.uhdw");
    exits(
        &uhd(&[
            "search",
            "--index",
            s(&idx),
            "--checkpoint",
            s(&other),
            "--query",
            "hello",
        ]),
        3,
    );

    let corrupt = f.p("corrupt.uhdi");
    let mut bytes = fs::read(&idx).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&corrupt, bytes).unwrap();
    exits(
        &uhd(&[
            "search",
            "--index",
            s(&corrupt),
            "--checkpoint",
            s(&ckpt),
            "--query",
            "hello",
        ]),
        3,
    );

    // Numeric failure.
    let o = train_with(&CONFIG.replace(r#""lr": 0.01"#, r#""lr": 1e300"#));
    exits(&o, 4);
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
}
