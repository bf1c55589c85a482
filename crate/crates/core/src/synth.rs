//! Seeded generator for a topic-separable toy retrieval corpus.
//!
//! Each topic owns a disjoint set of words; a shared pool of filler words is
//! mixed into the texts. By default documents are about half topic words and
//! queries consist of topic words only. Training queries of a topic jointly
//! cover all of its words. Every document of a topic is relevant to every
//! query of that topic.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::trainer::TrainingTriple;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub topics: usize,
    pub words_per_topic: usize,
    pub filler_words: usize,
    pub docs_per_topic: usize,
    pub doc_len: (usize, usize),
    pub train_queries: usize,
    pub heldout_queries: usize,
    pub query_len: (usize, usize),
    /// Share of each document's words drawn from its topic; the rest are
    /// filler.
    pub doc_topic_share: f64,
    /// Share of each query's words drawn from its topic.
    pub query_topic_share: f64,
    /// Positive documents paired with each training query.
    pub positives_per_query: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            topics: 20,
            words_per_topic: 12,
            filler_words: 60,
            docs_per_topic: 25,
            doc_len: (12, 20),
            train_queries: 200,
            heldout_queries: 50,
            query_len: (1, 8),
            doc_topic_share: 0.5,
            query_topic_share: 1.0,
            positives_per_query: 5,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthText {
    pub id: String,
    pub topic: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub docs: Vec<SynthText>,
    pub train_queries: Vec<SynthText>,
    pub heldout_queries: Vec<SynthText>,
    pub triples: Vec<TrainingTriple>,
    pub train_qrels: Qrels,
    pub heldout_qrels: Qrels,
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
    "tr", "pl",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];

fn words(rng: &mut ChaCha8Rng, count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    ONSETS.choose(rng).unwrap(),
                    VOWELS.choose(rng).unwrap()
                )
            })
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Draws topic words without replacement, reshuffling when exhausted, so a
/// topic's training queries cover its whole vocabulary.
struct Deck {
    order: Vec<usize>,
    next: usize,
}

impl Deck {
    fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            next: len,
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

/// Topic words in a text of `len` words; at least one.
fn topical(len: usize, share: f64) -> usize {
    ((len as f64 * share).ceil() as usize).clamp(1, len)
}

fn compose(
    rng: &mut ChaCha8Rng,
    len: usize,
    topical: usize,
    topic: &[String],
    filler: &[String],
    mut deck: Option<&mut Deck>,
) -> String {
    let mut toks: Vec<&str> = (0..len)
        .map(|i| {
            if i >= topical {
                filler.choose(rng).unwrap().as_str()
            } else if let Some(d) = deck.as_deref_mut() {
                topic[d.draw(rng)].as_str()
            } else {
                topic.choose(rng).unwrap().as_str()
            }
        })
        .collect();
    toks.shuffle(rng);
    toks.join(" ")
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCorpus> {
    if config.topics < 2 || config.words_per_topic == 0 || config.docs_per_topic == 0 {
        return Err(Error::invalid(
            "synthetic corpus needs ≥ 2 topics with words and documents",
        ));
    }
    if config.doc_len.0 == 0 || config.doc_len.0 > config.doc_len.1 {
        return Err(Error::invalid("bad document length range"));
    }
    if config.query_len.0 == 0 || config.query_len.0 > config.query_len.1 {
        return Err(Error::invalid("bad query length range"));
    }
    if config.filler_words == 0 {
        return Err(Error::invalid("filler vocabulary must be nonempty"));
    }
    for share in [config.doc_topic_share, config.query_topic_share] {
        if !(share > 0.0 && share <= 1.0) {
            return Err(Error::invalid("topic shares must lie in (0, 1]"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut taken = HashSet::new();
    let topic_words: Vec<Vec<String>> = (0..config.topics)
        .map(|_| words(&mut rng, config.words_per_topic, &mut taken))
        .collect();
    let filler = words(&mut rng, config.filler_words, &mut taken);

    let mut docs = Vec::new();
    for (t, tw) in topic_words.iter().enumerate() {
        for i in 0..config.docs_per_topic {
            let len = rng.gen_range(config.doc_len.0..=config.doc_len.1);
            docs.push(SynthText {
                id: format!("D{t:02}{i:03}"),
                topic: t,
                text: compose(
                    &mut rng,
                    len,
                    topical(len, config.doc_topic_share),
                    tw,
                    &filler,
                    None,
                ),
            });
        }
    }
    let make_queries = |prefix: &str,
                        count: usize,
                        rng: &mut ChaCha8Rng,
                        mut decks: Option<Vec<Deck>>|
     -> Vec<SynthText> {
        (0..count)
            .map(|i| {
                let topic = i % config.topics;
                let len = rng.gen_range(config.query_len.0..=config.query_len.1);
                let deck = decks.as_mut().map(|d| &mut d[topic]);
                SynthText {
                    id: format!("{prefix}{i:04}"),
                    topic,
                    text: compose(
                        rng,
                        len,
                        topical(len, config.query_topic_share),
                        &topic_words[topic],
                        &filler,
                        deck,
                    ),
                }
            })
            .collect()
    };
    let decks = (0..config.topics)
        .map(|_| Deck::new(config.words_per_topic))
        .collect();
    let train_queries = make_queries("Q", config.train_queries, &mut rng, Some(decks));
    let heldout_queries = make_queries("H", config.heldout_queries, &mut rng, None);

    let by_topic: Vec<Vec<&SynthText>> = (0..config.topics)
        .map(|t| docs.iter().filter(|d| d.topic == t).collect())
        .collect();
    let mut triples = Vec::new();
    for q in &train_queries {
        let pos: Vec<&&SynthText> = by_topic[q.topic]
            .choose_multiple(&mut rng, config.positives_per_query)
            .collect();
        for p in pos {
            let other = (q.topic + rng.gen_range(1..config.topics)) % config.topics;
            let neg = by_topic[other].choose(&mut rng).unwrap();
            triples.push(TrainingTriple {
                query: q.text.clone(),
                positive: p.text.clone(),
                negative: neg.text.clone(),
                line: triples.len() + 1,
            });
        }
    }
    triples.shuffle(&mut rng);
    for (i, t) in triples.iter_mut().enumerate() {
        t.line = i + 1;
    }
    let qrels_for = |qs: &[SynthText]| {
        let mut qrels = Qrels::new();
        for q in qs {
            for d in &by_topic[q.topic] {
                qrels.insert(q.id.clone(), d.id.clone());
            }
        }
        qrels
    };
    let train_qrels = qrels_for(&train_queries);
    let heldout_qrels = qrels_for(&heldout_queries);
    Ok(SyntheticCorpus {
        docs,
        train_queries,
        heldout_queries,
        triples,
        train_qrels,
        heldout_qrels,
    })
}

fn write_texts(path: &Path, items: &[SynthText]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for t in items {
        writeln!(f, "{}\t{}", t.id, t.text)?;
    }
    f.flush()?;
    Ok(())
}

impl SyntheticCorpus {
    /// File names written by [`SyntheticCorpus::write_dir`].
    pub const FILES: [&'static str; 7] = [
        "docs.tsv",
        "queries.train.tsv",
        "queries.heldout.tsv",
        "triples.tsv",
        "qrels.train.txt",
        "qrels.heldout.txt",
        "topics.tsv",
    ];

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_texts(&dir.join("docs.tsv"), &self.docs)?;
        write_texts(&dir.join("queries.train.tsv"), &self.train_queries)?;
        write_texts(&dir.join("queries.heldout.tsv"), &self.heldout_queries)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("triples.tsv"))?);
        for t in &self.triples {
            writeln!(f, "{}\t{}\t{}", t.query, t.positive, t.negative)?;
        }
        f.flush()?;
        self.train_qrels
            .write(fs::File::create(dir.join("qrels.train.txt"))?)?;
        self.heldout_qrels
            .write(fs::File::create(dir.join("qrels.heldout.txt"))?)?;
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("topics.tsv"))?);
        for t in self
            .docs
            .iter()
            .chain(&self.train_queries)
            .chain(&self.heldout_queries)
        {
            writeln!(f, "{}\t{}", t.id, t.topic)?;
        }
        f.flush()?;
        Ok(())
    }
}
