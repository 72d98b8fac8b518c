//! Bag-of-words corpus ingestion and held-out splitting.
//!
//! Corpus format: UTF-8 text, one line per document, tokens separated by
//! whitespace. A stopword list (one word per line) is applied before
//! indexing. The vocabulary can be written out as a sidecar file mapping
//! index to token.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct BowCorpus {
    pub vocab: Vec<String>,
    /// Word counts per document, indexed `[doc][word]`.
    pub counts: Vec<Vec<u32>>,
}

impl BowCorpus {
    /// Parse documents from text, dropping stopwords. Vocabulary indices
    /// follow first appearance order, so parsing is deterministic.
    pub fn parse(text: &str, stopwords: &HashSet<String>) -> Result<Self> {
        let mut vocab: Vec<String> = Vec::new();
        let mut index: std::collections::HashMap<String, usize> = Default::default();
        let mut docs: Vec<Vec<usize>> = Vec::new();
        for line in text.lines() {
            let mut doc = Vec::new();
            for token in line.split_whitespace() {
                let token = token.to_lowercase();
                if stopwords.contains(&token) {
                    continue;
                }
                let id = *index.entry(token.clone()).or_insert_with(|| {
                    vocab.push(token);
                    vocab.len() - 1
                });
                doc.push(id);
            }
            docs.push(doc);
        }
        if vocab.is_empty() {
            return Err(Error::Data("corpus has no tokens after stopword removal".into()));
        }
        let v = vocab.len();
        let counts = docs
            .into_iter()
            .map(|doc| {
                let mut row = vec![0u32; v];
                for id in doc {
                    row[id] += 1;
                }
                row
            })
            .collect();
        Ok(BowCorpus { vocab, counts })
    }

    pub fn from_files(data: &Path, stopwords: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(data)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", data.display())))?;
        let stops = match stopwords {
            Some(p) => {
                let s = std::fs::read_to_string(p)
                    .map_err(|e| Error::Data(format!("cannot read {}: {e}", p.display())))?;
                parse_stopwords(&s)
            }
            None => HashSet::new(),
        };
        Self::parse(&text, &stops)
    }

    pub fn num_docs(&self) -> usize {
        self.counts.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Write the vocabulary as `index<TAB>token` lines.
    pub fn write_vocab<W: Write>(&self, mut out: W) -> Result<()> {
        for (i, token) in self.vocab.iter().enumerate() {
            writeln!(out, "{i}\t{token}")?;
        }
        Ok(())
    }

    /// Split a seeded fraction of each document's token instances into a
    /// held-out set; returns (training counts, held-out counts). Documents
    /// hold out floor(fraction * tokens) instances.
    pub fn split_heldout(&self, fraction: f64, rng: &RandomStream) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
        assert!((0.0..1.0).contains(&fraction));
        let v = self.vocab_size();
        let mut train = Vec::with_capacity(self.num_docs());
        let mut held = Vec::with_capacity(self.num_docs());
        for (doc_id, row) in self.counts.iter().enumerate() {
            let mut instances: Vec<usize> = Vec::new();
            for (word, &c) in row.iter().enumerate() {
                instances.extend(std::iter::repeat_n(word, c as usize));
            }
            let mut doc_rng = rng.child(doc_id as u64);
            instances.shuffle(&mut doc_rng);
            let n_held = (fraction * instances.len() as f64).floor() as usize;
            let mut h = vec![0u32; v];
            let mut t = row.clone();
            for &word in &instances[..n_held] {
                h[word] += 1;
                t[word] -= 1;
            }
            train.push(t);
            held.push(h);
        }
        (train, held)
    }
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect()
}
