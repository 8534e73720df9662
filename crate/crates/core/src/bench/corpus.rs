//! Synthetic byte-level task corpora.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Repetitive,
    Natural,
    Numeric,
    Qa,
    Shuffled,
    Retrieval,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Repetitive,
        TaskKind::Natural,
        TaskKind::Numeric,
        TaskKind::Qa,
        TaskKind::Shuffled,
        TaskKind::Retrieval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Repetitive => "repetitive",
            TaskKind::Natural => "natural",
            TaskKind::Numeric => "numeric",
            TaskKind::Qa => "qa",
            TaskKind::Shuffled => "shuffled",
            TaskKind::Retrieval => "retrieval",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::arg(format!("unknown task {name}")))
    }
}

const NOUNS: [&str; 16] = [
    "cat", "dog", "river", "house", "garden", "teacher", "window", "city", "bird", "road", "child", "market", "boat",
    "tree", "letter", "song",
];
const VERBS: [&str; 12] =
    ["sees", "finds", "likes", "opens", "follows", "paints", "watches", "carries", "builds", "hears", "keeps", "moves"];
const ADJS: [&str; 10] = ["small", "green", "quiet", "old", "bright", "cold", "happy", "long", "dark", "warm"];
const COLORS: [&str; 6] = ["red", "blue", "green", "white", "black", "yellow"];

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.below(words.len())]
}

fn sentence(rng: &mut Rng, out: &mut String) {
    let _ = write!(out, "the {} {} {} the {} {}", pick(rng, &ADJS), pick(rng, &NOUNS), pick(rng, &VERBS), pick(rng, &ADJS), pick(rng, &NOUNS));
    if rng.below(3) == 0 {
        let _ = write!(out, " near the {}", pick(rng, &NOUNS));
    }
    out.push_str(". ");
}

fn chunk(kind: TaskKind, rng: &mut Rng, motifs: &[String], out: &mut String) {
    match kind {
        TaskKind::Repetitive => {
            let m = &motifs[rng.below(motifs.len())];
            for _ in 0..1 + rng.below(3) {
                out.push_str(m);
            }
        }
        TaskKind::Natural => sentence(rng, out),
        TaskKind::Numeric => {
            let (a, b) = (rng.below(100), rng.below(100));
            let _ = write!(out, "{a} + {b} = {}; ", a + b);
        }
        TaskKind::Qa => {
            let (n, c) = (pick(rng, &NOUNS), pick(rng, &COLORS));
            let _ = write!(out, "Q: what color is the {n}? A: the {n} is {c}.\n");
        }
        TaskKind::Shuffled => {
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..6 {
                words.push(match rng.below(3) {
                    0 => pick(rng, &NOUNS),
                    1 => pick(rng, &VERBS),
                    _ => pick(rng, &ADJS),
                });
            }
            out.push_str(&words.join(" "));
            out.push_str(". ");
        }
        TaskKind::Retrieval => {
            let pairs: Vec<(usize, usize)> = (0..3).map(|_| (rng.below(1000), rng.below(1000))).collect();
            for (k, v) in &pairs {
                let _ = write!(out, "key {k:03} holds {v:03}. ");
            }
            let (k, v) = pairs[rng.below(pairs.len())];
            let _ = write!(out, "lookup {k:03} gives {v:03}.\n");
        }
    }
}

/// Exactly `len` bytes of printable text for one task.
pub fn task_corpus(kind: TaskKind, len: usize, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed).fork(kind as u64);
    let motifs: Vec<String> = (0..4)
        .map(|_| {
            let mut s = String::new();
            sentence(&mut rng, &mut s);
            s
        })
        .collect();
    let mut out = String::with_capacity(len + 128);
    while out.len() < len {
        chunk(kind, &mut rng, &motifs, &mut out);
    }
    out.truncate(len);
    out.into_bytes()
}

/// `len` bytes interleaving every task in blocks.
pub fn mixed_corpus(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = Rng::new(seed).fork(u64::MAX);
    let mut parts: Vec<(Vec<u8>, usize)> = TaskKind::ALL.iter().map(|&k| (task_corpus(k, len, seed), 0)).collect();
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let (bytes, pos) = &mut parts[rng.below(TaskKind::ALL.len())];
        let take = (256 + rng.below(256)).min(len - out.len());
        out.extend_from_slice(&bytes[*pos..*pos + take]);
        *pos += take;
    }
    out
}

/// `count` prompts of `len` bytes drawn from `corpus`, each starting after a
/// space or newline when one is near.
pub fn sample_prompts(corpus: &[u8], count: usize, len: usize, seed: u64) -> Result<Vec<Vec<u8>>> {
    if len == 0 || corpus.len() < len + 1 {
        return Err(Error::arg(format!("corpus of {} bytes cannot supply {len}-byte prompts", corpus.len())));
    }
    let rng = Rng::new(seed);
    Ok((0..count)
        .map(|i| {
            let mut r = rng.fork(i as u64);
            let limit = corpus.len() - len;
            let mut start = r.below(limit + 1);
            if let Some(off) = corpus[start..limit.min(start + 16)].iter().position(|&b| b == b' ' || b == b'\n') {
                start += off + 1;
            }
            corpus[start..start + len].to_vec()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_sized_printable_and_seeded() {
        for kind in TaskKind::ALL {
            let a = task_corpus(kind, 5000, 1);
            assert_eq!(a.len(), 5000);
            assert!(a.iter().all(|&b| b == b'\n' || (32..127).contains(&b)));
            assert_eq!(a, task_corpus(kind, 5000, 1));
            assert_ne!(a, task_corpus(kind, 5000, 2));
            assert_eq!(TaskKind::parse(kind.name()).unwrap(), kind);
        }
        assert_eq!(mixed_corpus(10_000, 3).len(), 10_000);
    }

    #[test]
    fn repetitive_text_compresses_better_than_shuffled() {
        let distinct = |b: &[u8]| b.windows(8).collect::<std::collections::HashSet<_>>().len();
        let rep = task_corpus(TaskKind::Repetitive, 20_000, 0);
        let shuf = task_corpus(TaskKind::Shuffled, 20_000, 0);
        assert!(distinct(&rep) * 4 < distinct(&shuf));
    }

    #[test]
    fn prompts_have_requested_shape() {
        let c = task_corpus(TaskKind::Natural, 4000, 0);
        let p = sample_prompts(&c, 10, 24, 5).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|x| x.len() == 24));
        assert_eq!(p, sample_prompts(&c, 10, 24, 5).unwrap());
        assert!(sample_prompts(&c[..10], 1, 24, 0).is_err());
    }
}
