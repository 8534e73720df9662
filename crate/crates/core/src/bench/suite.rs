//! Benchmark suite configuration and loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::corpus::sample_prompts;

/// Where a task's prompts come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prompts {
    /// Sample this many prompts from the task corpus.
    Count(usize),
    List(Vec<String>),
    /// JSON file holding a list of strings.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    pub corpus_path: PathBuf,
    pub prompts: Prompts,
    pub max_new: usize,
}

fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_repetitions() -> usize {
    MIN_REPETITIONS
}

fn default_prompt_len() -> usize {
    32
}

/// Fewest timed repetitions a comparison may use.
pub const MIN_REPETITIONS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub tasks: Vec<TaskConfig>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Timed repetitions per comparison; 0 skips timing.
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Length in bytes of prompts sampled from a corpus.
    #[serde(default = "default_prompt_len")]
    pub prompt_len: usize,
}

/// A task with its corpus and prompts in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedTask {
    pub name: String,
    pub corpus: Vec<u8>,
    pub prompts: Vec<Vec<u32>>,
    pub max_new: usize,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_tokens(bytes: &[u8]) -> Vec<u32> {
    bytes.iter().map(|&b| b as u32).collect()
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperatures.is_empty() || self.seeds.is_empty() {
            return Err(Error::arg("suite needs at least one temperature and one seed"));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::arg(format!("temperature {t} must be finite and non-negative")));
        }
        if self.repetitions != 0 && self.repetitions < MIN_REPETITIONS {
            return Err(Error::arg(format!("repetitions must be 0 or at least {MIN_REPETITIONS}")));
        }
        if let Some(t) = self.tasks.iter().find(|t| t.max_new == 0) {
            return Err(Error::arg(format!("task {} has a zero token budget", t.name)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::arg(format!("suite config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a suite file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8_lossy(&read(path)?).into_owned();
        let mut cfg = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for t in &mut cfg.tasks {
            t.corpus_path = dir.join(&t.corpus_path);
            if let Prompts::File(p) = &mut t.prompts {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every path the suite reads.
    pub fn paths(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        for t in &self.tasks {
            out.push(t.corpus_path.as_path());
            if let Prompts::File(p) = &t.prompts {
                out.push(p.as_path());
            }
        }
        out
    }

    pub fn load_tasks(&self) -> Result<Vec<LoadedTask>> {
        if let Some(p) = self.paths().into_iter().find(|p| !p.is_file()) {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "missing suite input")));
        }
        self.tasks
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let corpus = read(&t.corpus_path)?;
                let prompts: Vec<Vec<u8>> = match &t.prompts {
                    Prompts::Count(n) => sample_prompts(&corpus, *n, self.prompt_len, i as u64)?,
                    Prompts::List(list) => list.iter().map(|s| s.clone().into_bytes()).collect(),
                    Prompts::File(p) => {
                        let list: Vec<String> = serde_json::from_slice(&read(p)?)
                            .map_err(|e| Error::arg(format!("{}: {e}", p.display())))?;
                        list.into_iter().map(String::into_bytes).collect()
                    }
                };
                if prompts.iter().any(|p| p.is_empty()) {
                    return Err(Error::arg(format!("task {} has an empty prompt", t.name)));
                }
                Ok(LoadedTask {
                    name: t.name.clone(),
                    prompts: prompts.iter().map(|p| to_tokens(p)).collect(),
                    corpus,
                    max_new: t.max_new,
                })
            })
            .collect()
    }
}
