//! Benchmark driver and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::draft::Drafter;
use crate::error::{Error, Result};
use crate::model::TargetModel;
use crate::verify::{generate, plain_generate, GenerateOptions, Generation};

use super::metrics::{efficiency_ratio, measure_speedup, median, median_u64};
use super::stats::GenStats;
use super::suite::{LoadedTask, SuiteConfig};

const BYTES_PER_GB: f64 = 1e9;

/// Results for one task at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub temperature: f64,
    pub speedup: Option<f64>,
    pub baseline_ns: Option<u64>,
    pub s4c_ns: Option<u64>,
    /// Tokens per round over every seed and prompt.
    pub mean_accepted: f64,
    /// Tokens per round for each seed, in suite order.
    pub seed_mean_accepted: Vec<f64>,
    pub median_mean_accepted: f64,
    pub rounds: usize,
    pub tokens_emitted: usize,
    pub accepted_lengths: BTreeMap<usize, usize>,
    pub target_forward_calls: usize,
    pub draft_forward_calls: usize,
    pub baseline_forward_calls: usize,
    pub peak_extra_bytes: usize,
}

/// Aggregate over every task at one temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub temperature: f64,
    pub speedup: Option<f64>,
    pub mean_accepted: f64,
    pub extra_memory_gb: f64,
    pub efficiency_r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub note: String,
}

impl Environment {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            note: "speedups are wall-clock ratios on this machine only".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<TaskRow>,
    pub overall: Vec<OverallRow>,
    pub config: SuiteConfig,
    pub environment: Environment,
}

fn stopwatch(f: impl FnOnce() -> Result<()>) -> Result<u64> {
    let start = Instant::now();
    f()?;
    Ok((start.elapsed().as_nanos() as u64).max(1))
}

fn run_task<M: TargetModel, D: Drafter>(
    task: &LoadedTask,
    temperature: f64,
    suite: &SuiteConfig,
    target: &M,
    drafter: &D,
    template: &GenerateOptions,
) -> Result<TaskRow> {
    let opts = |seed| GenerateOptions { max_new: task.max_new, temperature, seed, ..template.clone() };
    let mut all = GenStats::default();
    let mut baseline_calls = 0;
    let mut seed_means = Vec::with_capacity(suite.seeds.len());
    for &seed in &suite.seeds {
        let mut per_seed = GenStats::default();
        for (i, prompt) in task.prompts.iter().enumerate() {
            let base = plain_generate(target, prompt, &opts(seed))?;
            let spec = generate(target, drafter, prompt, &opts(seed))?;
            if temperature == 0.0 && base.tokens != spec.tokens {
                return Err(Error::Measurement(format!(
                    "task {} prompt {i} seed {seed}: greedy outputs differ",
                    task.name
                )));
            }
            baseline_calls += base.stats.target_forward_calls;
            per_seed.merge(&spec.stats);
        }
        seed_means.push(if per_seed.rounds == 0 { 0.0 } else { per_seed.mean_accepted()? });
        all.merge(&per_seed);
    }
    let (mut base_ns, mut spec_ns) = (Vec::new(), Vec::new());
    let run_all = |f: &dyn Fn(&[u32], &GenerateOptions) -> Result<Generation>| -> Result<u64> {
        stopwatch(|| {
            for &seed in &suite.seeds {
                for prompt in &task.prompts {
                    f(prompt, &opts(seed))?;
                }
            }
            Ok(())
        })
    };
    for _ in 0..suite.repetitions {
        base_ns.push(run_all(&|p, o| plain_generate(target, p, o))?);
        spec_ns.push(run_all(&|p, o| generate(target, drafter, p, o))?);
    }
    let (baseline_ns, s4c_ns, speedup) = if suite.repetitions == 0 || task.prompts.is_empty() {
        (None, None, None)
    } else {
        let (b, s) = (median_u64(&base_ns)?, median_u64(&spec_ns)?);
        (Some(b), Some(s), Some(measure_speedup(b, s)?))
    };
    Ok(TaskRow {
        task: task.name.clone(),
        temperature,
        speedup,
        baseline_ns,
        s4c_ns,
        mean_accepted: if all.rounds == 0 { 0.0 } else { all.mean_accepted()? },
        median_mean_accepted: median(&seed_means)?,
        seed_mean_accepted: seed_means,
        rounds: all.rounds,
        tokens_emitted: all.tokens_emitted,
        accepted_lengths: all.accepted_lengths,
        target_forward_calls: all.target_forward_calls,
        draft_forward_calls: all.draft_forward_calls,
        baseline_forward_calls: baseline_calls,
        peak_extra_bytes: all.peak_extra_bytes,
    })
}

/// Runs the plain baseline and speculative decoding on every task,
/// temperature and seed. Greedy runs must agree token for token; timing
/// comes after one untimed pass and uses the median repetition.
pub fn run_benchmark<M: TargetModel, D: Drafter>(
    suite: &SuiteConfig,
    tasks: &[LoadedTask],
    target: &M,
    drafter: &D,
    template: &GenerateOptions,
) -> Result<BenchReport> {
    suite.validate()?;
    let mut rows = Vec::new();
    let mut overall = Vec::new();
    for &t in &suite.temperatures {
        let start = rows.len();
        for task in tasks {
            rows.push(run_task(task, t, suite, target, drafter, template)?);
        }
        let batch = &rows[start..];
        if batch.is_empty() {
            continue;
        }
        let rounds: usize = batch.iter().map(|r| r.rounds).sum();
        let tokens: usize = batch.iter().map(|r| r.tokens_emitted).sum();
        let speedup = match batch.iter().map(|r| r.baseline_ns.zip(r.s4c_ns)).collect::<Option<Vec<_>>>() {
            Some(times) => {
                let b: u64 = times.iter().map(|x| x.0).sum();
                let s: u64 = times.iter().map(|x| x.1).sum();
                Some(measure_speedup(b, s)?)
            }
            None => None,
        };
        let gb = batch.iter().map(|r| r.peak_extra_bytes).max().unwrap_or(0) as f64 / BYTES_PER_GB;
        let efficiency_r = match speedup {
            Some(s) if gb > 0.0 => Some(efficiency_ratio(s, gb)?),
            _ => None,
        };
        overall.push(OverallRow {
            temperature: t,
            speedup,
            mean_accepted: if rounds == 0 { 0.0 } else { tokens as f64 / rounds as f64 },
            extra_memory_gb: gb,
            efficiency_r,
        });
    }
    Ok(BenchReport { rows, overall, config: suite.clone(), environment: Environment::current() })
}

/// Rounds to six significant digits.
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float")
}

fn write_value(v: &Value, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Value::Number(n) => match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => write!(out, "{i}").unwrap(),
            (_, Some(u), _) => write!(out, "{u}").unwrap(),
            (_, _, Some(f)) if f.is_finite() => {
                let r = sig6(f);
                if r.fract() == 0.0 && r.abs() < 1e15 {
                    write!(out, "{r:.1}").unwrap()
                } else {
                    write!(out, "{r}").unwrap()
                }
            }
            _ => out.push_str("null"),
        },
        Value::Array(items) if !items.is_empty() => {
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Value::Object(map) if !map.is_empty() => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push_str("{\n");
            for (i, (k, item)) in sorted.iter().enumerate() {
                write!(out, "{}{}: ", pad(indent + 1), Value::String((*k).clone())).unwrap();
                write_value(item, indent + 1, out);
                out.push_str(if i + 1 < sorted.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Pretty JSON with sorted keys and floats at six significant digits.
pub fn canonical_json(v: &Value) -> String {
    let mut out = String::new();
    write_value(v, 0, &mut out);
    out.push('\n');
    out
}

fn fmt_temp(t: f64) -> String {
    format!("{}", sig6(t))
}

fn fmt_speedup(s: Option<f64>) -> String {
    s.map_or_else(|| "n/a".into(), |s| format!("{s:.2}x"))
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("report serialises"))
    }

    /// Copy with every wall-clock derived field cleared.
    pub fn without_timing(&self) -> BenchReport {
        let mut r = self.clone();
        for row in &mut r.rows {
            row.speedup = None;
            row.baseline_ns = None;
            row.s4c_ns = None;
        }
        for o in &mut r.overall {
            o.speedup = None;
            o.efficiency_r = None;
        }
        r
    }

    fn task_names(&self) -> Vec<&str> {
        self.config.tasks.iter().map(|t| t.name.as_str()).collect()
    }

    /// Speedup table with one row per temperature, then the efficiency table.
    pub fn to_markdown(&self) -> String {
        let names = self.task_names();
        let mut header = vec!["Method".to_string()];
        header.extend(names.iter().map(|n| n.to_string()));
        header.push("Mean Accepted Tokens".into());
        header.push("Overall".into());
        let mut table = vec![header];
        for o in &self.overall {
            let mut line = vec![format!("S4C (T={})", fmt_temp(o.temperature))];
            for n in &names {
                let row = self.rows.iter().find(|r| r.task == *n && r.temperature == o.temperature);
                line.push(fmt_speedup(row.and_then(|r| r.speedup)));
            }
            line.push(format!("{:.2}", o.mean_accepted));
            line.push(fmt_speedup(o.speedup));
            table.push(line);
        }
        let mut eff = vec![vec!["Method".into(), "Speedup".into(), "Extra Memory (GB)".into(), "r".into()]];
        for o in &self.overall {
            eff.push(vec![
                format!("S4C (T={})", fmt_temp(o.temperature)),
                fmt_speedup(o.speedup),
                format!("{:.6}", o.extra_memory_gb),
                o.efficiency_r.map_or_else(|| "n/a".into(), |r| format!("{r:.4}")),
            ]);
        }
        let mut out = render_table(&table);
        out.push('\n');
        out.push_str(&render_table(&eff));
        out
    }
}

/// Markdown table with columns padded to a common width.
pub fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0).max(3)).collect();
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        out.push_str(&line((0..cols).map(|c| format!("{:<w$}", r.get(c).map_or("", String::as_str), w = width[c])).collect()));
        if i == 0 {
            out.push_str(&line(width.iter().map(|w| "-".repeat(*w)).collect()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::suite::{Prompts, TaskConfig};
    use crate::model::TabularModel;

    fn suite(temps: Vec<f64>, reps: usize) -> SuiteConfig {
        SuiteConfig {
            tasks: vec![TaskConfig { name: "loop".into(), corpus_path: "unused".into(), prompts: Prompts::Count(2), max_new: 70 }],
            temperatures: temps,
            seeds: vec![0, 1],
            repetitions: reps,
            prompt_len: 4,
        }
    }

    fn task() -> LoadedTask {
        LoadedTask { name: "loop".into(), corpus: Vec::new(), prompts: vec![vec![1, 2, 3], vec![7]], max_new: 70 }
    }

    #[test]
    fn identical_draft_accepts_full_depth() {
        let m = TabularModel::chain(16, |t| (t * 5 + 3) % 16).unwrap();
        let report = run_benchmark(&suite(vec![0.0], 5), &[task()], &m, &m, &GenerateOptions::default()).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.mean_accepted, 7.0);
        assert_eq!(row.accepted_lengths, BTreeMap::from([(6, 40)]));
        assert_eq!(row.target_forward_calls, row.rounds + 4);
        assert!(row.speedup.unwrap() > 0.0);
        assert_eq!(report.overall.len(), 1);
    }

    #[test]
    fn sweep_yields_one_row_per_task_and_temperature() {
        let m = TabularModel::random(8, &mut crate::rng::Rng::new(3), 0.2).unwrap();
        let d = TabularModel::random(8, &mut crate::rng::Rng::new(4), 0.2).unwrap();
        let r = run_benchmark(&suite(vec![0.0, 0.5, 1.0], 0), &[task(), task()], &m, &d, &GenerateOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.overall.len(), 3);
        assert!(r.rows.iter().all(|row| row.speedup.is_none() && row.mean_accepted >= 1.0));
        for row in &r.rows {
            assert_eq!(row.accepted_lengths.values().sum::<usize>(), row.rounds);
            assert!(row.accepted_lengths.keys().all(|&k| k <= 6));
        }
    }

    #[test]
    fn json_is_sorted_rounded_and_stable() {
        let v = serde_json::json!({"b": 1.23456789, "a": [2, 0.5, null], "c": {"z": 1e-7, "y": 3.0}});
        let text = canonical_json(&v);
        assert_eq!(text, "{\n  \"a\": [\n    2,\n    0.5,\n    null\n  ],\n  \"b\": 1.23457,\n  \"c\": {\n    \"y\": 3.0,\n    \"z\": 0.0000001\n  }\n}\n");
        let m = TabularModel::chain(8, |t| (t + 1) % 8).unwrap();
        let r = run_benchmark(&suite(vec![0.0], 0), &[task()], &m, &m, &GenerateOptions::default()).unwrap();
        assert_eq!(r.to_json(), r.clone().to_json());
    }

    #[test]
    fn markdown_layout() {
        let mut r = BenchReport { rows: vec![], overall: vec![], config: suite(vec![0.0], 0), environment: Environment::current() };
        r.config.tasks.clear();
        let md = r.to_markdown();
        assert!(md.starts_with("| Method | Mean Accepted Tokens | Overall |\n"));
        assert_eq!(md.lines().count(), 5);
        r.config = suite(vec![0.0], 5);
        r.overall.push(OverallRow { temperature: 0.0, speedup: Some(2.26), mean_accepted: 3.86, extra_memory_gb: 9.26, efficiency_r: Some(efficiency_ratio(2.26, 9.26).unwrap()) });
        r.rows.push(TaskRow {
            task: "loop".into(),
            temperature: 0.0,
            speedup: Some(2.5),
            baseline_ns: Some(5),
            s4c_ns: Some(2),
            mean_accepted: 3.86,
            seed_mean_accepted: vec![3.86],
            median_mean_accepted: 3.86,
            rounds: 1,
            tokens_emitted: 4,
            accepted_lengths: BTreeMap::new(),
            target_forward_calls: 2,
            draft_forward_calls: 1,
            baseline_forward_calls: 4,
            peak_extra_bytes: 1,
        });
        let md = r.to_markdown();
        assert!(md.contains("| S4C (T=0) | 2.50x | 3.86                 | 2.26x   |"), "{md}");
        assert!(md.contains("| 0.2441 |"), "{md}");
    }
}
