//! Synthetic character translation tasks and dataset file I/O.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// A source/target letter-sequence pair. Both tasks produce equal lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub source: String,
    pub target: String,
}

impl Example {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        let e = Example { source: source.into(), target: target.into() };
        e.validate().expect("invalid example");
        e
    }

    fn validate(&self) -> Result<(), String> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err("empty sequence".into());
        }
        for c in self.source.chars().chain(self.target.chars()) {
            if !c.is_ascii_lowercase() {
                return Err(format!("non-letter character {c:?}"));
            }
        }
        Ok(())
    }

    pub fn source_ids(&self) -> Vec<usize> {
        crate::insdel::Vocab::encode_word(&self.source)
    }

    pub fn target_ids(&self) -> Vec<usize> {
        crate::insdel::Vocab::encode_word(&self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    AlphaShift,
    Caesar,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskId::AlphaShift => write!(f, "alpha-shift"),
            TaskId::Caesar => write!(f, "caesar"),
        }
    }
}

impl std::str::FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "alpha-shift" => Ok(TaskId::AlphaShift),
            "caesar" => Ok(TaskId::Caesar),
            other => Err(format!("unknown task {other:?} (expected alpha-shift or caesar)")),
        }
    }
}

/// Generation parameters. Lengths are drawn from `[min_n, max_n)` — the
/// upper bound is exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub task: TaskId,
    pub min_n: usize,
    pub max_n: usize,
    pub shift: usize,
    pub count: usize,
    pub seed: u64,
}

impl TaskConfig {
    /// Task defaults: alpha-shift draws n in [3,10) with shift 10 and the
    /// 1000-example training regime; caesar draws n in [3,25) with shift 25
    /// and 100k examples.
    pub fn defaults(task: TaskId) -> Self {
        match task {
            TaskId::AlphaShift => {
                TaskConfig { task, min_n: 3, max_n: 10, shift: 10, count: 1000, seed: 1 }
            }
            TaskId::Caesar => {
                TaskConfig { task, min_n: 3, max_n: 25, shift: 25, count: 100_000, seed: 1 }
            }
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.min_n < 3 || self.min_n >= self.max_n {
            return Err(DatasetError::Config(format!(
                "need 3 <= min_n < max_n, got {}..{}",
                self.min_n, self.max_n
            )));
        }
        if self.task == TaskId::AlphaShift {
            let longest = self.max_n - 1;
            if 26 < longest + self.shift {
                return Err(DatasetError::Config(format!(
                    "alpha-shift needs 26 - n - shift >= 0 for n up to {}, shift {}",
                    longest, self.shift
                )));
            }
        }
        Ok(())
    }

    /// Longest canvas a training step can produce for this task: source n,
    /// up to `2n - 1` target tokens after one insertion phase, and three
    /// structural tokens.
    pub fn max_canvas_len(&self) -> usize {
        let n = self.max_n - 1;
        3 * n + 2
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset config error: {0}")]
    Config(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generate examples for the configured task.
pub fn generate(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Example>, DatasetError> {
    config.validate()?;
    let gen = match config.task {
        TaskId::AlphaShift => gen_alpha_shift_one,
        TaskId::Caesar => gen_caesar_one,
    };
    Ok((0..config.count).map(|_| gen(config, rng)).collect())
}

/// One consecutive-alphabet pair: the source is a run of consecutive
/// letters, the target shifts every letter forward by `shift` with no
/// wraparound, so the two alphabets never overlap.
fn gen_alpha_shift_one(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Example {
    let n = rng.gen_range(config.min_n..config.max_n);
    let max_start = 26 - n - config.shift;
    let start = rng.gen_range(0..=max_start);
    let source: String = (0..n).map(|i| (b'a' + (start + i) as u8) as char).collect();
    let target: String =
        (0..n).map(|i| (b'a' + (start + i + config.shift) as u8) as char).collect();
    Example { source, target }
}

/// One cipher pair: i.i.d. uniform source letters, each target letter the
/// source letter shifted left by one with wraparound (shift 25 mod 26).
fn gen_caesar_one(config: &TaskConfig, rng: &mut ChaCha8Rng) -> Example {
    let n = rng.gen_range(config.min_n..config.max_n);
    let source: Vec<u8> = (0..n).map(|_| rng.gen_range(0..26u8)).collect();
    let target: String =
        source.iter().map(|&c| (b'a' + (c + config.shift as u8) % 26) as char).collect();
    let source: String = source.iter().map(|&c| (b'a' + c) as char).collect();
    Example { source, target }
}

/// One example per line, `source<TAB>target`, newline-terminated UTF-8.
pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&e.source);
        out.push('\t');
        out.push_str(&e.target);
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<Example>, DatasetError> {
    let text = fs::read_to_string(path)?;
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split('\t');
        let source = parts.next().unwrap_or_default();
        let (target, extra) = (parts.next(), parts.next());
        let target = target.ok_or_else(|| DatasetError::Parse {
            line: i + 1,
            message: "missing tab separator".into(),
        })?;
        if extra.is_some() {
            return Err(DatasetError::Parse { line: i + 1, message: "more than one tab".into() });
        }
        let example = Example { source: source.into(), target: target.into() };
        example.validate().map_err(|message| DatasetError::Parse { line: i + 1, message })?;
        examples.push(example);
    }
    Ok(examples)
}
