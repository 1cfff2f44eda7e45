//! Plain-text `key=value` run configuration: parse with defaults, echo
//! canonically. The echoed form round-trips byte-identically and is the
//! config text embedded in checkpoints.

use crate::tasks::{TaskConfig, TaskId};
use crate::training::TrainConfig;
use crate::transformer::ModelConfig;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskConfig::defaults(TaskId::AlphaShift),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("line {line}: expected key=value, got {text:?}")]
    Malformed { line: usize, text: String },
}

impl RunConfig {
    /// Parse `key=value` lines over the defaults. Blank lines and lines
    /// starting with `#` are ignored. An unknown key is an error. The task
    /// id is applied first so task-specific defaults (lengths, shift,
    /// corpus size) follow it.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = Self::entries(text)?;
        let mut config = RunConfig::default();
        for (line, key, value) in &entries {
            if key == "task.id" {
                let id: TaskId = value.parse().map_err(|message| ConfigError::BadValue {
                    line: *line,
                    key: key.clone(),
                    message,
                })?;
                config.task = TaskConfig::defaults(id);
            }
        }
        for (line, key, value) in entries {
            config.apply(line, &key, &value)?;
        }
        Ok(config)
    }

    fn entries(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
        let mut out = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed { line: i + 1, text: raw.to_string() });
            };
            out.push((i + 1, key.trim().to_string(), value.trim().to_string()));
        }
        Ok(out)
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(
            line: usize,
            key: &str,
            value: &str,
        ) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                line,
                key: key.to_string(),
                message: e.to_string(),
            })
        }
        match key {
            "task.id" => {} // applied in the first pass
            "task.min_n" => self.task.min_n = parse(line, key, value)?,
            "task.max_n" => self.task.max_n = parse(line, key, value)?,
            "task.shift" => self.task.shift = parse(line, key, value)?,
            "task.count" => self.task.count = parse(line, key, value)?,
            "task.seed" => self.task.seed = parse(line, key, value)?,
            "model.d_model" => self.model.d_model = parse(line, key, value)?,
            "model.n_heads" => self.model.n_heads = parse(line, key, value)?,
            "model.n_layers" => self.model.n_layers = parse(line, key, value)?,
            "model.d_ffn" => self.model.d_ffn = parse(line, key, value)?,
            "model.max_positions" => self.model.max_positions = parse(line, key, value)?,
            "model.dropout" => self.model.dropout_rate = parse(line, key, value)?,
            "train.steps" => self.train.steps = parse(line, key, value)?,
            "train.batch_size" => self.train.batch_size = parse(line, key, value)?,
            "train.p_adv" => self.train.p_adv = parse(line, key, value)?,
            "train.tau" => self.train.tau = parse(line, key, value)?,
            "train.uniform_weights" => self.train.uniform_weights = parse(line, key, value)?,
            "train.del_loss_weight" => self.train.del_loss_weight = parse(line, key, value)?,
            "train.lr" => self.train.adam.lr = parse(line, key, value)?,
            "train.beta1" => self.train.adam.beta1 = parse(line, key, value)?,
            "train.beta2" => self.train.adam.beta2 = parse(line, key, value)?,
            "train.epsilon" => self.train.adam.epsilon = parse(line, key, value)?,
            "train.seed" => self.train.seed = parse(line, key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(line, key, value)?,
            "train.eval_every" => self.train.eval_every = parse(line, key, value)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    /// Canonical echo: every key the run uses, in fixed order, one per
    /// line. Parsing the echo reproduces the config exactly.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("task.id", self.task.task.to_string());
        kv("task.min_n", self.task.min_n.to_string());
        kv("task.max_n", self.task.max_n.to_string());
        kv("task.shift", self.task.shift.to_string());
        kv("task.count", self.task.count.to_string());
        kv("task.seed", self.task.seed.to_string());
        kv("model.d_model", self.model.d_model.to_string());
        kv("model.n_heads", self.model.n_heads.to_string());
        kv("model.n_layers", self.model.n_layers.to_string());
        kv("model.d_ffn", self.model.d_ffn.to_string());
        kv("model.max_positions", self.model.max_positions.to_string());
        kv("model.dropout", self.model.dropout_rate.to_string());
        kv("train.steps", self.train.steps.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.p_adv", self.train.p_adv.to_string());
        kv("train.tau", self.train.tau.to_string());
        kv("train.uniform_weights", self.train.uniform_weights.to_string());
        kv("train.del_loss_weight", self.train.del_loss_weight.to_string());
        kv("train.lr", self.train.adam.lr.to_string());
        kv("train.beta1", self.train.adam.beta1.to_string());
        kv("train.beta2", self.train.adam.beta2.to_string());
        kv("train.epsilon", self.train.adam.epsilon.to_string());
        kv("train.seed", self.train.seed.to_string());
        kv("train.checkpoint_every", self.train.checkpoint_every.to_string());
        kv("train.eval_every", self.train.eval_every.to_string());
        s
    }

    /// Resolve `model.max_positions = 0` ("derive from data") against the
    /// longest canvas a training step can produce for the given examples.
    pub fn resolve_max_positions(&mut self, examples: &[crate::tasks::Example]) {
        if self.model.max_positions == 0 {
            let longest =
                examples.iter().map(|e| e.target.len()).max().unwrap_or(1);
            self.model.max_positions = 3 * longest + 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_the_echo() {
        let config = RunConfig::default();
        let echo = config.render();
        let parsed = RunConfig::parse(&echo).unwrap();
        assert_eq!(parsed, config);
        assert_eq!(parsed.render(), echo);
    }

    #[test]
    fn task_id_switches_task_defaults() {
        let config = RunConfig::parse("task.id=caesar\n").unwrap();
        assert_eq!(config.task.task, TaskId::Caesar);
        assert_eq!(config.task.max_n, 25);
        assert_eq!(config.task.shift, 25);
        assert_eq!(config.task.count, 100_000);
    }

    #[test]
    fn overrides_apply_over_defaults() {
        let text = "train.steps=500\nmodel.d_model=64\ntrain.lr=0.001\n# comment\n\n";
        let config = RunConfig::parse(text).unwrap();
        assert_eq!(config.train.steps, 500);
        assert_eq!(config.model.d_model, 64);
        assert!((config.train.adam.lr - 0.001).abs() < 1e-9);
        assert_eq!(config.train.batch_size, 32);
    }

    #[test]
    fn unknown_key_reports_key_and_line() {
        let err = RunConfig::parse("train.steps=5\ntrain.bogus=1\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 2") && text.contains("train.bogus"), "{text}");
    }

    #[test]
    fn bad_value_reports_key_and_line() {
        let err = RunConfig::parse("train.steps=abc\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("line 1") && text.contains("train.steps"), "{text}");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let err = RunConfig::parse("just words\n").unwrap_err();
        assert!(err.to_string().contains("key=value"));
    }

    #[test]
    fn max_positions_resolves_from_data() {
        let mut config = RunConfig::default();
        config.model.max_positions = 0;
        let examples = vec![
            crate::tasks::Example::new("abc", "klm"),
            crate::tasks::Example::new("abcde", "klmno"),
        ];
        config.resolve_max_positions(&examples);
        assert_eq!(config.model.max_positions, 17);
    }
}
