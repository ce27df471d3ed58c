//! Flat `key = value` run configuration.
//!
//! Values are layered: built-in defaults, then the config file, then
//! `DEEPEMBED_<KEY>` environment variables, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::CliError;

pub const ENV_PREFIX: &str = "DEEPEMBED_";

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
    pub commands: &'static [&'static str],
}

const GEN: &str = "gen-synthetic";
const VOCAB: &str = "build-vocab";
const INDEX: &str = "build-index";
const QUERY: &str = "query";
const EVAL: &str = "evaluate";
const FIT: &str = "fit-curves";
const MEM: &str = "memstats";
const SAMPLE: &str = "sample-distances";

const ALL: &[&str] = &[GEN, VOCAB, INDEX, QUERY, EVAL, FIT, MEM, SAMPLE];
const SEARCH: &[&str] = &[QUERY, EVAL];
const MODELS: &[&str] = &[INDEX, QUERY, EVAL, SAMPLE];

pub const KEYS: &[Key] = &[
    Key { name: "threads", default: "0", help: "Worker threads (0 = all cores)", commands: ALL },
    // Paths.
    Key { name: "data", default: "", help: "Dataset file", commands: &[VOCAB, INDEX, SAMPLE] },
    Key { name: "queries", default: "", help: "Dataset holding the query images", commands: SEARCH },
    Key { name: "truth", default: "", help: "Ground-truth file", commands: &[GEN, EVAL, SAMPLE] },
    Key { name: "vocab", default: "", help: "Vocabulary file", commands: MODELS },
    Key { name: "lsh", default: "", help: "LSH bank file", commands: &[VOCAB, INDEX, QUERY, EVAL, SAMPLE] },
    Key { name: "index", default: "", help: "Index file", commands: SEARCH },
    Key { name: "out", default: "", help: "Output file", commands: &[GEN, VOCAB, INDEX, QUERY, FIT, SAMPLE] },
    Key { name: "samples", default: "", help: "Labeled distance samples (distance,label)", commands: &[FIT] },
    Key { name: "report", default: "", help: "Per-query CSV report", commands: &[EVAL] },
    Key { name: "sweep", default: "", help: "Level-mask ablation CSV", commands: &[EVAL] },
    // Seeds.
    Key {
        name: "seed",
        default: "2015",
        help: "Generator / k-means / pair sampling seed",
        commands: &[GEN, VOCAB, SAMPLE],
    },
    Key { name: "he_seed", default: "2016", help: "Hamming embedding projection seed", commands: &[VOCAB] },
    Key { name: "lsh_seed", default: "2017", help: "LSH hyperplane seed", commands: &[VOCAB] },
    // Synthetic data.
    Key { name: "groups", default: "200", help: "Near-duplicate groups", commands: &[GEN] },
    Key { name: "group_size", default: "4", help: "Images per group", commands: &[GEN] },
    Key { name: "keypoints", default: "20", help: "Keypoints per image", commands: &[GEN] },
    Key { name: "context_dim", default: "64", help: "Context vector dimension", commands: &[GEN] },
    Key { name: "descriptor_noise", default: "60", help: "Member descriptor noise (byte units)", commands: &[GEN] },
    Key { name: "context_noise", default: "0.15", help: "Member context noise (relative)", commands: &[GEN] },
    Key { name: "distractors", default: "500", help: "Unrelated images", commands: &[GEN] },
    Key { name: "prototypes", default: "24", help: "Shared descriptor prototypes", commands: &[GEN] },
    Key { name: "word_spread", default: "40", help: "Keypoint spread around prototypes", commands: &[GEN] },
    Key { name: "burst", default: "0.15", help: "Probability of repeating a prototype", commands: &[GEN] },
    Key { name: "width", default: "640", help: "Image width", commands: &[GEN] },
    Key { name: "height", default: "480", help: "Image height", commands: &[GEN] },
    // Vocabulary.
    Key { name: "k", default: "256", help: "Visual words", commands: &[VOCAB] },
    Key { name: "kmeans_iters", default: "50", help: "Maximum k-means iterations", commands: &[VOCAB] },
    Key { name: "kmeans_tol", default: "0.0001", help: "Relative WCSS improvement to stop at", commands: &[VOCAB] },
    Key { name: "train_stride", default: "1", help: "Train on every n-th descriptor", commands: &[VOCAB] },
    // Encoding and matching.
    Key { name: "alpha", default: "0.5", help: "Signed root exponent for contexts", commands: MODELS },
    Key { name: "mode", default: "binary", help: "Context storage: binary or float", commands: &[INDEX] },
    Key { name: "ma", default: "3", help: "Words per query keypoint", commands: SEARCH },
    Key { name: "sigma", default: "21", help: "Local weighting", commands: SEARCH },
    Key { name: "kappa", default: "60", help: "Hamming cut-off", commands: SEARCH },
    Key { name: "gamma", default: "0.8", help: "Regional scale", commands: SEARCH },
    Key { name: "theta", default: "0.4", help: "Global scale", commands: SEARCH },
    Key { name: "levels", default: "all", help: "Enabled levels, e.g. local+global, all, none", commands: SEARCH },
    Key { name: "regional_rule", default: "multiply", help: "multiply, mean, coarse or fine", commands: SEARCH },
    Key { name: "burstiness", default: "true", help: "Down-weight repeated words", commands: SEARCH },
    Key { name: "idf", default: "true", help: "Weight by squared IDF", commands: SEARCH },
    Key { name: "norm", default: "sqrt", help: "Score normalization: sqrt or none", commands: SEARCH },
    Key { name: "top_k", default: "1000", help: "Ranked list length", commands: SEARCH },
    Key { name: "id", default: "", help: "Query only this image", commands: &[QUERY] },
    Key { name: "format", default: "text", help: "Ranked output: text or csv", commands: &[QUERY] },
    // Evaluation.
    Key { name: "metric", default: "ns", help: "ns or map", commands: &[EVAL] },
    Key {
        name: "exclude_self",
        default: "auto",
        help: "Drop the query from its ranking (auto: mAP only)",
        commands: &[EVAL],
    },
    // Curves and sampling.
    Key { name: "level", default: "global", help: "local, regional or global", commands: &[FIT, SAMPLE] },
    Key { name: "bins", default: "20", help: "Histogram bins", commands: &[FIT] },
    Key { name: "negatives", default: "3", help: "Non-matching images per query", commands: &[SAMPLE] },
    // Memory accounting.
    Key { name: "images", default: "1000000", help: "Database size", commands: &[MEM] },
    Key { name: "avg_keypoints", default: "500", help: "Keypoints per image", commands: &[MEM] },
];

pub fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Command-line spelling of a key.
pub fn flag(name: &str) -> String {
    name.replace('_', "-")
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
    sources: BTreeMap<&'static str, &'static str>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        Self {
            values: KEYS.iter().map(|k| (k.name, k.default.to_string())).collect(),
            sources: KEYS.iter().map(|k| (k.name, "default")).collect(),
        }
    }

    pub fn set(&mut self, name: &str, value: &str, source: &'static str) -> Result<(), CliError> {
        let k = key(name).ok_or_else(|| CliError::Usage(format!("unknown config key {name:?} ({source})")))?;
        self.values.insert(k.name, value.trim().to_string());
        self.sources.insert(k.name, source);
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v, "config file")?;
        }
        Ok(())
    }

    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<(), CliError> {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                self.set(&rest.to_ascii_lowercase(), &value, "environment")?;
            }
        }
        Ok(())
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or_else(|| panic!("key {name} not declared"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.raw(name).parse().map_err(|e| CliError::Usage(format!("{}: {:?}: {e}", flag(name), self.raw(name))))
    }

    pub fn flag_bool(&self, name: &str) -> Result<bool, CliError> {
        match self.raw(name).to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(CliError::Usage(format!("{}: expected a boolean, got {other:?}", flag(name)))),
        }
    }

    /// A value that must be present.
    pub fn required(&self, name: &str) -> Result<&str, CliError> {
        match self.raw(name) {
            "" => Err(CliError::Usage(format!("--{} is required", flag(name)))),
            v => Ok(v),
        }
    }

    pub fn optional(&self, name: &str) -> Option<&str> {
        Some(self.raw(name)).filter(|v| !v.is_empty())
    }

    pub fn source(&self, name: &str) -> &'static str {
        self.sources.get(name).copied().unwrap_or("default")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = RunConfig::defaults();
        assert_eq!(cfg.get::<f64>("sigma").unwrap(), 21.0);
        assert_eq!(cfg.get::<u32>("kappa").unwrap(), 60);
        assert_eq!(cfg.get::<f64>("gamma").unwrap(), 0.8);
        assert_eq!(cfg.get::<f64>("theta").unwrap(), 0.4);
        assert_eq!(cfg.get::<f64>("alpha").unwrap(), 0.5);
        assert_eq!(cfg.get::<usize>("ma").unwrap(), 3);
    }

    #[test]
    fn layering_and_rejection() {
        let mut cfg = RunConfig::defaults();
        cfg.apply_file("# comment\nsigma = 18\nkappa=50 # trailing\n\n").unwrap();
        assert_eq!(cfg.raw("sigma"), "18");
        cfg.apply_env([("DEEPEMBED_SIGMA".to_string(), "19".to_string()), ("HOME".to_string(), "/".to_string())])
            .unwrap();
        assert_eq!(cfg.raw("sigma"), "19");
        assert_eq!(cfg.source("kappa"), "config file");
        assert!(matches!(cfg.apply_file("sigmaa = 1"), Err(CliError::Usage(_))));
        assert!(matches!(cfg.apply_file("no equals sign"), Err(CliError::Usage(_))));
        assert!(cfg.apply_env([("DEEPEMBED_BOGUS".to_string(), "1".to_string())]).is_err());
    }

    #[test]
    fn typed_access() {
        let mut cfg = RunConfig::defaults();
        assert!(cfg.flag_bool("idf").unwrap());
        cfg.set("idf", "maybe", "flag").unwrap();
        assert!(cfg.flag_bool("idf").is_err());
        cfg.set("ma", "x", "flag").unwrap();
        assert!(cfg.get::<usize>("ma").is_err());
        assert!(cfg.required("data").is_err());
        assert_eq!(cfg.optional("id"), None);
    }

    #[test]
    fn every_key_has_a_command() {
        for k in KEYS {
            assert!(!k.commands.is_empty(), "{}", k.name);
        }
    }
}
