//! Flat key=value parameter files and the error type every command reports.
//!
//! A command reads one optional config file, folds command-line flags over
//! it, takes the keys it understands, and rejects whatever is left, so a
//! manifest written by an earlier run can drive the next one and a typo
//! never passes silently. Keys with a `digest.` or `artifact.` prefix are
//! manifest output, not parameters, and are dropped on load.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Seed used when neither the config nor the command line gives one.
pub const DEFAULT_SEED: u64 = 17;

/// Failures sorted by exit code: operational failures exit 1, bad
/// invocations exit 2 (matching the argument parser), artifacts that do not
/// withstand rechecking exit 3.
#[derive(Debug)]
pub enum CliError {
    Failed(String),
    Usage(String),
    Mismatch(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Mismatch(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failed(msg) | CliError::Usage(msg) => write!(f, "{}", msg),
            CliError::Mismatch(msg) => write!(f, "verification failed: {}", msg),
        }
    }
}

impl std::error::Error for CliError {}

/// An io error with the path attached; the bare error rarely names the file.
pub fn file_err(path: &Path, e: io::Error) -> CliError {
    CliError::Failed(format!("{}: {}", path.display(), e))
}

#[derive(Debug)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Where the values came from, for messages.
    source: String,
}

impl Config {
    pub fn empty() -> Config {
        Config {
            values: BTreeMap::new(),
            source: "command line".to_string(),
        }
    }

    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        Config::parse(&text, &path.display().to_string())
    }

    /// A config that may be absent or unreadable, for fallback values.
    pub fn load_optional(path: &Path) -> Option<Config> {
        let text = fs::read_to_string(path).ok()?;
        Config::parse(&text, &path.display().to_string()).ok()
    }

    fn parse(text: &str, source: &str) -> Result<Config, CliError> {
        let mut values = BTreeMap::new();
        for (num, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{} line {}: expected key=value, got {:?}",
                    source,
                    num + 1,
                    raw
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::Usage(format!(
                    "{} line {}: empty key",
                    source,
                    num + 1
                )));
            }
            if key.starts_with("digest.") || key.starts_with("artifact.") {
                continue;
            }
            if values
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(CliError::Usage(format!(
                    "{} line {}: duplicate key {:?}",
                    source,
                    num + 1,
                    key
                )));
            }
        }
        Ok(Config {
            values,
            source: source.to_string(),
        })
    }

    /// Command-line flags land here and shadow file values.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    /// Manifests stamp the command they were written by; reusing one with a
    /// different command is almost always a mistake.
    pub fn expect_command(&mut self, name: &str) -> Result<(), CliError> {
        match self.values.remove("command") {
            Some(c) if c != name => Err(CliError::Usage(format!(
                "{}: config was written for {:?}, not {:?}",
                self.source, c, name
            ))),
            _ => Ok(()),
        }
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    pub fn take_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    fn bad_value<T>(&self, key: &str, raw: &str) -> CliError {
        CliError::Usage(format!(
            "{}: key {} wants a {}, got {:?}",
            self.source,
            key,
            short_type_name::<T>(),
            raw
        ))
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| self.bad_value::<T>(key, &raw)),
        }
    }

    pub fn take_parsed_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.take_parsed(key)?.unwrap_or(default))
    }

    /// A comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.take(key) {
            None => Ok(None),
            Some(raw) => raw
                .split(',')
                .map(|piece| piece.trim().parse())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| self.bad_value::<T>(key, &raw)),
        }
    }

    pub fn take_list_or<T: FromStr + Clone>(
        &mut self,
        key: &str,
        default: &[T],
    ) -> Result<Vec<T>, CliError> {
        Ok(self.take_list(key)?.unwrap_or_else(|| default.to_vec()))
    }

    pub fn seed(&mut self) -> Result<u64, CliError> {
        self.take_parsed_or("seed", DEFAULT_SEED)
    }

    pub fn out_dir(&mut self) -> PathBuf {
        PathBuf::from(self.take_or("out", "out"))
    }

    pub fn threads(&mut self) -> Result<usize, CliError> {
        let t = self.take_parsed_or("threads", 1usize)?;
        if t == 0 {
            return Err(CliError::Usage(format!(
                "{}: threads must be at least 1",
                self.source
            )));
        }
        Ok(t)
    }

    /// Every key the command understands has been taken by now; anything
    /// left is a typo or a parameter for some other command.
    pub fn finish(&mut self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.values.keys().map(String::as_str).collect();
        Err(CliError::Usage(format!(
            "{}: unknown keys: {}",
            self.source,
            keys.join(", ")
        )))
    }
}

fn short_type_name<T>() -> &'static str {
    let full = std::any::type_name::<T>();
    full.rsplit("::").next().unwrap_or(full)
}

/// Expand a one-or-per-stage list to one value per stage.
pub fn broadcast<T: Copy>(values: &[T], stages: usize, key: &str) -> Result<Vec<T>, CliError> {
    match values.len() {
        1 => Ok(vec![values[0]; stages]),
        n if n == stages => Ok(values.to_vec()),
        n => Err(CliError::Usage(format!(
            "{}: got {} values for {} stages; give one, or one per stage",
            key, n, stages
        ))),
    }
}

/// Comma-join a list the way `take_list` reads it back.
pub fn join<T: fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parsed(text: &str) -> Config {
        Config::parse(text, "test").unwrap()
    }

    #[test]
    fn parses_trimmed_pairs_and_skips_noise() {
        let mut cfg = parsed("# comment\n\n seed = 42 \npreset=single\ndigest.fn=aa\nartifact.x=volatile\n");
        assert_eq!(cfg.take_parsed::<u64>("seed").unwrap(), Some(42));
        assert_eq!(cfg.take("preset").as_deref(), Some("single"));
        assert!(cfg.finish().is_ok());
    }

    #[test]
    fn rejects_malformed_lines_and_duplicates() {
        let e = Config::parse("just words\n", "test").unwrap_err();
        assert!(e.to_string().contains("line 1"));
        let e = Config::parse("a=1\na=2\n", "test").unwrap_err();
        assert!(e.to_string().contains("duplicate"));
        assert_eq!(e.code(), 2);
    }

    #[test]
    fn flags_shadow_file_values() {
        let mut cfg = parsed("seed=1\n");
        cfg.set("seed", 9u64);
        assert_eq!(cfg.seed().unwrap(), 9);
    }

    #[test]
    fn leftover_keys_are_named() {
        let mut cfg = parsed("bogus=1\nworse=2\n");
        let e = cfg.finish().unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("bogus") && msg.contains("worse"));
    }

    #[test]
    fn typed_take_reports_the_key() {
        let mut cfg = parsed("grid=tiny\n");
        let e = cfg.take_parsed::<u32>("grid").unwrap_err();
        assert!(e.to_string().contains("grid"), "{}", e);
        assert!(e.to_string().contains("u32"), "{}", e);
    }

    #[test]
    fn lists_round_trip_through_join() {
        let mut cfg = parsed("eps=0.1, 0.2 ,0.3\n");
        let v = cfg.take_list::<f64>("eps").unwrap().unwrap();
        assert_eq!(v, vec![0.1, 0.2, 0.3]);
        assert_eq!(join(&v), "0.1,0.2,0.3");
        let mut cfg = Config::parse(&format!("eps={}\n", join(&v)), "test").unwrap();
        assert_eq!(cfg.take_list::<f64>("eps").unwrap().unwrap(), v);
    }

    #[test]
    fn command_stamp_must_match() {
        let mut cfg = parsed("command=build\n");
        assert!(cfg.expect_command("build").is_ok());
        let mut cfg = parsed("command=build\n");
        let e = cfg.expect_command("regress").unwrap_err();
        assert_eq!(e.code(), 2);
    }

    #[test]
    fn broadcast_expands_or_matches() {
        assert_eq!(broadcast(&[5u64], 3, "n").unwrap(), vec![5, 5, 5]);
        assert_eq!(broadcast(&[1u64, 2, 3], 3, "n").unwrap(), vec![1, 2, 3]);
        assert!(broadcast(&[1u64, 2], 3, "n").is_err());
    }
}
