use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid value for {var}: {value:?}")]
pub struct ConfigError {
    pub var: &'static str,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub port: u16,
    /// Directory of bundled `.vbtr` fixtures.
    pub data_dir: Option<PathBuf>,
    /// Base URL of the extractor service (`POST {url}/extract`).
    pub extractor_url: Option<String>,
    pub extractor_timeout: Duration,
    /// k-means seed for the cluster distinctness metric.
    pub seed: u64,
    pub cluster_k: usize,
    pub max_upload_bytes: usize,
    /// Built UI bundle served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: None,
            extractor_url: None,
            extractor_timeout: Duration::from_secs(60),
            seed: 7,
            cluster_k: 4,
            max_upload_bytes: 256 * 1024 * 1024,
            static_dir: None,
        }
    }
}

fn parse<T: std::str::FromStr>(var: &'static str, value: String) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError { var, value })
}

impl Config {
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|key| std::env::var(key).ok())
    }

    /// Reads `VISTRACE_*` variables through `lookup`; unset or empty values keep defaults.
    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |key: &str| lookup(key).filter(|v| !v.trim().is_empty());
        let mut config = Self::default();
        if let Some(v) = get("VISTRACE_PORT") {
            config.port = parse("VISTRACE_PORT", v)?;
        }
        if let Some(v) = get("VISTRACE_DATA_DIR") {
            config.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = get("VISTRACE_EXTRACTOR_URL") {
            config.extractor_url = Some(v.trim_end_matches('/').to_string());
        }
        if let Some(v) = get("VISTRACE_EXTRACTOR_TIMEOUT_SECS") {
            config.extractor_timeout = Duration::from_secs_f64(parse("VISTRACE_EXTRACTOR_TIMEOUT_SECS", v)?);
        }
        if let Some(v) = get("VISTRACE_SEED") {
            config.seed = parse("VISTRACE_SEED", v)?;
        }
        if let Some(v) = get("VISTRACE_CLUSTER_K") {
            config.cluster_k = parse("VISTRACE_CLUSTER_K", v.clone())?;
            if config.cluster_k < 2 {
                return Err(ConfigError {
                    var: "VISTRACE_CLUSTER_K",
                    value: v,
                });
            }
        }
        if let Some(v) = get("VISTRACE_MAX_UPLOAD_BYTES") {
            config.max_upload_bytes = parse("VISTRACE_MAX_UPLOAD_BYTES", v)?;
        }
        if let Some(v) = get("VISTRACE_STATIC_DIR") {
            config.static_dir = Some(PathBuf::from(v));
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::from_lookup(|_| None).unwrap();
        assert_eq!(c.port, 8080);
        assert_eq!(c.seed, 7);
        assert_eq!(c.max_upload_bytes, 256 << 20);
        assert_eq!(c.extractor_timeout, Duration::from_secs(60));
        assert!(c.extractor_url.is_none());
    }

    #[test]
    fn overrides_and_errors() {
        let c = Config::from_lookup(|k| match k {
            "VISTRACE_PORT" => Some("9000".into()),
            "VISTRACE_EXTRACTOR_URL" => Some("http://localhost:5000/".into()),
            "VISTRACE_SEED" => Some("42".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.seed, 42);
        assert_eq!(c.extractor_url.as_deref(), Some("http://localhost:5000"));

        let err = Config::from_lookup(|k| (k == "VISTRACE_PORT").then(|| "http".into())).unwrap_err();
        assert_eq!(err.var, "VISTRACE_PORT");
    }
}
