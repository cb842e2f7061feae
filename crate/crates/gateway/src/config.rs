//! Flat `key=value` settings file with environment overrides.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// A secret that never prints.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(s: impl Into<String>) -> Self {
        Secret(s.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            f.write_str("<unset>")
        } else {
            f.write_str("<redacted>")
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Credentials {
    pub verify_token: Secret,
    pub page_access_token: Secret,
    /// When set, inbound webhook bodies must carry a matching signature.
    pub app_secret: Option<Secret>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    pub credentials: Credentials,
    pub port: Option<u16>,
    pub graph_api_url: Option<String>,
}

pub const DEFAULT_PORT: u16 = 5005;

pub fn parse_pairs(doc: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in doc.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value", i + 1);
        };
        out.insert(k.trim().to_lowercase(), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    /// Builds settings from file contents and an environment lookup; the
    /// environment wins.
    pub fn resolve(file: Option<&str>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut pairs = match file {
            Some(doc) => parse_pairs(doc)?,
            None => BTreeMap::new(),
        };
        for (var, key) in [
            ("VERIFY_TOKEN", "verify_token"),
            ("PAGE_ACCESS_TOKEN", "page_access_token"),
            ("APP_SECRET", "app_secret"),
            ("PORT", "port"),
        ] {
            if let Some(v) = env(var) {
                pairs.insert(key.to_string(), v);
            }
        }
        let port = match pairs.get("port").filter(|p| !p.is_empty()) {
            Some(p) => Some(p.parse::<u16>().with_context(|| format!("invalid port `{p}`"))?),
            None => None,
        };
        let secret = |k: &str| Secret::new(pairs.get(k).cloned().unwrap_or_default());
        Ok(Settings {
            credentials: Credentials {
                verify_token: secret("verify_token"),
                page_access_token: secret("page_access_token"),
                app_secret: Some(secret("app_secret")).filter(|s| !s.is_empty()),
            },
            port,
            graph_api_url: pairs.get("graph_api_url").cloned().filter(|s| !s.is_empty()),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let doc = match path {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        Self::resolve(doc.as_deref(), |k| std::env::var(k).ok())
    }
}
