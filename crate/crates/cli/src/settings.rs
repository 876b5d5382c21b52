//! Config-file and flag merging. Every flag has a key of the same name (with
//! underscores); flags win.

use std::fmt;
use std::path::Path;

use anyhow::Result;
use wsdepth::kv::KvFile;

/// Bad invocation that clap cannot see (exit status 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Where the base key set comes from.
pub enum Source<'a> {
    None,
    File(&'a Path),
    Text(&'a str),
}

/// Base keys plus `(key, value)` overrides for the flags that were given.
pub fn merge(source: Source<'_>, overrides: &[(&str, Option<String>)]) -> Result<KvFile> {
    let mut kv = match source {
        Source::None => KvFile::default(),
        Source::File(p) => KvFile::read(p)?,
        Source::Text(t) => KvFile::parse(t)?,
    };
    for (k, v) in overrides {
        if let Some(v) = v {
            kv.set(k, v);
        }
    }
    Ok(kv)
}

pub fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

pub fn flag(on: bool, value: &str) -> Option<String> {
    on.then(|| value.to_string())
}

/// `N` or `HxW`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || usage(format!("size must be `N` or `HxW`, got `{s}`"));
    let parts: Vec<&str> = s.split(['x', 'X']).map(str::trim).collect();
    let nums: Vec<usize> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
    match nums[..] {
        [n] => Ok((n, n)),
        [h, w] => Ok((h, w)),
        _ => Err(bad()),
    }
}
