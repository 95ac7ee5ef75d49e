use std::ops::Range;

use serde::Deserialize;

use super::{IoError, Result};
use crate::neck::{LinkPolicy, NeckGraphSpec, DEFAULT_STRIDES};

/// A loaded spec plus notes about defaults that were filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedNeckConfig {
    pub spec: NeckGraphSpec,
    pub notices: Vec<String>,
}

/// 1-based line and column of byte `offset` in `text`.
pub fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1);
    (line, before[before.len() - col..].chars().count() + 1)
}

fn located(text: &str, span: Option<Range<usize>>, message: String) -> IoError {
    let (line, column) = span.map_or((0, 0), |s| line_column(text, s.start));
    IoError::Config {
        line,
        column,
        message,
    }
}

#[derive(Deserialize)]
struct PolicyProbe {
    link_policy: Option<toml::Spanned<String>>,
}

/// Default stride of level `k` when none are given: 4, 8, 16, 32, ...
pub fn default_stride(k: usize) -> usize {
    DEFAULT_STRIDES[0] << k
}

/// Parses a TOML neck config. Syntax and schema errors carry the line and
/// column they refer to. When no level gives a stride, strides default to
/// 4, 8, 16, 32 (doubling further for extra levels) and a notice says so;
/// giving strides for only some levels is an error. The result has not
/// been checked with `validate_channels`.
pub fn load_neck_config(text: &str) -> Result<LoadedNeckConfig> {
    if let Ok(PolicyProbe {
        link_policy: Some(p),
    }) = toml::from_str::<PolicyProbe>(text)
    {
        if p.get_ref().parse::<LinkPolicy>().is_err() {
            let (line, column) = line_column(text, p.span().start);
            return Err(IoError::UnknownPolicy {
                name: p.into_inner(),
                line,
                column,
            });
        }
    }
    let mut spec: NeckGraphSpec =
        toml::from_str(text).map_err(|e| located(text, e.span(), e.message().to_string()))?;
    let mut notices = Vec::new();
    let missing: Vec<&str> = spec
        .levels
        .iter()
        .filter(|l| l.stride == 0)
        .map(|l| l.name.as_str())
        .collect();
    if !missing.is_empty() && missing.len() == spec.levels.len() {
        for (k, l) in spec.levels.iter_mut().enumerate() {
            l.stride = default_stride(k);
        }
        let strides: Vec<String> = spec.levels.iter().map(|l| l.stride.to_string()).collect();
        notices.push(format!(
            "no level strides given; using defaults ({})",
            strides.join(", ")
        ));
    } else if !missing.is_empty() {
        return Err(IoError::Config {
            line: 0,
            column: 0,
            message: format!(
                "levels {} have no stride; give a stride for every level or for none",
                missing.join(", ")
            ),
        });
    }
    Ok(LoadedNeckConfig { spec, notices })
}

/// TOML text of `spec` that [`load_neck_config`] reads back unchanged.
pub fn write_neck_config(spec: &NeckGraphSpec) -> String {
    toml::to_string(spec).expect("neck specs serialize")
}
