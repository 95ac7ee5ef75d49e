//! Reading and writing annotation files, detection CSVs and neck configs.
//!
//! Parsers never panic on bad input. Whole-file problems come back as an
//! [`IoError`]; problems with individual records come back as
//! [`LineDiagnostic`]s next to the records that did parse.

mod annotations;
mod config;
mod detections;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use annotations::{
    parse_annotations, read_ground_truth_dir, write_annotations, AnnotationLine, Category,
    CategoryMap, FileDiagnostic, ParsedAnnotations,
};
pub use config::{
    default_stride, line_column, load_neck_config, write_neck_config, LoadedNeckConfig,
};
pub use detections::{read_detections, write_detections, DetectionFile, DETECTION_COLUMNS};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("column {position} should be '{expected}', found '{found}'")]
    ColumnOrder {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("csv: {0}")]
    Csv(String),
    #[error("line {line}, column {column}: unknown link policy '{name}'")]
    UnknownPolicy {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("{}{message}", location(*.line, *.column))]
    Config {
        /// 0 when the problem has no single location.
        line: usize,
        column: usize,
        message: String,
    },
    #[error("category map: {0}")]
    Categories(String),
}

fn location(line: usize, column: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}, column {column}: ")
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineDiagnostic {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}
