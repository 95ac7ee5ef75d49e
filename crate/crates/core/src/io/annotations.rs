use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IoError, LineDiagnostic, Result};
use crate::eval::GroundTruth;
use crate::losses::Bbox;

/// One record of a VisDrone-style annotation file:
/// `left,top,width,height,score,category,truncation,occlusion`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationLine {
    pub bbox_left: i64,
    pub bbox_top: i64,
    pub bbox_width: i64,
    pub bbox_height: i64,
    pub score: f64,
    pub category_id: usize,
    pub truncation: i64,
    pub occlusion: i64,
}

impl AnnotationLine {
    pub fn bbox(&self) -> Bbox {
        Bbox::from_xywh(
            self.bbox_left as f64,
            self.bbox_top as f64,
            self.bbox_width as f64,
            self.bbox_height as f64,
        )
    }
}

impl fmt::Display for AnnotationLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.bbox_left,
            self.bbox_top,
            self.bbox_width,
            self.bbox_height,
            self.score,
            self.category_id,
            self.truncation,
            self.occlusion
        )
    }
}

/// Valid records in file order, plus one diagnostic per rejected line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedAnnotations {
    pub lines: Vec<AnnotationLine>,
    pub diagnostics: Vec<LineDiagnostic>,
}

impl ParsedAnnotations {
    pub fn ground_truths(&self, image_id: &str, categories: &CategoryMap) -> Vec<GroundTruth> {
        self.lines
            .iter()
            .map(|a| {
                let gt = GroundTruth::new(image_id, a.category_id, a.bbox());
                if categories.is_ignored(a.category_id) {
                    gt.ignored()
                } else {
                    gt
                }
            })
            .collect()
    }
}

const FIELDS: [&str; 8] = [
    "bbox_left",
    "bbox_top",
    "bbox_width",
    "bbox_height",
    "score",
    "category_id",
    "truncation",
    "occlusion",
];

fn parse_line(line: &str) -> std::result::Result<AnnotationLine, String> {
    let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
    // Some distributions end every record with a comma.
    if fields.len() == 9 && fields[8].is_empty() {
        fields.pop();
    }
    if fields.len() != FIELDS.len() {
        return Err(format!(
            "expected 8 comma-separated fields, found {}",
            fields.len()
        ));
    }
    let int = |k: usize| {
        fields[k]
            .parse::<i64>()
            .map_err(|_| format!("field {} '{}' is not an integer", FIELDS[k], fields[k]))
    };
    let a = AnnotationLine {
        bbox_left: int(0)?,
        bbox_top: int(1)?,
        bbox_width: int(2)?,
        bbox_height: int(3)?,
        score: fields[4]
            .parse::<f64>()
            .ok()
            .filter(|s| s.is_finite())
            .ok_or_else(|| format!("field score '{}' is not a number", fields[4]))?,
        category_id: fields[5].parse::<usize>().map_err(|_| {
            format!(
                "field category_id '{}' is not a non-negative integer",
                fields[5]
            )
        })?,
        truncation: int(6)?,
        occlusion: int(7)?,
    };
    if a.bbox_width <= 0 || a.bbox_height <= 0 {
        return Err(format!("degenerate box {}x{}", a.bbox_width, a.bbox_height));
    }
    Ok(a)
}

/// Parses annotation text. Blank lines are skipped; every other line that
/// fails to parse, or has zero or negative extent, becomes a diagnostic
/// and is left out of the result.
pub fn parse_annotations(text: &str) -> ParsedAnnotations {
    let mut out = ParsedAnnotations::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(a) => out.lines.push(a),
            Err(message) => out.diagnostics.push(LineDiagnostic {
                line: i + 1,
                message,
            }),
        }
    }
    out
}

/// Canonical text: one record per line, LF endings.
pub fn write_annotations(lines: &[AnnotationLine]) -> String {
    let mut s = String::new();
    for a in lines {
        writeln!(s, "{a}").expect("writing to a String");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: usize,
    pub name: String,
    /// Boxes of this category are excluded from matching.
    #[serde(default)]
    pub ignore: bool,
}

/// Category ids and names. [`CategoryMap::visdrone`] is the built-in
/// table; other tables load from TOML with [`CategoryMap::from_toml`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryMap {
    #[serde(rename = "category")]
    categories: Vec<Category>,
}

impl CategoryMap {
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut ids: Vec<usize> = categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(IoError::Categories(format!(
                "duplicate category id {}",
                w[0]
            )));
        }
        Ok(Self { categories })
    }

    pub fn visdrone() -> Self {
        let names = [
            (0, "ignored regions", true),
            (1, "pedestrian", false),
            (2, "people", false),
            (3, "bicycle", false),
            (4, "car", false),
            (5, "van", false),
            (6, "truck", false),
            (7, "tricycle", false),
            (8, "awning-tricycle", false),
            (9, "bus", false),
            (10, "motorcycle", false),
            (11, "others", true),
        ];
        Self {
            categories: names
                .iter()
                .map(|&(id, name, ignore)| Category {
                    id,
                    name: name.into(),
                    ignore,
                })
                .collect(),
        }
    }

    /// Reads `[[category]]` tables with `id`, `name` and optional `ignore`.
    pub fn from_toml(text: &str) -> Result<Self> {
        let map: CategoryMap =
            toml::from_str(text).map_err(|e| IoError::Categories(e.to_string()))?;
        Self::new(map.categories)
    }

    pub fn get(&self, id: usize) -> Option<&Category> {
        self.categories.iter().find(|c| c.id == id)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.get(id).map(|c| c.name.as_str())
    }

    /// Unknown ids are treated as ignored.
    pub fn is_ignored(&self, id: usize) -> bool {
        self.get(id).is_none_or(|c| c.ignore)
    }

    /// Ids that take part in evaluation, ascending.
    pub fn object_classes(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .categories
            .iter()
            .filter(|c| !c.ignore)
            .map(|c| c.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn iter(&self) -> impl Iterator<Item = &Category> {
        self.categories.iter()
    }
}

/// A line diagnostic and the file it came from.
pub type FileDiagnostic = (String, LineDiagnostic);

/// Ground truth for every `*.txt` file in `dir`, keyed by file stem, in
/// file-name order. Line diagnostics carry the file they came from.
pub fn read_ground_truth_dir(
    dir: &Path,
    categories: &CategoryMap,
) -> Result<(Vec<GroundTruth>, Vec<FileDiagnostic>)> {
    let io_err = |source| IoError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err)?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    let mut gts = Vec::new();
    let mut diagnostics = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|source| IoError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let parsed = parse_annotations(&text);
        gts.extend(parsed.ground_truths(&stem, categories));
        let name = path.display().to_string();
        diagnostics.extend(parsed.diagnostics.into_iter().map(|d| (name.clone(), d)));
    }
    Ok((gts, diagnostics))
}
