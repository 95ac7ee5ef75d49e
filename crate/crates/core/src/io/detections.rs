use std::fmt::Write as _;

use super::{IoError, LineDiagnostic, Result};
use crate::eval::Detection;
use crate::losses::Bbox;

pub const DETECTION_COLUMNS: [&str; 7] = ["image_id", "class_id", "x1", "y1", "x2", "y2", "score"];

/// Parsed rows plus one diagnostic per rejected row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionFile {
    pub detections: Vec<Detection>,
    pub diagnostics: Vec<LineDiagnostic>,
}

fn check_header(header: &csv::StringRecord) -> Result<()> {
    let found: Vec<&str> = header.iter().map(str::trim).collect();
    if let Some(missing) = DETECTION_COLUMNS.iter().find(|c| !found.contains(c)) {
        return Err(IoError::MissingColumn(missing.to_string()));
    }
    if let Some((k, (want, got))) = DETECTION_COLUMNS
        .iter()
        .zip(&found)
        .enumerate()
        .find(|(_, (w, g))| w != g)
    {
        return Err(IoError::ColumnOrder {
            position: k + 1,
            expected: want.to_string(),
            found: got.to_string(),
        });
    }
    if found.len() != DETECTION_COLUMNS.len() {
        return Err(IoError::ColumnOrder {
            position: DETECTION_COLUMNS.len() + 1,
            expected: "end of header".into(),
            found: found[DETECTION_COLUMNS.len()].to_string(),
        });
    }
    Ok(())
}

fn parse_row(r: &csv::StringRecord) -> std::result::Result<Detection, String> {
    if r.len() != DETECTION_COLUMNS.len() {
        return Err(format!(
            "expected {} fields, found {}",
            DETECTION_COLUMNS.len(),
            r.len()
        ));
    }
    let num = |k: usize| {
        r[k].trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                format!(
                    "{} '{}' is not a finite number",
                    DETECTION_COLUMNS[k], &r[k]
                )
            })
    };
    let class_id = r[1]
        .trim()
        .parse::<usize>()
        .map_err(|_| format!("class_id '{}' is not a non-negative integer", &r[1]))?;
    let (x1, y1, x2, y2) = (num(2)?, num(3)?, num(4)?, num(5)?);
    if x2 < x1 || y2 < y1 {
        return Err(format!("corners out of order ({x1}, {y1}, {x2}, {y2})"));
    }
    let score = num(6)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(format!("score {score} is outside [0, 1]"));
    }
    Ok(Detection::new(
        r[0].to_string(),
        class_id,
        Bbox::new(x1, y1, x2, y2),
        score,
    ))
}

/// Reads a detection CSV with the exact header
/// `image_id,class_id,x1,y1,x2,y2,score`. Header problems are errors;
/// row problems become diagnostics and the row is skipped.
pub fn read_detections(text: &str) -> Result<DetectionFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .clone();
    check_header(&header)?;
    let mut out = DetectionFile::default();
    for record in reader.records() {
        match record {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize);
                match parse_row(&r) {
                    Ok(d) => out.detections.push(d),
                    Err(message) => out.diagnostics.push(LineDiagnostic { line, message }),
                }
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                out.diagnostics.push(LineDiagnostic {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// Header plus one row per detection, numbers with six decimals, LF
/// endings.
pub fn write_detections(dets: &[Detection]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(DETECTION_COLUMNS)
        .expect("writing to memory");
    let mut buf = String::new();
    for d in dets {
        let b = d.bbox;
        let fields = [b.x1, b.y1, b.x2, b.y2, d.score].map(|v| {
            buf.clear();
            write!(buf, "{v:.6}").expect("writing to a String");
            buf.clone()
        });
        let class = d.class_id.to_string();
        let mut row = vec![d.image_id.as_str(), class.as_str()];
        row.extend(fields.iter().map(String::as_str));
        w.write_record(&row).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing memory")).expect("input was UTF-8")
}
