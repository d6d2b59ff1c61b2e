use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::proposal::MomentSpan;

/// One query with its ground-truth moment.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub video_id: String,
    /// Video length in seconds.
    pub duration: f64,
    pub query: String,
    pub gt_span: MomentSpan,
}

impl Annotation {
    pub fn new(video_id: &str, duration: f64, start: f64, end: f64, query: &str) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Validation(format!(
                "{video_id}: duration {duration} must be positive"
            )));
        }
        if !(0.0 <= start && start < end && end <= duration) {
            return Err(Error::Validation(format!(
                "{video_id}: span ({start}, {end}) outside [0, {duration}]"
            )));
        }
        if query.split_whitespace().next().is_none() {
            return Err(Error::Validation(format!("{video_id}: empty query")));
        }
        Ok(Self {
            video_id: video_id.to_string(),
            duration,
            query: query.to_string(),
            gt_span: MomentSpan { start, end },
        })
    }

    /// `video_id duration start end query…`
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.video_id, self.duration, self.gt_span.start, self.gt_span.end, self.query
        )
    }
}

/// Parses annotation text; `origin` only labels error messages.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno,
            msg,
        };
        let mut fields = line.split_whitespace();
        let video_id = fields.next().unwrap();
        let mut number = |what: &str| -> Result<f64> {
            let raw = fields
                .next()
                .ok_or_else(|| parse_err(format!("missing {what}")))?;
            raw.parse::<f64>()
                .map_err(|_| parse_err(format!("{what} `{raw}` is not a number")))
        };
        let duration = number("duration")?;
        let start = number("start")?;
        let end = number("end")?;
        let query = fields.collect::<Vec<_>>().join(" ");
        if query.is_empty() {
            return Err(parse_err("missing query".into()));
        }
        let ann = Annotation::new(video_id, duration, start, end, &query).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!(
                "{}:{lineno}: {msg}",
                origin.display()
            )),
            other => other,
        })?;
        out.push(ann);
    }
    Ok(out)
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

pub fn write_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut text = String::new();
    for a in annotations {
        let _ = writeln!(text, "{}", a.to_line());
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
