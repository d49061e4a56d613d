use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub label: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub classes: usize,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// Parses `label<TAB>text` lines. Labels get dense indices in order of first appearance.
    pub fn parse(name: &str, content: &str) -> Result<Self> {
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut class_names = Vec::new();
        let mut examples = Vec::new();
        let body = content.strip_suffix('\n').unwrap_or(content);
        let lines = if body.is_empty() { None } else { Some(body.split('\n')) };
        for (i, raw) in lines.into_iter().flatten().enumerate() {
            let line_no = i + 1;
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            let (label, text) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: "expected <label>\\t<text>".into(),
            })?;
            if label.trim().is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "empty label".into(),
                });
            }
            if text.trim().is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "blank text".into(),
                });
            }
            let next = class_names.len();
            let id = *index.entry(label.to_string()).or_insert_with(|| {
                class_names.push(label.to_string());
                next
            });
            examples.push(Example {
                label: id,
                text: text.to_string(),
            });
        }
        if class_names.len() < 2 {
            return Err(Error::Config(format!(
                "dataset {name} has {} class(es); at least 2 are required",
                class_names.len()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            classes: class_names.len(),
            class_names,
            examples,
        })
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.examples {
            writeln!(w, "{}\t{}", self.class_names[e.label], e.text)?;
        }
        Ok(())
    }
}

/// Reads a UTF-8 TSV dataset; the file stem becomes the dataset name.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let content = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    Dataset::parse(&name, &content)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_lines() {
        let d = Dataset::parse("t", "pos\tgood\nneg\tbad").unwrap();
        assert_eq!(d.classes, 2);
        assert_eq!(d.labels(), vec![0, 1]);
        assert_eq!(d.class_names, vec!["pos", "neg"]);
        let with_newline = Dataset::parse("t", "pos\tgood\nneg\tbad\n").unwrap();
        assert_eq!(with_newline, d);
    }

    #[test]
    fn blank_text_is_reported_with_line() {
        let err = Dataset::parse("t", "pos\tgood\nneg\t  \npos\tok").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Dataset::parse("t", "pos\tgood\n\nneg\tbad").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Dataset::parse("t", "pos good").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(Dataset::parse("t", "a\tx\na\ty"), Err(Error::Config(_))));
    }

    #[test]
    fn six_question_types() {
        let text = "DESC\thow does it work\nENTY\twhat color is it\nABBR\twhat does nasa stand for\n\
                    HUM\twho wrote it\nLOC\twhere is it\nNUM\thow many are there\nHUM\twho is she";
        let d = Dataset::parse("trec", text).unwrap();
        assert_eq!(d.classes, 6);
        assert_eq!(d.examples[6].label, 3);
    }

    #[test]
    fn tsv_round_trip() {
        let d = Dataset::parse("t", "b\tone two\na\tthree\nb\tfour").unwrap();
        let mut buf = Vec::new();
        d.write_tsv(&mut buf).unwrap();
        assert_eq!(Dataset::parse("t", std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }
}
