//! Self-describing text format for model checkpoints and standalone
//! matrices.
//!
//! ```text
//! SRHGNN v1 <kind>
//! meta <key> <value>
//! config <key> = <value>
//! matrix <name> <rows> <cols>
//! <cols values>            (one line per row)
//! end
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! float, so a write / read cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::SrHgnn;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const MAGIC: &str = "SRHGNN v1";

#[derive(Clone, Debug, PartialEq)]
pub struct Document<T> {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub config: Vec<(String, String)>,
    pub matrices: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Document<T> {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            meta: BTreeMap::new(),
            config: Vec::new(),
            matrices: Vec::new(),
        }
    }

    pub fn matrix(&self, name: &str) -> Option<&Tensor<T>> {
        self.matrices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn meta_value<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let raw = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing `meta {key}`")))?;
        raw.parse()
            .map_err(|_| Error::Data(format!("checkpoint `meta {key}` has bad value `{raw}`")))
    }

    pub fn render(&self) -> String {
        let mut out = format!("{MAGIC} {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config {k} = {v}");
        }
        for (name, t) in &self.matrices {
            let _ = writeln!(out, "matrix {name} {} {}", t.rows(), t.cols());
            for i in 0..t.rows() {
                let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty checkpoint".into()))?;
        let kind = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| err(1, format!("expected `{MAGIC} <kind>` header")))?;
        let mut doc = Self::new(kind);
        let mut ended = false;
        while let Some((no, line)) = lines.next() {
            let (tag, rest) = line.split_once(' ').unwrap_or((line, ""));
            match tag {
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| err(no, "expected `meta <key> <value>`".into()))?;
                    doc.meta.insert(k.to_string(), v.to_string());
                }
                "config" => {
                    let (k, v) = rest
                        .split_once(" = ")
                        .ok_or_else(|| err(no, "expected `config <key> = <value>`".into()))?;
                    doc.config.push((k.to_string(), v.to_string()));
                }
                "matrix" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let (name, rows, cols) = match f.as_slice() {
                        [n, r, c] => (
                            n.to_string(),
                            r.parse::<usize>()
                                .map_err(|_| err(no, "bad row count".into()))?,
                            c.parse::<usize>()
                                .map_err(|_| err(no, "bad column count".into()))?,
                        ),
                        _ => return Err(err(no, "expected `matrix <name> <rows> <cols>`".into())),
                    };
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let (rno, row) = lines
                            .next()
                            .ok_or_else(|| err(no, format!("matrix `{name}` is truncated")))?;
                        let before = data.len();
                        for v in row.split_ascii_whitespace() {
                            data.push(
                                v.parse::<T>()
                                    .map_err(|_| err(rno, format!("bad value `{v}`")))?,
                            );
                        }
                        if data.len() - before != cols {
                            return Err(err(rno, format!("expected {cols} values")));
                        }
                    }
                    doc.matrices
                        .push((name, Tensor::from_vec(rows, cols, data)?));
                }
                "end" => {
                    ended = true;
                    break;
                }
                _ => return Err(err(no, format!("unexpected line `{line}`"))),
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "missing `end`".into()));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Checkpoint holding every parameter, the config and `H*`.
pub fn model_document<T: Scalar>(model: &SrHgnn<T>) -> Document<T> {
    let mut doc = Document::new("model");
    doc.meta.insert("precision".into(), T::NAME.into());
    doc.meta.insert("users".into(), model.num_users.to_string());
    doc.meta.insert("items".into(), model.num_items.to_string());
    doc.meta
        .insert("seed".into(), model.config.seed.to_string());
    doc.config = Config::KEYS
        .iter()
        .filter_map(|k| model.config.get(k).map(|v| (k.to_string(), v)))
        .collect();
    if let Some(h) = &model.h_star {
        doc.matrices.push(("h_star".into(), h.clone()));
    }
    for id in model.store.ids() {
        doc.matrices.push((
            model.store.name(id).to_string(),
            model.store.get(id).clone(),
        ));
    }
    doc
}

/// Rebuilds a model from [`model_document`] output.
pub fn model_from_document<T: Scalar>(doc: &Document<T>) -> Result<SrHgnn<T>> {
    if doc.kind != "model" {
        return Err(Error::Data(format!(
            "expected a model checkpoint, found `{}`",
            doc.kind
        )));
    }
    let mut config = Config::default();
    for (k, v) in &doc.config {
        config.set(k, v)?;
    }
    let users = doc.meta_value("users")?;
    let items = doc.meta_value("items")?;
    let mut model = SrHgnn::new(&config, users, items, doc.matrix("h_star").cloned())?;
    for id in model.store.ids().collect::<Vec<_>>() {
        let name = model.store.name(id).to_string();
        let value = doc
            .matrix(&name)
            .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter `{name}`")))?;
        model.store.set(&name, value.clone())?;
    }
    Ok(model)
}

/// A single named matrix with metadata, e.g. the pretrained `H*`.
pub fn matrix_document<T: Scalar>(
    name: &str,
    tensor: &Tensor<T>,
    meta: &[(&str, String)],
) -> Document<T> {
    let mut doc = Document::new("matrix");
    doc.meta.insert("precision".into(), T::NAME.into());
    for (k, v) in meta {
        doc.meta.insert(k.to_string(), v.clone());
    }
    doc.matrices.push((name.to_string(), tensor.clone()));
    doc
}
