//! Text checkpoints: one `name rows cols v1 v2 ...` line per parameter and
//! per running statistic.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

fn push_line(out: &mut String, name: &str, m: &Matrix) {
    let _ = write!(out, "{name} {} {}", m.rows(), m.cols());
    for v in m.as_slice() {
        out.push(' ');
        crate::dataset::fmt_real(out, *v);
    }
    out.push('\n');
}

/// Parameters first, then running statistics, each in name order.
pub fn write_checkpoint(model: &ModelParams) -> String {
    let mut out = String::new();
    for (name, p) in model.params.iter() {
        push_line(&mut out, name, &p.value);
    }
    for (name, m) in &model.buffers {
        push_line(&mut out, name, m);
    }
    out
}

pub fn save_checkpoint(model: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

/// Parses checkpoint text into named matrices without checking them
/// against any architecture.
pub fn read_checkpoint(text: &str, origin: &str) -> Result<BTreeMap<String, Matrix>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Format {
            path: origin.to_owned(),
            line: i + 1,
            msg,
        };
        let mut tok = line.split_whitespace();
        let name = tok.next().expect("non-empty line").to_owned();
        let mut dim = || -> Result<usize> {
            tok.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(format!("`{name}`: bad shape")))
        };
        let (rows, cols) = (dim()?, dim()?);
        let values: Vec<f64> = tok
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(format!("`{name}`: unparsable value")))?;
        if values.len() != rows * cols {
            return Err(err(format!(
                "`{name}`: expected {} values, found {}",
                rows * cols,
                values.len()
            )));
        }
        let m = Matrix::from_vec(rows, cols, values)?;
        if out.insert(name.clone(), m).is_some() {
            return Err(err(format!("duplicate entry `{name}`")));
        }
    }
    Ok(out)
}

/// Loads a checkpoint for the architecture described by `config`.
///
/// Every configured parameter and running statistic must be present with
/// the configured shape, and nothing else may be; the first offending name
/// is reported.
pub fn load_checkpoint(path: impl AsRef<Path>, config: ModelConfig) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = read_checkpoint(&text, &path.display().to_string())?;
    let mut model = ModelParams::zeroed(config)?;

    let mut expected: Vec<(String, (usize, usize))> = model
        .params
        .iter()
        .map(|(n, p)| (n.to_owned(), p.value.shape()))
        .chain(model.buffers.iter().map(|(n, m)| (n.clone(), m.shape())))
        .collect();
    expected.sort();
    for (name, shape) in &expected {
        let m = entries.remove(name).ok_or_else(|| Error::Checkpoint {
            name: name.clone(),
            detail: "missing from checkpoint".into(),
        })?;
        if m.shape() != *shape {
            return Err(Error::Checkpoint {
                name: name.clone(),
                detail: format!("shape {:?}, architecture expects {:?}", m.shape(), shape),
            });
        }
        if let Some(slot) = model.buffers.get_mut(name) {
            *slot = m;
        } else {
            model.params.set_value(name, m)?;
        }
    }
    if let Some(name) = entries.keys().next() {
        return Err(Error::Checkpoint {
            name: name.clone(),
            detail: "not part of the configured architecture".into(),
        });
    }
    Ok(model)
}
