//! Plain-text albedo file. The first non-comment line names the model:
//!
//! ```text
//! global <c·rho>
//!
//! grouped <groups> <vertices>
//! group <label> <c·rho>        (one line per group)
//! <label>                      (one line per vertex)
//!
//! per_vertex <vertices>
//! <c·rho>                      (one line per vertex)
//! ```

use std::fs;
use std::path::Path;

use crate::albedo::AlbedoModel;
use crate::error::{Error, Result};

pub fn format_albedo(model: &AlbedoModel) -> String {
    let mut s = String::from("# nearlight albedo\n");
    match model {
        AlbedoModel::Global(v) => s.push_str(&format!("global {v}\n")),
        AlbedoModel::Grouped { labels, values } => {
            s.push_str(&format!("grouped {} {}\n", values.len(), labels.len()));
            for (k, v) in values.iter().enumerate() {
                s.push_str(&format!("group {k} {v}\n"));
            }
            for l in labels {
                s.push_str(&format!("{l}\n"));
            }
        }
        AlbedoModel::PerVertex(values) => {
            s.push_str(&format!("per_vertex {}\n", values.len()));
            for v in values {
                s.push_str(&format!("{v}\n"));
            }
        }
    }
    s
}

pub fn save_albedo(path: &Path, model: &AlbedoModel) -> Result<()> {
    fs::write(path, format_albedo(model)).map_err(|e| Error::io(path, e))
}

pub fn load_albedo(path: &Path) -> Result<AlbedoModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let last = text.lines().count().max(1);
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(path, last, format!("file ends before {what}")));
    fn num<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
        let tok = tok.ok_or_else(|| Error::parse(path, line, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::parse(path, line, format!("{what} is not valid: '{tok}'")))
    }
    let (n, header) = next("the header")?;
    let mut tokens = header.split_whitespace();
    let model = match tokens.next() {
        Some("global") => AlbedoModel::Global(num(path, n, tokens.next(), "albedo")?),
        Some("grouped") => {
            let k: usize = num(path, n, tokens.next(), "group count")?;
            let count: usize = num(path, n, tokens.next(), "vertex count")?;
            let mut values = vec![f64::NAN; k];
            for _ in 0..k {
                let (n, line) = next("a group line")?;
                let mut t = line.split_whitespace();
                if t.next() != Some("group") {
                    return Err(Error::parse(path, n, "expected 'group <label> <value>'"));
                }
                let label: usize = num(path, n, t.next(), "group label")?;
                if label >= k {
                    return Err(Error::parse(path, n, format!("group label {label} out of range")));
                }
                values[label] = num(path, n, t.next(), "group value")?;
            }
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, line) = next("a vertex label")?;
                labels.push(num(path, n, Some(line), "vertex label")?);
            }
            AlbedoModel::Grouped { labels, values }
        }
        Some("per_vertex") => {
            let count: usize = num(path, n, tokens.next(), "vertex count")?;
            let mut values = Vec::with_capacity(count);
            for _ in 0..count {
                let (n, line) = next("a vertex value")?;
                values.push(num(path, n, Some(line), "albedo")?);
            }
            AlbedoModel::PerVertex(values)
        }
        other => return Err(Error::parse(path, n, format!("unknown albedo model '{}'", other.unwrap_or("")))),
    };
    if let Some((n, _)) = lines.next() {
        return Err(Error::parse(path, n, "unexpected trailing data"));
    }
    let vertex_count = match &model {
        AlbedoModel::Global(_) => 0,
        AlbedoModel::Grouped { labels, .. } => labels.len(),
        AlbedoModel::PerVertex(v) => v.len(),
    };
    model
        .validate(vertex_count)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(model)
}
