//! Plain-text point clouds.
//!
//! First line `pcs <version> N F M`, then one point per line:
//! `x y z f1 ... fF label`, with label `-1` for unlabeled clouds.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::PointCloud;

pub const FORMAT_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut out = format!(
        "pcs {} {} {} {}\n",
        FORMAT_VERSION,
        cloud.len(),
        cloud.num_features(),
        cloud.num_classes
    );
    for i in 0..cloud.len() {
        let mut fields: Vec<String> = cloud.coords.row(i).iter().map(|v| v.to_string()).collect();
        fields.extend(cloud.features.row(i).iter().map(|v| v.to_string()));
        fields.push(cloud.labels.as_ref().map_or("-1".to_string(), |l| l[i].to_string()));
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_cloud(cloud).as_bytes())?;
    Ok(())
}

pub fn parse_cloud(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "missing header"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "pcs" {
        return Err(parse_err(path, 1, "expected header `pcs <version> N F M`"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, 1, format!("bad header field {s:?}")));
    if num(h[1])? != FORMAT_VERSION as usize {
        return Err(parse_err(path, 1, format!("unsupported version {}", h[1])));
    }
    let (n, f, m) = (num(h[2])?, num(h[3])?, num(h[4])?);
    let width = 3 + f + 1;
    let mut coords = Array2::zeros((n, 3));
    let mut features = Array2::zeros((n, f));
    let mut labels = Vec::with_capacity(n);
    let mut unlabeled = 0usize;
    let mut rows = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(parse_err(path, lineno, format!("more than {n} points")));
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != width {
            return Err(parse_err(path, lineno, format!("expected {width} columns, found {}", cols.len())));
        }
        for (k, c) in cols[..3 + f].iter().enumerate() {
            let v: f64 = c.parse().map_err(|_| parse_err(path, lineno, format!("bad number {c:?}")))?;
            if k < 3 {
                coords[[rows, k]] = v;
            } else {
                features[[rows, k - 3]] = v;
            }
        }
        let label: i64 = cols[width - 1]
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label {:?}", cols[width - 1])))?;
        if label < 0 {
            unlabeled += 1;
            labels.push(0);
        } else {
            labels.push(label as usize);
        }
        rows += 1;
    }
    if rows != n {
        return Err(parse_err(path, rows + 2, format!("header declares {n} points, found {rows}")));
    }
    let labels = match unlabeled {
        0 => Some(labels),
        u if u == n => None,
        _ => return Err(parse_err(path, 1, "mix of labeled and unlabeled points")),
    };
    PointCloud::new(coords, features, labels, m)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_cloud(&fs::read_to_string(path)?, path)
}

/// Path of the clean-label sidecar of a cloud file.
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut s = path.as_ref().as_os_str().to_owned();
    s.push(".clean");
    PathBuf::from(s)
}

/// One label per line.
pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|_| parse_err(path, i + 1, format!("bad label {l:?}"))))
        .collect()
}
