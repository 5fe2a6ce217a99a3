//! Dataset and label files.
//!
//! CSV: comma separated, no quoting, `.` decimal point. An optional header
//! row names the columns; a last column named `label` holds integer ground
//! truth. Binary (`UDDL`), little endian:
//!
//! ```text
//! "UDDL" | version: u32 | n: u64 | d: u64 | has_labels: u8
//! n * d f64, row-major | n u32 labels if has_labels
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::pipeline::DomainDataset;
use crate::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"UDDL";
pub const BINARY_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv,
    Binary,
}

impl DataFormat {
    /// `.uddl` and `.bin` files are binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("uddl") | Some("bin") => DataFormat::Binary,
            _ => DataFormat::Csv,
        }
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

/// Parses CSV text. `name` becomes the domain name.
pub fn parse_csv(text: &str, name: &str) -> Result<DomainDataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let mut has_labels = false;
    let mut expected_cols = None;
    if let Some(&(_, first)) = lines.peek() {
        let cells: Vec<&str> = first.split(',').map(str::trim).collect();
        if cells.iter().any(|c| c.parse::<f64>().is_err()) {
            has_labels = cells.last() == Some(&"label");
            expected_cols = Some(cells.len());
            lines.next();
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (line_no, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let width = *expected_cols.get_or_insert(cells.len());
        if cells.len() != width {
            return Err(parse_err(
                format!("line {line_no}"),
                format!("expected {width} columns, found {}", cells.len()),
            ));
        }
        let n_features = if has_labels { width - 1 } else { width };
        for (col, cell) in cells[..n_features].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!("line {line_no}, column {}", col + 1), format!("not a number: {cell:?}"))
            })?;
            if !v.is_finite() {
                return Err(parse_err(format!("line {line_no}, column {}", col + 1), "non-finite value"));
            }
            values.push(v);
        }
        if has_labels {
            let cell = cells[width - 1];
            labels.push(cell.parse::<usize>().map_err(|_| {
                parse_err(format!("line {line_no}, column {width}"), format!("not a label: {cell:?}"))
            })?);
        }
        n += 1;
    }
    let d = if n == 0 {
        0
    } else {
        values.len() / n
    };
    if n == 0 || d == 0 {
        return Err(parse_err("end of file", "no feature data"));
    }
    let features = Array2::from_shape_vec((n, d), values).expect("rows checked to be equal length");
    DomainDataset::new(name, features, has_labels.then_some(labels))
}

/// CSV text with a header row; values use the shortest representation that
/// parses back to the same `f64`.
pub fn to_csv(data: &DomainDataset) -> String {
    let x = data.features();
    let d = x.ncols();
    let mut out = String::new();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if data.truth_labels.is_some() {
        header.push("label".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in x.outer_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        if let Some(l) = &data.truth_labels {
            let _ = write!(out, ",{}", l[i]);
        }
        out.push('\n');
    }
    out
}

pub fn to_binary(data: &DomainDataset) -> Result<Vec<u8>> {
    let x = data.features();
    let (n, d) = x.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n * d + 4 * n);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    out.push(u8::from(data.truth_labels.is_some()));
    for v in x.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(labels) = &data.truth_labels {
        for &l in labels {
            let l = u32::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} exceeds u32")))?;
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(parse_err(
                format!("byte offset {}", self.pos),
                format!("file truncated while reading {what}"),
            )),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_binary(bytes: &[u8], name: &str) -> Result<DomainDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != BINARY_MAGIC {
        return Err(parse_err("byte offset 0", "bad magic, expected \"UDDL\""));
    }
    let version = r.u32("version")?;
    if version != BINARY_VERSION {
        return Err(parse_err("byte offset 4", format!("unsupported version {version}")));
    }
    let n = r.u64("row count")? as usize;
    let d = r.u64("column count")? as usize;
    let flag_at = r.pos;
    let has_labels = match r.take(1, "label flag")?[0] {
        0 => false,
        1 => true,
        other => return Err(parse_err(format!("byte offset {flag_at}"), format!("bad label flag {other}"))),
    };
    let count = n
        .checked_mul(d)
        .ok_or_else(|| parse_err("byte offset 8", "matrix size overflows"))?;
    let mut values = Vec::with_capacity(count.min(bytes.len() / 8));
    for _ in 0..count {
        let at = r.pos;
        let v = f64::from_le_bytes(r.take(8, "features")?.try_into().expect("8 bytes"));
        if !v.is_finite() {
            return Err(parse_err(format!("byte offset {at}"), "non-finite value"));
        }
        values.push(v);
    }
    let labels = if has_labels {
        Some((0..n).map(|_| r.u32("labels").map(|l| l as usize)).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(parse_err(format!("byte offset {}", r.pos), "trailing bytes after data"));
    }
    let features = Array2::from_shape_vec((n, d), values).expect("n * d values read");
    DomainDataset::new(name, features, labels)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "domain".into())
}

/// Reads a dataset; the domain is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<DomainDataset> {
    let path = path.as_ref();
    let with_path = |e: Error| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    };
    match format {
        DataFormat::Csv => parse_csv(&std::fs::read_to_string(path)?, &stem(path)).map_err(with_path),
        DataFormat::Binary => parse_binary(&std::fs::read(path)?, &stem(path)).map_err(with_path),
    }
}

pub fn save_dataset(path: impl AsRef<Path>, data: &DomainDataset, format: DataFormat) -> Result<()> {
    match format {
        DataFormat::Csv => std::fs::write(path, to_csv(data))?,
        DataFormat::Binary => std::fs::write(path, to_binary(data)?)?,
    }
    Ok(())
}

/// One integer per line, in row order.
pub fn format_labels(labels: &[usize]) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(format!("line {}", i + 1), format!("not a label: {:?}", l.trim())))
        })
        .collect()
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    std::fs::write(path, format_labels(labels))?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    parse_labels(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}: {location}", path.display()),
            message,
        },
        other => other,
    })
}
