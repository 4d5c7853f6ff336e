use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{Dataset, SynthMeta};
use crate::error::{Error, Result};

/// Reads a comma-separated file with a header row; the last column is the label.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_error)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            name: header.first().cloned().unwrap_or_default(),
            message: "need at least one feature column and a label column".into(),
        });
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // row numbers are 1-based and count the header
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            name: String::new(),
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(Error::Parse {
                row,
                column: record.len().min(width) + 1,
                name: header.get(record.len()).cloned().unwrap_or_default(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v = parse_cell(cell).map_err(|message| Error::Parse {
                row,
                column: j + 1,
                name: header[j].clone(),
                message,
            })?;
            if j + 1 == width {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let features = Array2::from_shape_vec((labels.len(), width - 1), values)
        .expect("row widths checked while reading");
    Dataset::new(features, labels)
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("missing value".into());
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(format!("non-finite value `{v}`")),
        Err(_) => Err(format!("not a number: `{cell}`")),
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Writes features and label with shortest round-trip float formatting.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    let mut header: Vec<String> = (1..=ds.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    writer.write_record(&header).map_err(csv_error)?;
    let mut line = Vec::with_capacity(ds.dim() + 1);
    for i in 0..ds.len() {
        line.clear();
        line.extend(ds.row(i).iter().map(|v| v.to_string()));
        line.push(ds.labels()[i].to_string());
        writer.write_record(&line).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes the generator sidecar (`<path>.meta`, one `key=value` per line).
pub fn write_meta(meta: &SynthMeta, path: impl AsRef<Path>) -> Result<PathBuf> {
    let w: Vec<String> = meta.w.iter().map(f64::to_string).collect();
    let text = format!(
        "kind={}\nseed={}\nw={}\nxi={}\noffset={}\n",
        meta.kind,
        meta.seed,
        w.join(","),
        meta.xi,
        meta.offset
    );
    let out = meta_path(path.as_ref());
    fs::write(&out, text)?;
    Ok(out)
}

/// Reads the sidecar next to `path`, if there is one.
pub fn read_meta(path: impl AsRef<Path>) -> Result<Option<SynthMeta>> {
    let p = meta_path(path.as_ref());
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p)?;
    let mut kind = None;
    let mut seed = None;
    let mut w = Vec::new();
    let mut xi = 5.0;
    let mut offset = 0.0;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad sidecar line `{line}`")))?;
        let value = value.trim();
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{v}` for {key}")));
        match key.trim() {
            "kind" => kind = Some(value.parse()?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| Error::Format(format!("bad seed `{value}`")))?),
            "w" if value.is_empty() => {}
            "w" => w = value.split(',').map(|v| num(v.trim())).collect::<Result<_>>()?,
            "xi" => xi = num(value)?,
            "offset" => offset = num(value)?,
            other => log::warn!("ignoring unknown sidecar key `{other}`"),
        }
    }
    match (kind, seed) {
        (Some(kind), Some(seed)) => Ok(Some(SynthMeta {
            kind,
            seed,
            w,
            xi,
            offset,
        })),
        _ => Err(Error::Format(format!("{} lacks kind or seed", p.display()))),
    }
}
