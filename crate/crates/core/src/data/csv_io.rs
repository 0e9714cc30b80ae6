//! Feature-table CSV: header `id,label,f0,f1,...,f{d-1}`; the label cell is
//! empty for unlabeled (stream) rows.

use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, Sample};
use crate::error::{Error, Result};

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn read_dataset<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(source, e.to_string()))?
        .clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(parse_err(source, "header must start with id,label,f0"));
    }
    let dim = headers.len() - 2;
    for (k, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f{k}") {
            return Err(parse_err(source, format!("expected column f{k}, found {h}")));
        }
    }
    let mut samples = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let loc = || format!("{source} row {}", line + 2);
        let rec = rec.map_err(|e| parse_err(loc(), e.to_string()))?;
        let id: u64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(loc(), format!("bad id {:?}", &rec[0])))?;
        let label = match rec[1].trim() {
            "" => None,
            l => Some(
                l.parse::<usize>()
                    .map_err(|_| parse_err(loc(), format!("bad label {l:?}")))?,
            ),
        };
        let features = rec
            .iter()
            .skip(2)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(loc(), format!("bad feature {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        samples.push(Sample {
            id,
            features,
            label,
        });
    }
    Dataset::new(dim, samples)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_dataset(std::fs::File::open(path)?, &path.display().to_string())
}

pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..data.dim()).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(csv_io_err)?;
    for s in data {
        let mut row = vec![s.id.to_string(), s.label.map(|l| l.to_string()).unwrap_or_default()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_io_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, std::fs::File::create(path)?)
}

fn csv_io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
