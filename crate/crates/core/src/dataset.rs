//! Delimited dataset files: `id,ifd,loss0[,label],e_1,...,e_d`.
//!
//! The header declares the embedding dimension through its `e_*` columns. An
//! optional `label` column (class index) follows `loss0` for datasets that
//! feed the logistic trainer. Reals are written in shortest round-trip form,
//! so a write/read cycle is lossless.

use std::io::{Read, Write};
use std::path::Path;

use crate::clustering::SampleRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<SampleRecord>,
    /// Class label per sample, aligned with `samples`.
    pub labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(samples: Vec<SampleRecord>, labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = samples.first().map_or(0, |s| s.embedding.len());
        if let Some(s) = samples.iter().find(|s| s.embedding.len() != dim) {
            return Err(Error::domain(
                "embedding",
                format!("sample {} has dimension {} (expected {dim})", s.id, s.embedding.len()),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::domain("labels", "one label per sample required"));
            }
        }
        Ok(Self { dim, samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["id".to_string(), "ifd".into(), "loss0".into()];
        if self.labels.is_some() {
            header.push("label".into());
        }
        header.extend((1..=self.dim).map(|j| format!("e_{j}")));
        out.write_record(&header).map_err(csv_err)?;

        let mut row = Vec::with_capacity(header.len());
        for (i, s) in self.samples.iter().enumerate() {
            row.clear();
            row.push(s.id.to_string());
            row.push(s.ifd.to_string());
            row.push(s.current_loss.to_string());
            if let Some(l) = &self.labels {
                row.push(l[i].to_string());
            }
            row.extend(s.embedding.iter().map(f64::to_string));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "id" || cols[1] != "ifd" || cols[2] != "loss0" {
            return Err(Error::Parse {
                line: 1,
                msg: "header must start with id,ifd,loss0".into(),
            });
        }
        let has_label = cols.get(3) == Some(&"label");
        let first_e = if has_label { 4 } else { 3 };
        for (j, c) in cols[first_e..].iter().enumerate() {
            if *c != format!("e_{}", j + 1) {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected column e_{} but found `{c}`", j + 1),
                });
            }
        }
        let dim = cols.len() - first_e;

        let mut samples = Vec::new();
        let mut labels = has_label.then(Vec::new);
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
            if rec.len() != cols.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", cols.len(), rec.len()),
                });
            }
            let id: u64 = parse(&rec[0], line, "id")?;
            let ifd: f64 = parse(&rec[1], line, "ifd")?;
            if !(ifd >= 0.0) {
                return Err(Error::Parse { line, msg: format!("ifd must be nonnegative, got {ifd}") });
            }
            let loss: f64 = parse(&rec[2], line, "loss0")?;
            if let Some(l) = labels.as_mut() {
                l.push(parse(&rec[3], line, "label")?);
            }
            let embedding = (first_e..cols.len())
                .map(|j| parse(&rec[j], line, "embedding"))
                .collect::<Result<Vec<f64>>>()?;
            samples.push(SampleRecord::new(id, ifd, embedding, loss));
        }
        Ok(Self { dim, samples, labels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn parse<T: std::str::FromStr>(s: &str, line: usize, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| Error::Parse {
        line,
        msg: format!("bad {field} `{s}`: {e}"),
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, msg: format!("{other:?}") },
    }
}
