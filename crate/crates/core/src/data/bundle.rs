//! Feature bundle container.
//!
//! Layout: an 8-byte little-endian manifest length, the UTF-8 manifest,
//! zero padding to an 8-byte boundary, then the payload. The manifest's first
//! line is `crnkit-bundle v1 task=<kind> samples=<n>`; each following line is
//! `name dtype dim0,dim1,... offset` with offsets relative to the payload
//! start and 8-byte aligned. Payload values are little-endian binary32.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{Sample, Target, TaskKind};
use crate::diffcore::Tensor;
use crate::{Error, Result};

const MAGIC: &str = "crnkit-bundle";
const VERSION: &str = "v1";
const ALIGN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl BundleEntry {
    /// Widens to a `Tensor`; rank-1 entries become single rows.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let shape = if self.shape.len() == 1 { vec![1, self.shape[0]] } else { self.shape.clone() };
        Tensor::new(shape, self.data.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    task: TaskKind,
    samples: usize,
    entries: Vec<BundleEntry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

fn format_err(entry: &str, reason: impl Into<String>) -> Error {
    Error::Format {
        entry: entry.to_string(),
        reason: reason.into(),
    }
}

pub(crate) fn sample_key(i: usize, field: &str) -> String {
    format!("s{i:04}/{field}")
}

impl FeatureBundle {
    pub fn new(task: TaskKind, samples: usize) -> Self {
        Self {
            task,
            samples,
            entries: Vec::new(),
        }
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn entries(&self) -> &[BundleEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&BundleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(format_err(&name, "names must be non-empty and free of whitespace"));
        }
        if self.get(&name).is_some() {
            return Err(format_err(&name, "duplicate entry name"));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(format_err(
                &name,
                format!("shape {shape:?} does not hold {} values", data.len()),
            ));
        }
        self.entries.push(BundleEntry { name, shape, data });
        Ok(())
    }

    /// Entries with the payload offsets they are written at.
    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut offset = 0;
        self.entries
            .iter()
            .map(|e| {
                let m = ManifestEntry {
                    name: e.name.clone(),
                    dtype: "f32".into(),
                    shape: e.shape.clone(),
                    offset,
                };
                offset = align(offset + 4 * e.data.len());
                m
            })
            .collect()
    }

    pub fn labels(&self) -> Result<&[f32]> {
        let e = self.get("labels").ok_or_else(|| format_err("labels", "missing"))?;
        if e.data.len() != self.samples {
            return Err(format_err("labels", format!("expected {} labels", self.samples)));
        }
        Ok(&e.data)
    }

    fn tensor(&self, i: usize, field: &str) -> Result<Option<Tensor>> {
        self.get(&sample_key(i, field)).map(BundleEntry::to_tensor).transpose()
    }

    /// Decodes sample `i`.
    pub fn sample(&self, i: usize) -> Result<Sample> {
        if i >= self.samples {
            return Err(Error::Index {
                index: i,
                len: self.samples,
            });
        }
        let label = self.labels()?[i];
        let target = match self.task {
            TaskKind::Count => Target::Count(label as f64),
            _ => Target::Class(label as usize),
        };
        let question = self
            .tensor(i, "question")?
            .ok_or_else(|| format_err(&sample_key(i, "question"), "missing"))?;
        let (answers, n_answers) = match self.get(&sample_key(i, "answers")) {
            Some(e) => {
                let n = *e.shape.first().unwrap_or(&0);
                let cols = *e.shape.last().unwrap_or(&0);
                let data = e.data.iter().map(|&v| v as f64).collect::<Vec<_>>();
                let rows = data.len() / cols.max(1);
                (Some(Tensor::new(vec![rows, cols], data)?), n)
            }
            None => (None, 0),
        };
        Ok(Sample {
            frames: self.tensor(i, "frames")?,
            motion: self.tensor(i, "motion")?,
            question,
            answers,
            n_answers,
            subtitle: self.tensor(i, "subtitle")?,
            target,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest();
        let mut text = format!("{MAGIC} {VERSION} task={} samples={}\n", self.task, self.samples);
        for m in &manifest {
            let dims: Vec<String> = m.shape.iter().map(usize::to_string).collect();
            text.push_str(&format!("{} {} {} {}\n", m.name, m.dtype, dims.join(","), m.offset));
        }
        let head = align(8 + text.len());
        let payload_len = manifest
            .last()
            .zip(self.entries.last())
            .map_or(0, |(m, e)| align(m.offset + 4 * e.data.len()));
        let mut out = Vec::with_capacity(head + payload_len);
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.resize(head, 0);
        for (m, e) in manifest.iter().zip(&self.entries) {
            out.resize(head + m.offset, 0);
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.resize(head + payload_len, 0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = |r: String| format_err("<header>", r);
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| header("file shorter than the length prefix".into()))?;
        let text_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| header("manifest too long".into()))?;
        let text = bytes
            .get(8..8usize.saturating_add(text_len))
            .ok_or_else(|| header("manifest runs past end of file".into()))?;
        let text = std::str::from_utf8(text).map_err(|_| header("manifest is not UTF-8".into()))?;
        let payload = bytes.get(align(8 + text_len)..).unwrap_or(&[]);

        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| header("empty manifest".into()))?;
        let fields: Vec<&str> = first.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != MAGIC || fields[1] != VERSION {
            return Err(header(format!("unrecognised header line `{first}`")));
        }
        let task: TaskKind = fields[2]
            .strip_prefix("task=")
            .ok_or_else(|| header("missing task=".into()))?
            .parse()
            .map_err(|_| header(format!("unknown task in `{}`", fields[2])))?;
        let samples: usize = fields[3]
            .strip_prefix("samples=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| header("missing or malformed samples=".into()))?;

        let mut bundle = Self::new(task, samples);
        let mut seen = HashSet::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let name = *parts.first().unwrap_or(&"<blank>");
            if parts.len() != 4 {
                return Err(format_err(name, format!("malformed manifest line `{line}`")));
            }
            if !seen.insert(name) {
                return Err(format_err(name, "duplicate entry name"));
            }
            if parts[1] != "f32" {
                return Err(format_err(name, format!("unsupported dtype `{}`", parts[1])));
            }
            let shape = parts[2]
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| format_err(name, format!("bad shape `{}`", parts[2])))?;
            let offset: usize = parts[3]
                .parse()
                .map_err(|_| format_err(name, format!("bad offset `{}`", parts[3])))?;
            if !offset.is_multiple_of(ALIGN) {
                return Err(format_err(name, format!("offset {offset} is not {ALIGN}-byte aligned")));
            }
            let count: usize = shape.iter().product();
            let end = count
                .checked_mul(4)
                .and_then(|b| b.checked_add(offset))
                .ok_or_else(|| format_err(name, "extent overflows"))?;
            let raw = payload.get(offset..end).ok_or_else(|| {
                format_err(
                    name,
                    format!("needs payload bytes {offset}..{end}, only {} present", payload.len()),
                )
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            bundle.entries.push(BundleEntry {
                name: name.to_string(),
                shape,
                data,
            });
        }
        Ok(bundle)
    }
}

pub fn save_feature_bundle(bundle: &FeatureBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, bundle.to_bytes())?;
    Ok(())
}

pub fn load_feature_bundle(path: impl AsRef<Path>) -> Result<FeatureBundle> {
    FeatureBundle::from_bytes(&fs::read(path)?)
}
