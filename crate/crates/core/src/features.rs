//! Feature files: embedding vectors and spatial feature maps as JSON Lines.
//!
//! Both formats start with a `{"dim": d}` header line. Embedding records are
//! `{"id", "vec"}`; feature-map records are `{"id", "h", "w", "c", "vec"}`
//! with `vec` row-major and channel-fastest.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FeatureMap, FeatureVector, TypeError};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{origin}:{line}: {msg}")]
    Parse { origin: String, line: usize, msg: String },
    #[error("{origin}: missing {{\"dim\": d}} header")]
    MissingHeader { origin: String },
    #[error("{origin}:{line}: record {id} has dim {actual}, header says {expected}")]
    Dim {
        origin: String,
        line: usize,
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("{origin}: duplicate id {id}")]
    Duplicate { origin: String, id: String },
    #[error("no features for id {0}")]
    Missing(String),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VecLine {
    id: String,
    vec: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapLine {
    id: String,
    h: usize,
    w: usize,
    c: usize,
    vec: Vec<f64>,
}

fn lines<'a, R: Read + 'a>(reader: R, origin: &'a str) -> impl Iterator<Item = Result<(usize, String), FeatureError>> + 'a {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .map(move |(i, l)| {
            l.map(|s| (i + 1, s)).map_err(|source| FeatureError::Io {
                path: origin.to_string(),
                source,
            })
        })
        .filter(|r| !matches!(r, Ok((_, s)) if s.trim().is_empty()))
}

fn parse<T: for<'de> Deserialize<'de>>(s: &str, origin: &str, line: usize) -> Result<T, FeatureError> {
    serde_json::from_str(s).map_err(|e| FeatureError::Parse {
        origin: origin.to_string(),
        line,
        msg: e.to_string(),
    })
}

fn write_line(out: &mut impl Write, value: &impl Serialize) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

/// In-memory embedding table keyed by id. Insertion order is preserved for writing.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    order: Vec<String>,
    vectors: HashMap<String, FeatureVector>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            order: Vec::new(),
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: FeatureVector) -> Result<(), TypeError> {
        if v.dim() != self.dim {
            return Err(TypeError::DimMismatch {
                expected: self.dim,
                actual: v.dim(),
            });
        }
        let id = id.into();
        if self.vectors.insert(id.clone(), v).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureVector> {
        self.vectors.get(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn read(reader: impl Read, origin: &str) -> Result<Self, FeatureError> {
        let mut it = lines(reader, origin);
        let (l, head) = it.next().ok_or_else(|| FeatureError::MissingHeader {
            origin: origin.to_string(),
        })??;
        let header: Header = parse(&head, origin, l)?;
        let mut store = Self::new(header.dim);
        for item in it {
            let (line, s) = item?;
            let rec: VecLine = parse(&s, origin, line)?;
            if rec.vec.len() != header.dim {
                return Err(FeatureError::Dim {
                    origin: origin.to_string(),
                    line,
                    id: rec.id,
                    expected: header.dim,
                    actual: rec.vec.len(),
                });
            }
            if store.vectors.contains_key(&rec.id) {
                return Err(FeatureError::Duplicate {
                    origin: origin.to_string(),
                    id: rec.id,
                });
            }
            store.insert(rec.id, FeatureVector::new(rec.vec)?)?;
        }
        Ok(store)
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_line(out, &Header { dim: self.dim })?;
        for id in &self.order {
            write_line(
                out,
                &VecLine {
                    id: id.clone(),
                    vec: self.vectors[id].values().to_vec(),
                },
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let f = File::open(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(f, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let io = |source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }
}

/// In-memory feature-map table keyed by id; every map has the header's channel count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapStore {
    channels: usize,
    order: Vec<String>,
    maps: HashMap<String, FeatureMap>,
}

impl FeatureMapStore {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            order: Vec::new(),
            maps: HashMap::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, m: FeatureMap) -> Result<(), TypeError> {
        if m.channels() != self.channels {
            return Err(TypeError::DimMismatch {
                expected: self.channels,
                actual: m.channels(),
            });
        }
        let id = id.into();
        if self.maps.insert(id.clone(), m).is_none() {
            self.order.push(id);
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&FeatureMap> {
        self.maps.get(id)
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn read(reader: impl Read, origin: &str) -> Result<Self, FeatureError> {
        let mut it = lines(reader, origin);
        let (l, head) = it.next().ok_or_else(|| FeatureError::MissingHeader {
            origin: origin.to_string(),
        })??;
        let header: Header = parse(&head, origin, l)?;
        let mut store = Self::new(header.dim);
        for item in it {
            let (line, s) = item?;
            let rec: MapLine = parse(&s, origin, line)?;
            if rec.c != header.dim {
                return Err(FeatureError::Dim {
                    origin: origin.to_string(),
                    line,
                    id: rec.id,
                    expected: header.dim,
                    actual: rec.c,
                });
            }
            if store.maps.contains_key(&rec.id) {
                return Err(FeatureError::Duplicate {
                    origin: origin.to_string(),
                    id: rec.id,
                });
            }
            let map = FeatureMap::new(rec.h, rec.w, rec.c, rec.vec)?;
            store.insert(rec.id, map)?;
        }
        Ok(store)
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        write_line(out, &Header { dim: self.channels })?;
        for id in &self.order {
            let m = &self.maps[id];
            let (h, w, c) = m.shape();
            write_line(
                out,
                &MapLine {
                    id: id.clone(),
                    h,
                    w,
                    c,
                    vec: m.values().to_vec(),
                },
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FeatureError> {
        let f = File::open(path).map_err(|source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read(f, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), FeatureError> {
        let io = |source| FeatureError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write(&mut w).map_err(io)?;
        w.flush().map_err(io)
    }
}
