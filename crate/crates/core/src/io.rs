//! Dataset directories, checkpoints and POD basis files.
//!
//! Binary files start with a 4-byte magic and a `u32` LE format version,
//! followed by sections `[tag: 4 bytes][len: u64 LE][payload][crc32: u32 LE]`.
//! The CRC covers the payload only. Arrays are raw little-endian `f64`.
//! The layout is described byte by byte in `docs/FORMATS.md`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Family};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid2D, GridDescriptor};
use crate::neuralop::{Gso, GsoConfig, Normalizer, ParamEntry};
use crate::pod::PodBasis;
use crate::scalar::Real;
use crate::training::AdamState;

pub const DATASET_MAGIC: &[u8; 4] = b"PDT1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKP1";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";

/// A parsed container: ordered `(tag, payload)` sections.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn push(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.sections.push((*tag, payload));
    }

    pub fn get(&self, tag: &[u8; 4]) -> Option<&[u8]> {
        self.sections.iter().find(|(t, _)| t == tag).map(|(_, p)| p.as_slice())
    }

    fn require(&self, tag: &[u8; 4]) -> Result<&[u8]> {
        self.get(tag)
            .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(tag))))
    }

    pub fn to_bytes(&self, magic: &[u8; 4]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for (tag, payload) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
            out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(Error::Format(format!("expected magic {}", String::from_utf8_lossy(magic))));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let mut pos = 8;
        let mut c = Container::default();
        while pos < bytes.len() {
            if bytes.len() - pos < 12 {
                return Err(Error::Format("size mismatch: truncated section header".into()));
            }
            let tag: [u8; 4] = bytes[pos..pos + 4].try_into().expect("4 bytes");
            let len = u64::from_le_bytes(bytes[pos + 4..pos + 12].try_into().expect("8 bytes"));
            pos += 12;
            let name = String::from_utf8_lossy(&tag).into_owned();
            let len = usize::try_from(len).map_err(|_| Error::Format(format!("section {name} too large")))?;
            if bytes.len() - pos < len.saturating_add(4) {
                return Err(Error::Format(format!("section {name} truncated: size mismatch")));
            }
            let payload = &bytes[pos..pos + len];
            let crc = u32::from_le_bytes(bytes[pos + len..pos + len + 4].try_into().expect("4 bytes"));
            if crc != crc32fast::hash(payload) {
                return Err(Error::Checksum(name));
            }
            c.sections.push((tag, payload.to_vec()));
            pos += len + 4;
        }
        Ok(c)
    }
}

fn f64_bytes<T: Real>(values: impl IntoIterator<Item = T>) -> Vec<u8> {
    values.into_iter().flat_map(|v| v.as_f64().to_le_bytes()).collect()
}

fn read_f64<T: Real>(bytes: &[u8]) -> Result<Vec<T>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("array payload is not a whole number of f64 values".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect())
}

/// Writes atomically enough for a single writer: temp file then rename.
fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            tool: "podnolab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub family: Family,
    pub grid: GridDescriptor,
    pub samples: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Node layout of every array: `[sample, channel, y, x]`.
    pub layout: String,
    pub has_epsilon: bool,
    pub seed: u64,
    /// Generator settings (solver steps, final time, laws).
    pub settings: serde_json::Value,
    pub provenance: Provenance,
}

const LAYOUT: &str = "sample,channel,y,x";

/// Writes `manifest.json` and `data.bin` under `dir` (created if needed).
pub fn save_dataset<T: Real>(dir: &Path, data: &Dataset<T>) -> Result<DatasetManifest> {
    data.validate()?;
    fs::create_dir_all(dir)?;
    let manifest = DatasetManifest {
        schema_version: FORMAT_VERSION,
        family: data.family,
        grid: data.grid.descriptor(),
        samples: data.len(),
        in_channels: data.in_channels(),
        out_channels: data.out_channels(),
        layout: LAYOUT.into(),
        has_epsilon: data.epsilons.is_some(),
        seed: data.seed,
        settings: data.settings.clone(),
        provenance: Provenance::default(),
    };
    let mut c = Container::default();
    c.push(b"INPT", f64_bytes(data.inputs.iter().flat_map(|f| f.data().iter().copied())));
    c.push(b"OUTP", f64_bytes(data.outputs.iter().flat_map(|f| f.data().iter().copied())));
    if let Some(e) = &data.epsilons {
        c.push(b"EPSV", f64_bytes(e.iter().copied()));
    }
    write_file(&dir.join(DATA_FILE), &c.to_bytes(DATASET_MAGIC))?;
    write_file(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest = serde_json::from_str(&text)?;
    if m.schema_version != FORMAT_VERSION {
        return Err(Error::Version {
            found: m.schema_version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(m)
}

fn split_fields<T: Real>(grid: &Grid2D<T>, channels: usize, samples: usize, values: Vec<T>) -> Result<Vec<Field<T>>> {
    let per = channels * grid.len();
    if values.len() != per * samples {
        return Err(Error::Format(format!(
            "size mismatch: manifest implies {} values, payload has {}",
            per * samples,
            values.len()
        )));
    }
    values.chunks_exact(per).map(|c| Field::from_vec(grid, channels, c.to_vec())).collect()
}

/// Reads a dataset directory; every count in the manifest must match the
/// payload exactly.
pub fn load_dataset<T: Real>(dir: &Path) -> Result<Dataset<T>> {
    let m = read_manifest(dir)?;
    if m.samples == 0 {
        return Err(Error::Empty("manifest declares zero samples".into()));
    }
    if m.layout != LAYOUT {
        return Err(Error::Format(format!("unsupported layout {}", m.layout)));
    }
    let grid = Grid2D::from_descriptor(&m.grid)?;
    let c = Container::from_bytes(&fs::read(dir.join(DATA_FILE))?, DATASET_MAGIC)?;
    let inputs = split_fields(&grid, m.in_channels, m.samples, read_f64(c.require(b"INPT")?)?)?;
    let outputs = split_fields(&grid, m.out_channels, m.samples, read_f64(c.require(b"OUTP")?)?)?;
    let epsilons = match (m.has_epsilon, c.get(b"EPSV")) {
        (true, Some(b)) => {
            let e: Vec<T> = read_f64(b)?;
            if e.len() != m.samples {
                return Err(Error::Format("size mismatch in epsilon section".into()));
            }
            Some(e)
        }
        (false, None) => None,
        _ => return Err(Error::Format("epsilon section disagrees with manifest".into())),
    };
    let data = Dataset {
        family: m.family,
        grid,
        inputs,
        outputs,
        epsilons,
        seed: m.seed,
        settings: m.settings,
    };
    data.validate()?;
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BasisHeader {
    grid: GridDescriptor,
    nmesh: usize,
    n_modes: usize,
    n_sigma: usize,
}

/// `PODB` payload: `u64` header length, JSON header, sigma list, then the
/// modes column by column.
pub fn basis_payload<T: Real>(b: &PodBasis<T>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&BasisHeader {
        grid: b.grid().descriptor(),
        nmesh: b.grid().len(),
        n_modes: b.n_modes(),
        n_sigma: b.sigma().len(),
    })?;
    let mut out = (header.len() as u64).to_le_bytes().to_vec();
    out.extend_from_slice(&header);
    out.extend(f64_bytes(b.sigma().iter().copied()));
    let modes = b.modes();
    for k in 0..b.n_modes() {
        out.extend(f64_bytes(modes.column(k).iter().copied()));
    }
    Ok(out)
}

pub fn basis_from_payload<T: Real>(p: &[u8]) -> Result<PodBasis<T>> {
    if p.len() < 8 {
        return Err(Error::Format("basis payload too short".into()));
    }
    let hl = u64::from_le_bytes(p[..8].try_into().expect("8 bytes")) as usize;
    if p.len() < 8 + hl {
        return Err(Error::Format("basis header truncated".into()));
    }
    let h: BasisHeader = serde_json::from_slice(&p[8..8 + hl])?;
    let grid = Grid2D::from_descriptor(&h.grid)?;
    let values: Vec<T> = read_f64(&p[8 + hl..])?;
    if h.nmesh != grid.len() || values.len() != h.n_sigma + h.nmesh * h.n_modes {
        return Err(Error::Format("size mismatch in basis payload".into()));
    }
    let sigma = values[..h.n_sigma].to_vec();
    let cols = &values[h.n_sigma..];
    let modes = Array2::from_shape_fn((h.nmesh, h.n_modes), |(i, k)| cols[k * h.nmesh + i]);
    PodBasis::from_parts(&grid, modes, sigma)
}

/// Standalone basis file: a `CKP1` container with a single `PODB` section.
pub fn save_basis<T: Real>(path: &Path, b: &PodBasis<T>) -> Result<()> {
    let mut c = Container::default();
    c.push(b"PODB", basis_payload(b)?);
    write_file(path, &c.to_bytes(CHECKPOINT_MAGIC))
}

pub fn load_basis<T: Real>(path: &Path) -> Result<PodBasis<T>> {
    let c = Container::from_bytes(&fs::read(path)?, CHECKPOINT_MAGIC)?;
    basis_from_payload(c.require(b"PODB")?)
}

/// JSON body of the `CONF` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: GsoConfig,
    pub grid: GridDescriptor,
    pub normalizer: Normalizer,
    pub epoch: usize,
    pub family: Option<Family>,
    /// Free-form provenance (training settings, dataset path).
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// `PTAB` rows: like [`ParamEntry`] with the offset in bytes into `PDAT`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub model: Gso<T>,
    pub epoch: usize,
    pub family: Option<Family>,
    pub optimizer: Option<AdamState<T>>,
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn save_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let m = &ck.model;
    let conf = CheckpointConfig {
        model: m.config().clone(),
        grid: m.grid().descriptor(),
        normalizer: m.normalizer().clone(),
        epoch: ck.epoch,
        family: ck.family,
        extra: ck.extra.clone(),
    };
    let table: Vec<TableRow> = m
        .table()
        .iter()
        .map(|e| TableRow {
            name: e.name.clone(),
            shape: e.shape.clone(),
            byte_offset: 8 * e.offset,
        })
        .collect();
    let mut c = Container::default();
    c.push(b"CONF", serde_json::to_vec_pretty(&conf)?);
    c.push(b"PTAB", serde_json::to_vec(&table)?);
    c.push(b"PDAT", f64_bytes(m.params().iter().copied()));
    if let Some(b) = m.basis() {
        c.push(b"PODB", basis_payload(b)?);
    }
    if let Some(st) = &ck.optimizer {
        let mut p = st.t.to_le_bytes().to_vec();
        p.extend(f64_bytes(st.m.iter().copied()));
        p.extend(f64_bytes(st.v.iter().copied()));
        c.push(b"OPTS", p);
    }
    write_file(path, &c.to_bytes(CHECKPOINT_MAGIC))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let c = Container::from_bytes(&fs::read(path)?, CHECKPOINT_MAGIC)?;
    let conf: CheckpointConfig = serde_json::from_slice(c.require(b"CONF")?)?;
    let table: Vec<TableRow> = serde_json::from_slice(c.require(b"PTAB")?)?;
    let params: Vec<T> = read_f64(c.require(b"PDAT")?)?;
    let grid = Grid2D::from_descriptor(&conf.grid)?;
    let basis = c.get(b"PODB").map(basis_from_payload::<T>).transpose()?;
    let model = Gso::from_parts(conf.model, &grid, basis.as_ref(), params, conf.normalizer)?;
    let expect: Vec<ParamEntry> = model.table().to_vec();
    let consistent = table.len() == expect.len()
        && table
            .iter()
            .zip(&expect)
            .all(|(r, e)| r.name == e.name && r.shape == e.shape && r.byte_offset == 8 * e.offset);
    if !consistent {
        return Err(Error::Format("parameter table does not match the configuration".into()));
    }
    let optimizer = match c.get(b"OPTS") {
        Some(p) => {
            let n = model.n_params();
            if p.len() != 8 + 16 * n {
                return Err(Error::Format("size mismatch in optimizer section".into()));
            }
            let t = u64::from_le_bytes(p[..8].try_into().expect("8 bytes"));
            let mv: Vec<T> = read_f64(&p[8..])?;
            Some(AdamState {
                m: mv[..n].to_vec(),
                v: mv[n..].to_vec(),
                t,
            })
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        epoch: conf.epoch,
        family: conf.family,
        optimizer,
        extra: conf.extra,
    })
}
