//! Dataset lifecycle: position/channel dataset container, binary file
//! format, and the three augmentation routes (conditional diffusion
//! sampling, Gaussian-noise replication, nearest-position lookup).

use crate::channelsim::{BeamspaceChannel, CMat, NormMode, Position};
use crate::checkpoint::{ByteReader, ByteWriter};
use crate::diffusion::{sample_batch, DenoiserModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::stream;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::path::Path;

/// How a record came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Reference,
    Cddim,
    Gaussian,
    Nearest,
}

impl Provenance {
    pub fn tag(&self) -> &'static str {
        match self {
            Provenance::Reference => "reference",
            Provenance::Cddim => "cddim",
            Provenance::Gaussian => "gaussian",
            Provenance::Nearest => "nearest",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            Provenance::Reference => 0,
            Provenance::Cddim => 1,
            Provenance::Gaussian => 2,
            Provenance::Nearest => 3,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Provenance::Reference,
            1 => Provenance::Cddim,
            2 => Provenance::Gaussian,
            3 => Provenance::Nearest,
            _ => return Err(Error::Format(format!("unknown provenance byte {b}"))),
        })
    }
}

/// One position/channel pair. Provenance is tracked per record so merged
/// datasets keep the origin of every sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub position: Position,
    pub channel: BeamspaceChannel,
    pub provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetMeta {
    pub scene_hash: u64,
    pub norm_mode: NormMode,
    pub creation_seed: u64,
    /// Tag of the step that produced the dataset as a whole.
    pub provenance: Provenance,
}

/// Ordered list of position/channel records plus provenance metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelDataset {
    pub records: Vec<Record>,
    pub meta: DatasetMeta,
}

impl ChannelDataset {
    pub fn new(records: Vec<Record>, meta: DatasetMeta) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (n_r, n_t) = (records[0].channel.n_r(), records[0].channel.n_t());
        for (i, r) in records.iter().enumerate() {
            if r.channel.n_r() != n_r || r.channel.n_t() != n_t {
                return Err(Error::Shape(format!(
                    "record {i} is {}x{}, dataset is {n_r}x{n_t}",
                    r.channel.n_r(),
                    r.channel.n_t()
                )));
            }
        }
        Ok(ChannelDataset { records, meta })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_r(&self) -> usize {
        self.records[0].channel.n_r()
    }

    pub fn n_t(&self) -> usize {
        self.records[0].channel.n_t()
    }

    pub fn positions(&self) -> Vec<Position> {
        self.records.iter().map(|r| r.position).collect()
    }

    /// Concatenate records; per-record provenance is preserved, dataset-level
    /// provenance comes from `other` (the newly generated part).
    pub fn merge(&self, other: &ChannelDataset) -> Result<ChannelDataset> {
        if self.n_r() != other.n_r() || self.n_t() != other.n_t() {
            return Err(Error::Shape("merging datasets of different shapes".into()));
        }
        if self.meta.norm_mode != other.meta.norm_mode {
            return Err(Error::InvalidArgument(
                "merging datasets with different normalization".into(),
            ));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        ChannelDataset::new(
            records,
            DatasetMeta {
                provenance: other.meta.provenance,
                ..self.meta
            },
        )
    }
}

const MAGIC: &[u8; 4] = b"CHDS";
const VERSION: u32 = 1;

fn norm_mode_byte(m: NormMode) -> u8 {
    match m {
        NormMode::Frobenius => 0,
        NormMode::Peak => 1,
    }
}

fn norm_mode_from_byte(b: u8) -> Result<NormMode> {
    Ok(match b {
        0 => NormMode::Frobenius,
        1 => NormMode::Peak,
        _ => return Err(Error::Format(format!("unknown norm mode byte {b}"))),
    })
}

/// Write the dataset: little-endian header, CRC32 of the payload, then the
/// packed reals. Round-trips bit-exactly.
pub fn write_dataset(ds: &ChannelDataset, path: &Path) -> Result<()> {
    if ds.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut payload = ByteWriter::new();
    for r in &ds.records {
        payload.put_u8(r.provenance.to_byte());
        payload.put_f64(r.position.x1);
        payload.put_f64(r.position.x2);
        payload.put_f64(r.position.x3);
        payload.put_f64_slice(&r.channel.0.to_real_vec());
    }
    let payload = payload.into_bytes();

    let mut head = ByteWriter::new();
    head.put_u32(VERSION);
    head.put_u32(ds.n_r() as u32);
    head.put_u32(ds.n_t() as u32);
    head.put_u64(ds.len() as u64);
    head.put_u8(norm_mode_byte(ds.meta.norm_mode));
    head.put_u8(ds.meta.provenance.to_byte());
    head.put_u64(ds.meta.scene_hash);
    head.put_u64(ds.meta.creation_seed);
    head.put_u32(crc32fast::hash(&payload));
    let head = head.into_bytes();

    let mut out = Vec::with_capacity(4 + head.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&head);
    out.extend_from_slice(&payload);
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`], verifying magic, version,
/// and checksum.
pub fn read_dataset(path: &Path) -> Result<ChannelDataset> {
    let raw = std::fs::read(path)?;
    if raw.len() < 4 || &raw[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut r = ByteReader::new(&raw[4..]);
    let version = r.get_u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "dataset version {version}, expected {VERSION}"
        )));
    }
    let n_r = r.get_u32()? as usize;
    let n_t = r.get_u32()? as usize;
    let count = r.get_u64()? as usize;
    let norm_mode = norm_mode_from_byte(r.get_u8()?)?;
    let provenance = Provenance::from_byte(r.get_u8()?)?;
    let scene_hash = r.get_u64()?;
    let creation_seed = r.get_u64()?;
    let want_crc = r.get_u32()?;

    let header_len = 4 + 4 + 4 + 4 + 8 + 1 + 1 + 8 + 8 + 4;
    let payload = &raw[header_len..];
    if crc32fast::hash(payload) != want_crc {
        return Err(Error::Format("payload checksum mismatch".into()));
    }

    let mut pr = ByteReader::new(payload);
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let provenance = Provenance::from_byte(pr.get_u8()?)?;
        let position = Position::new(pr.get_f64()?, pr.get_f64()?, pr.get_f64()?);
        let reals = pr.get_f64_vec(2 * n_r * n_t)?;
        let channel = BeamspaceChannel(CMat::from_real_vec(n_r, n_t, &reals)?);
        records.push(Record {
            position,
            channel,
            provenance,
        });
    }
    if !pr.done() {
        return Err(Error::Format("trailing bytes after records".into()));
    }
    ChannelDataset::new(
        records,
        DatasetMeta {
            scene_hash,
            norm_mode,
            creation_seed,
            provenance,
        },
    )
}

/// One deterministic diffusion sample per requested position. Positions must
/// not collide with training positions (exact match).
pub fn augment_cddim(
    model: &DenoiserModel,
    train: &ChannelDataset,
    positions: &[Position],
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<ChannelDataset> {
    if positions.is_empty() {
        return Err(Error::InvalidArgument("no positions to augment".into()));
    }
    for (i, p) in positions.iter().enumerate() {
        if p.range() > model.scene_radius() {
            return Err(Error::OutsideScene(p.x1, p.x2, p.x3));
        }
        if train.records.iter().any(|r| r.position == *p) {
            return Err(Error::InvalidArgument(format!(
                "augment position {i} duplicates a training position"
            )));
        }
    }
    let seeds: Vec<u64> = (0..positions.len())
        .map(|i| stream_seed_for(seed, i))
        .collect();
    let channels = sample_batch(positions, model, sched, &seeds);
    let records = positions
        .iter()
        .zip(channels)
        .map(|(p, channel)| Record {
            position: *p,
            channel,
            provenance: Provenance::Cddim,
        })
        .collect();
    ChannelDataset::new(
        records,
        DatasetMeta {
            provenance: Provenance::Cddim,
            creation_seed: seed,
            ..train.meta
        },
    )
}

fn stream_seed_for(seed: u64, index: usize) -> u64 {
    crate::rng::stream_seed(seed, "cddim-sample", index as u64)
}

/// Replicate each record `factor` times with i.i.d. complex Gaussian noise
/// `snr_db` below the record's Frobenius power. `snr_db = +inf` yields exact
/// copies. Positions are copied unchanged.
pub fn augment_gaussian(
    ds: &ChannelDataset,
    snr_db: f64,
    factor: usize,
    seed: u64,
) -> Result<ChannelDataset> {
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be >= 1".into()));
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("snr_db must not be NaN".into()));
    }
    let (n_r, n_t) = (ds.n_r(), ds.n_t());
    let mut records = Vec::with_capacity(ds.len() * factor);
    for (ri, r) in ds.records.iter().enumerate() {
        let sig_pow: f64 = r.channel.0.data().iter().map(|v| v.norm_sqr()).sum();
        let noise_pow = sig_pow * 10f64.powf(-snr_db / 10.0);
        // noise power spread uniformly over entries, half per real component
        let comp_std = (noise_pow / (2 * n_r * n_t) as f64).sqrt();
        for rep in 0..factor {
            let mut rng = stream(seed, "gaussian-aug", (ri * factor + rep) as u64);
            let mut chan = r.channel.clone();
            if comp_std > 0.0 {
                for v in chan.0.data_mut() {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    *v += Complex64::new(re * comp_std, im * comp_std);
                }
            }
            records.push(Record {
                position: r.position,
                channel: chan,
                provenance: Provenance::Gaussian,
            });
        }
    }
    ChannelDataset::new(
        records,
        DatasetMeta {
            provenance: Provenance::Gaussian,
            creation_seed: seed,
            ..ds.meta
        },
    )
}

/// For each query position, copy the channel of the Euclidean-nearest
/// training record; ties break toward the lowest record index.
pub fn augment_nearest(train: &ChannelDataset, positions: &[Position]) -> Result<ChannelDataset> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if positions.is_empty() {
        return Err(Error::InvalidArgument("no positions to augment".into()));
    }
    let records = positions
        .iter()
        .map(|q| {
            let mut best = (0usize, f64::INFINITY);
            for (i, r) in train.records.iter().enumerate() {
                let d = q.dist(&r.position);
                if d < best.1 {
                    best = (i, d);
                }
            }
            Record {
                position: *q,
                channel: train.records[best.0].channel.clone(),
                provenance: Provenance::Nearest,
            }
        })
        .collect();
    ChannelDataset::new(
        records,
        DatasetMeta {
            provenance: Provenance::Nearest,
            ..train.meta
        },
    )
}
