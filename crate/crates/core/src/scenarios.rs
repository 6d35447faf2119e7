//! Synthetic channel scenarios: a cluster-based URA channel generator plus a
//! binary container for channel datasets.
//!
//! Channels are sums of steered paths. Each user gets a handful of scattering
//! clusters; every cluster contributes paths whose angles wobble around the
//! cluster center and whose gains are circularly-symmetric complex Gaussian.
//! The resulting dataset has low-rank spatial correlation, which is the
//! structure the mixture and subspace machinery downstream feeds on.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{standard_complex, stream_rng, C64, CMatrix, CVector};

const DATASET_MAGIC: &[u8; 4] = b"CVD1";

/// Uniform rectangular array layout. Spacings are in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArrayGeometry {
    pub vertical_count: usize,
    pub horizontal_count: usize,
    pub vertical_spacing: f64,
    pub horizontal_spacing: f64,
}

impl Default for ArrayGeometry {
    fn default() -> Self {
        Self {
            vertical_count: 4,
            horizontal_count: 16,
            vertical_spacing: 1.0,
            horizontal_spacing: 0.5,
        }
    }
}

impl ArrayGeometry {
    pub fn antenna_count(&self) -> usize {
        self.vertical_count * self.horizontal_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.antenna_count() == 0 {
            return Err(Error::InvalidArgument(
                "array geometry must have at least one element".into(),
            ));
        }
        if self.vertical_spacing <= 0.0 || self.horizontal_spacing <= 0.0 {
            return Err(Error::InvalidArgument(
                "antenna spacings must be strictly positive".into(),
            ));
        }
        Ok(())
    }
}

/// How the total power of a user splits across its clusters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GainProfile {
    /// Every cluster carries the same fraction.
    Equal,
    /// Cluster c carries a fraction proportional to 10^(-c*decay_db/10).
    Exponential { decay_db: f64 },
}

/// Generative model for one cell's user channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterScenario {
    /// Inclusive range for the number of clusters per user.
    pub cluster_count: (usize, usize),
    pub paths_per_cluster: usize,
    /// Standard deviation of per-path angle offsets around the cluster center.
    pub angular_spread_deg: f64,
    /// Cluster centers are drawn uniformly from these intervals (degrees).
    pub azimuth_range_deg: (f64, f64),
    pub elevation_range_deg: (f64, f64),
    pub gain_profile: GainProfile,
}

impl Default for ClusterScenario {
    fn default() -> Self {
        Self {
            cluster_count: (1, 3),
            paths_per_cluster: 20,
            angular_spread_deg: 5.0,
            azimuth_range_deg: (-60.0, 60.0),
            elevation_range_deg: (-15.0, 15.0),
            gain_profile: GainProfile::Equal,
        }
    }
}

impl ClusterScenario {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.cluster_count;
        if lo == 0 || hi < lo {
            return Err(Error::InvalidArgument(format!(
                "cluster count range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            )));
        }
        if self.paths_per_cluster == 0 {
            return Err(Error::InvalidArgument("paths_per_cluster must be >= 1".into()));
        }
        if self.angular_spread_deg <= 0.0 {
            return Err(Error::InvalidArgument("angular spread must be > 0".into()));
        }
        for (name, (lo, hi)) in [
            ("azimuth", self.azimuth_range_deg),
            ("elevation", self.elevation_range_deg),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::InvalidArgument(format!(
                    "{name} range ({lo}, {hi}) must be a finite interval with lo <= hi"
                )));
            }
        }
        if let GainProfile::Exponential { decay_db } = self.gain_profile {
            if decay_db < 0.0 {
                return Err(Error::InvalidArgument("gain decay must be >= 0 dB".into()));
            }
        }
        Ok(())
    }

    /// Per-cluster power fractions for `count` clusters; they sum to one.
    pub fn cluster_powers(&self, count: usize) -> Vec<f64> {
        match self.gain_profile {
            GainProfile::Equal => vec![1.0 / count as f64; count],
            GainProfile::Exponential { decay_db } => {
                let raw: Vec<f64> =
                    (0..count).map(|c| 10f64.powf(-decay_db * c as f64 / 10.0)).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / total).collect()
            }
        }
    }
}

/// URA steering vector. Element (v, h) sits at index `v * horizontal_count + h`
/// and responds with phase 2pi (v d_v sin(el) + h d_h cos(el) sin(az)).
pub fn steering_vector(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> CVector {
    let m = geometry.antenna_count();
    let vertical_phase = geometry.vertical_spacing * elevation.sin();
    let horizontal_phase = geometry.horizontal_spacing * elevation.cos() * azimuth.sin();
    CVector::from_iterator(
        m,
        (0..geometry.vertical_count).flat_map(|v| {
            (0..geometry.horizontal_count).map(move |h| {
                let phase = TAU * (v as f64 * vertical_phase + h as f64 * horizontal_phase);
                C64::new(phase.cos(), phase.sin())
            })
        }),
    )
}

/// Draw one user channel: h = sum_c sum_p g_{c,p} a(theta_{c,p}).
///
/// With cluster powers summing to one and unit-modulus steering entries the
/// raw channel satisfies E[||h||^2] = M; `generate_dataset` rescales globally
/// afterwards to hit the requested normalization exactly.
pub fn sample_user_channel<R: Rng + ?Sized>(
    scenario: &ClusterScenario,
    geometry: &ArrayGeometry,
    rng: &mut R,
) -> CVector {
    let m = geometry.antenna_count();
    let (lo, hi) = scenario.cluster_count;
    let count = rng.gen_range(lo..=hi);
    let powers = scenario.cluster_powers(count);
    let spread = scenario.angular_spread_deg.to_radians();
    let mut channel = CVector::zeros(m);
    for &power in &powers {
        let azimuth_center = rng
            .gen_range(scenario.azimuth_range_deg.0..=scenario.azimuth_range_deg.1)
            .to_radians();
        let elevation_center = rng
            .gen_range(scenario.elevation_range_deg.0..=scenario.elevation_range_deg.1)
            .to_radians();
        let gain_scale = (power / scenario.paths_per_cluster as f64).sqrt();
        for _ in 0..scenario.paths_per_cluster {
            let az_offset: f64 = rng.sample(StandardNormal);
            let el_offset: f64 = rng.sample(StandardNormal);
            let azimuth = azimuth_center + spread * az_offset;
            let elevation = elevation_center + spread * el_offset;
            let gain = standard_complex(rng) * gain_scale;
            channel += steering_vector(geometry, azimuth, elevation) * gain;
        }
    }
    channel
}

/// A set of channel samples with a common antenna count.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDataset {
    antennas: usize,
    samples: Vec<CVector>,
    normalization: f64,
}

impl ChannelDataset {
    pub fn new(antennas: usize, samples: Vec<CVector>, normalization: f64) -> Result<Self> {
        if samples.iter().any(|s| s.len() != antennas) {
            return Err(Error::DimensionMismatch(
                "every sample must have length equal to the antenna count".into(),
            ));
        }
        Ok(Self { antennas, samples, normalization })
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[CVector] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &CVector {
        &self.samples[index]
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    /// Empirical mean of ||h||^2 over the dataset.
    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_squared()).sum::<f64>() / self.samples.len() as f64
    }

    /// Samples as the columns of an M x T matrix.
    pub fn as_matrix(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.antennas, self.samples.len());
        for (t, s) in self.samples.iter().enumerate() {
            out.set_column(t, s);
        }
        out
    }
}

/// Generate `count` channels and rescale globally so the empirical mean of
/// ||h||^2 equals `normalization` exactly. Each sample draws from its own
/// stream split off the master seed, so generation parallelizes without
/// changing the result.
pub fn generate_dataset(
    scenario: &ClusterScenario,
    geometry: &ArrayGeometry,
    count: usize,
    normalization: f64,
    seed: u64,
) -> Result<ChannelDataset> {
    geometry.validate()?;
    scenario.validate()?;
    if count == 0 {
        return Err(Error::InvalidArgument("dataset sample count must be > 0".into()));
    }
    if normalization <= 0.0 {
        return Err(Error::InvalidArgument("normalization target must be > 0".into()));
    }
    let mut samples: Vec<CVector> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            sample_user_channel(scenario, geometry, &mut rng)
        })
        .collect();
    let mean_power =
        samples.iter().map(|s| s.norm_squared()).sum::<f64>() / count as f64;
    let scale = C64::new((normalization / mean_power).sqrt(), 0.0);
    for s in &mut samples {
        *s *= scale;
    }
    ChannelDataset::new(geometry.antenna_count(), samples, normalization)
}

/// Write a dataset in the CVD1 container:
/// magic `CVD1` | u32 LE antenna count | u64 LE sample count | samples, each
/// entry as two little-endian f64 (re, im), sample-major.
pub fn write_dataset<P: AsRef<Path>>(dataset: &ChannelDataset, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(DATASET_MAGIC)?;
    w.write_u32::<LittleEndian>(dataset.antennas as u32)?;
    w.write_u64::<LittleEndian>(dataset.samples.len() as u64)?;
    for sample in &dataset.samples {
        for entry in sample.iter() {
            w.write_f64::<LittleEndian>(entry.re)?;
            w.write_f64::<LittleEndian>(entry.im)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<P: AsRef<Path>>(path: P) -> Result<ChannelDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for CVD1 header".into()))?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {magic:?}, expected CVD1"
        )));
    }
    let antennas = r
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format("missing antenna count in CVD1 header".into()))?
        as usize;
    if antennas == 0 {
        return Err(Error::Format("CVD1 header declares zero antennas".into()));
    }
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|_| Error::Format("missing sample count in CVD1 header".into()))?
        as usize;
    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let mut sample = CVector::zeros(antennas);
        for i in 0..antennas {
            let re = read_f64_or_truncated(&mut r, index, count)?;
            let im = read_f64_or_truncated(&mut r, index, count)?;
            sample[i] = C64::new(re, im);
        }
        samples.push(sample);
    }
    let mut dataset = ChannelDataset::new(antennas, samples, 0.0)?;
    dataset.normalization = dataset.mean_power();
    Ok(dataset)
}

fn read_f64_or_truncated<R: Read>(r: &mut R, index: usize, count: usize) -> Result<f64> {
    r.read_f64::<LittleEndian>().map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!(
                "payload ends inside sample {index} of {count} declared samples"
            ))
        } else {
            Error::Io(e)
        }
    })
}

/// Debug-friendly CSV export: one sample per row, columns
/// re_0,im_0,...,re_{M-1},im_{M-1}.
pub fn export_dataset_csv<P: AsRef<Path>>(dataset: &ChannelDataset, path: P) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> =
        (0..dataset.antennas).flat_map(|i| [format!("re_{i}"), format!("im_{i}")]).collect();
    writeln!(w, "{}", header.join(","))?;
    for sample in &dataset.samples {
        let row: Vec<String> =
            sample.iter().flat_map(|e| [format!("{}", e.re), format!("{}", e.im)]).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}
