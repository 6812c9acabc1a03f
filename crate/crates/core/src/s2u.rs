//! Speech-to-unit coding: k-means content units and speaker-normalized
//! log-F0 pitch units, both at 50 Hz.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::util::{hash_parts, hash_str, unit_f64};

/// Unit frame rate.
pub const FRAME_RATE_HZ: f64 = 50.0;
/// Frame hop in seconds.
pub const FRAME_HOP_S: f64 = 1.0 / FRAME_RATE_HZ;

const STD_FLOOR: f64 = 1e-3;
const CODEBOOK_MAGIC: &[u8; 8] = b"CHATSCB\0";
const PITCH_MAGIC: &[u8; 8] = b"CHATSF0\0";
const KMEANS_MAX_ITER: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let flat: Vec<f64> = self.centroids.iter().flatten().copied().collect();
        io::save_params(path, CODEBOOK_MAGIC, &(self.k(), self.dim()), &flat)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ((k, dim), flat): ((usize, usize), Vec<f64>) = io::load_params(path, CODEBOOK_MAGIC)?;
        if flat.len() != k * dim || dim == 0 {
            return Err(Error::Format(format!("codebook holds {} values, expected {k} x {dim}", flat.len())));
        }
        Ok(Codebook { centroids: flat.chunks(dim).map(<[f64]>::to_vec).collect() })
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Result of a k-means fit, with the objective after every Lloyd iteration.
#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub codebook: Codebook,
    pub inertia: Vec<f64>,
}

pub fn fit_kmeans(features: &[Vec<f64>], k: usize, seed: u64) -> Result<Codebook> {
    fit_kmeans_traced(features, k, seed).map(|f| f.codebook)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops changing.
pub fn fit_kmeans_traced(features: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if features.len() < k {
        return Err(Error::input(format!("{} feature vectors cannot form {k} clusters", features.len())));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::input("feature vectors have inconsistent dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![features[rng.gen_range(0..features.len())].clone()];
    let mut d2: Vec<f64> = features.iter().map(|f| sq_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.gen_range(0..features.len())
        };
        let c = features[pick].clone();
        for (d, f) in d2.iter_mut().zip(features) {
            *d = d.min(sq_dist(f, &c));
        }
        centroids.push(c);
    }

    let mut book = Codebook { centroids };
    let mut assign: Vec<usize> = features.iter().map(|f| book.nearest(f)).collect();
    let mut inertia = vec![objective(features, &book, &assign)];
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in features.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(f) {
                *s += x;
            }
        }
        for (c, (s, &n)) in book.centroids.iter_mut().zip(sums.iter().zip(&counts)) {
            // empty clusters keep their previous centroid
            if n > 0 {
                for (ci, si) in c.iter_mut().zip(s) {
                    *ci = si / n as f64;
                }
            }
        }
        let next: Vec<usize> = features.iter().map(|f| book.nearest(f)).collect();
        inertia.push(objective(features, &book, &next));
        if next == assign {
            break;
        }
        assign = next;
    }
    Ok(KMeansFit { codebook: book, inertia })
}

fn objective(features: &[Vec<f64>], book: &Codebook, assign: &[usize]) -> f64 {
    features.iter().zip(assign).map(|(f, &a)| sq_dist(f, &book.centroids[a])).sum()
}

/// Map each frame to its nearest centroid.
pub fn quantize_content(features: &[Vec<f64>], codebook: &Codebook) -> Result<Vec<u32>> {
    let dim = codebook.dim();
    features
        .iter()
        .map(|f| {
            if f.len() != dim {
                Err(Error::input(format!("feature dimension {} does not match codebook {dim}", f.len())))
            } else {
                Ok(codebook.nearest(f) as u32)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerPitchStats {
    pub speaker_id: String,
    pub mean_log_f0: f64,
    pub std_log_f0: f64,
}

/// Mean and standard deviation of log F0 over the voiced frames (f0 > 0).
///
/// A zero standard deviation is floored at 1e-3.
pub fn fit_pitch_stats(speaker_id: &str, tracks: &[&[f64]]) -> Result<SpeakerPitchStats> {
    let logs: Vec<f64> = tracks.iter().flat_map(|t| t.iter()).filter(|&&f| f > 0.0).map(|f| f.ln()).collect();
    if logs.len() < 2 {
        return Err(Error::input(format!(
            "speaker {speaker_id} has {} voiced frames; at least 2 are needed",
            logs.len()
        )));
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(SpeakerPitchStats { speaker_id: speaker_id.to_string(), mean_log_f0: mean, std_log_f0: var.sqrt().max(STD_FLOOR) })
}

pub fn save_pitch_stats(path: &std::path::Path, stats: &[SpeakerPitchStats]) -> Result<()> {
    let ids: Vec<&str> = stats.iter().map(|s| s.speaker_id.as_str()).collect();
    let flat: Vec<f64> = stats.iter().flat_map(|s| [s.mean_log_f0, s.std_log_f0]).collect();
    io::save_params(path, PITCH_MAGIC, &ids, &flat)
}

pub fn load_pitch_stats(path: &std::path::Path) -> Result<Vec<SpeakerPitchStats>> {
    let (ids, flat): (Vec<String>, Vec<f64>) = io::load_params(path, PITCH_MAGIC)?;
    if flat.len() != 2 * ids.len() {
        return Err(Error::Format("pitch statistics file is inconsistent".into()));
    }
    Ok(ids
        .into_iter()
        .zip(flat.chunks(2))
        .map(|(speaker_id, v)| SpeakerPitchStats { speaker_id, mean_log_f0: v[0], std_log_f0: v[1] })
        .collect())
}

/// Uniform binning of clamped z-scored log F0. Bin 0 is unvoiced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchQuantizer {
    pub n_bins: u32,
    pub z_clamp: f64,
}

impl Default for PitchQuantizer {
    fn default() -> Self {
        PitchQuantizer { n_bins: 32, z_clamp: 3.0 }
    }
}

impl PitchQuantizer {
    pub const UNVOICED: u32 = 0;

    pub fn new(n_bins: u32, z_clamp: f64) -> Result<Self> {
        if n_bins < 2 || !(z_clamp > 0.0) {
            return Err(Error::input("pitch quantizer needs n_bins >= 2 and a positive clamp"));
        }
        Ok(PitchQuantizer { n_bins, z_clamp })
    }

    pub fn voiced_bins(&self) -> u32 {
        self.n_bins - 1
    }

    fn bin_width(&self) -> f64 {
        2.0 * self.z_clamp / self.voiced_bins() as f64
    }

    pub fn quantize(&self, f0: f64, stats: &SpeakerPitchStats) -> u32 {
        if !(f0 > 0.0) {
            return Self::UNVOICED;
        }
        let z = ((f0.ln() - stats.mean_log_f0) / stats.std_log_f0).clamp(-self.z_clamp, self.z_clamp);
        let idx = ((z + self.z_clamp) / self.bin_width()).floor() as i64;
        1 + idx.clamp(0, self.voiced_bins() as i64 - 1) as u32
    }

    /// Bin-center F0 in Hz; 0 for the unvoiced unit.
    pub fn dequantize(&self, unit: u32, stats: &SpeakerPitchStats) -> Result<f64> {
        if unit >= self.n_bins {
            return Err(Error::input(format!("pitch unit {unit} out of range 0..{}", self.n_bins)));
        }
        if unit == Self::UNVOICED {
            return Ok(0.0);
        }
        let z = -self.z_clamp + (unit as f64 - 0.5) * self.bin_width();
        Ok((stats.mean_log_f0 + z * stats.std_log_f0).exp())
    }
}

pub fn quantize_pitch(f0_track: &[f64], stats: &SpeakerPitchStats, quantizer: &PitchQuantizer) -> Vec<u32> {
    f0_track.iter().map(|&f| quantizer.quantize(f, stats)).collect()
}

pub fn dequantize_pitch(unit: u32, stats: &SpeakerPitchStats, quantizer: &PitchQuantizer) -> Result<f64> {
    quantizer.dequantize(unit, stats)
}

/// One channel of a dialogue as frame-level unit streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub dialogue_id: String,
    pub channel: crate::dialogue_data::Channel,
    pub content: Vec<u32>,
    pub pitch: Vec<u32>,
}

/// Per-frame description handed to a feature provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    /// `None` for silence.
    pub phoneme: Option<String>,
    pub f0: f64,
}

/// Source of frame-level acoustic features at 50 Hz.
pub trait FeatureProvider {
    fn dim(&self) -> usize;
    fn features(&self, frames: &[FrameLabel]) -> Vec<Vec<f64>>;
}

/// Deterministic stand-in for a self-supervised speech encoder.
///
/// Every phoneme gets a seeded random center with norm around `spread`; a
/// weak pitch term and per-frame jitter are added on top.
#[derive(Clone, Debug)]
pub struct SyntheticFeatures {
    pub dim: usize,
    pub seed: u64,
    pub spread: f64,
    pub jitter: f64,
}

impl Default for SyntheticFeatures {
    fn default() -> Self {
        SyntheticFeatures { dim: 16, seed: 7, spread: 10.0, jitter: 0.05 }
    }
}

impl SyntheticFeatures {
    fn center(&self, phoneme: Option<&str>) -> Vec<f64> {
        let key = phoneme.map_or(0, hash_str);
        (0..self.dim)
            .map(|d| (unit_f64(hash_parts(&[self.seed, key, d as u64])) - 0.5) * 2.0 * self.spread)
            .collect()
    }
}

impl FeatureProvider for SyntheticFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, frames: &[FrameLabel]) -> Vec<Vec<f64>> {
        frames
            .iter()
            .enumerate()
            .map(|(t, fr)| {
                let mut v = self.center(fr.phoneme.as_deref());
                let pitch = if fr.f0 > 0.0 { 0.01 * (fr.f0 / 100.0).ln() } else { 0.0 };
                for (d, x) in v.iter_mut().enumerate() {
                    let h = hash_parts(&[self.seed ^ 0xfeed, t as u64, d as u64]);
                    *x += (unit_f64(h) - 0.5) * 2.0 * self.jitter + pitch;
                }
                v
            })
            .collect()
    }
}
