//! PCM WAV input and log Mel filterbank features.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_SHIFT: f64 = 0.010;
pub const DEFAULT_FRAME_LENGTH: f64 = 0.025;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::validation("sample_rate", "must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::validation("samples", "waveform is empty"));
        }
        Ok(Self { samples, sample_rate })
    }
}

/// `T × D` matrix of frame features, stored frame-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    frames: Vec<f32>,
    num_frames: usize,
    dim: usize,
    pub frame_shift: f64,
    pub frame_length: f64,
}

impl FeatureSequence {
    pub fn new(frames: Vec<f32>, num_frames: usize, dim: usize) -> Result<Self> {
        if num_frames == 0 || dim == 0 {
            return Err(Error::validation(
                "features",
                format!("empty {num_frames}x{dim} matrix"),
            ));
        }
        if frames.len() != num_frames * dim {
            return Err(Error::validation(
                "features",
                format!("{} values for a {num_frames}x{dim} matrix", frames.len()),
            ));
        }
        if let Some(i) = frames.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation("features", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            frames,
            num_frames,
            dim,
            frame_shift: DEFAULT_FRAME_SHIFT,
            frame_length: DEFAULT_FRAME_LENGTH,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("features", "ragged rows"));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    pub fn with_timing(mut self, frame_shift: f64, frame_length: f64) -> Self {
        self.frame_shift = frame_shift;
        self.frame_length = frame_length;
        self
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.frames.chunks_exact(self.dim)
    }

    /// Frames `start..end` as a new sequence with the same timing.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.num_frames {
            return Err(Error::validation(
                "slice",
                format!("[{start}, {end}) outside 0..{}", self.num_frames),
            ));
        }
        Ok(self.derived(self.frames[start * self.dim..end * self.dim].to_vec()))
    }

    /// Appends the frames of `other` (dimensions must agree).
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::validation(
                "concat",
                format!("dim {} vs {}", self.dim, other.dim),
            ));
        }
        let mut frames = self.frames.clone();
        frames.extend_from_slice(&other.frames);
        Ok(self.derived(frames))
    }

    fn derived(&self, frames: Vec<f32>) -> Self {
        Self {
            num_frames: frames.len() / self.dim,
            frames,
            dim: self.dim,
            frame_shift: self.frame_shift,
            frame_length: self.frame_length,
        }
    }

    /// Copy with the per-dimension mean over all frames subtracted.
    pub fn mean_normalized(&self) -> Self {
        let mut mean = vec![0f64; self.dim];
        for f in self.frames() {
            for (m, &v) in mean.iter_mut().zip(f) {
                *m += v as f64;
            }
        }
        let n = self.num_frames as f64;
        let frames = self
            .frames()
            .flat_map(|f| f.iter().zip(&mean).map(move |(&v, &m)| (v as f64 - m / n) as f32))
            .collect();
        self.derived(frames)
    }
}

/// Pads with trailing zero frames or clips to the centered window so that
/// the result has exactly `target_frames` frames.
pub fn pad_or_clip(seq: &FeatureSequence, target_frames: usize) -> Result<FeatureSequence> {
    if target_frames == 0 {
        return Err(Error::validation("target_frames", "must be at least 1"));
    }
    let t = seq.num_frames();
    if t == target_frames {
        return Ok(seq.clone());
    }
    if t < target_frames {
        let mut frames = seq.as_slice().to_vec();
        frames.resize(target_frames * seq.dim(), 0.0);
        return Ok(seq.derived(frames));
    }
    let start = (t - target_frames) / 2;
    seq.slice(start, start + target_frames)
}

// ---------------------------------------------------------------------------
// WAV

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a RIFF/WAVE PCM 16-bit mono file held in memory.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    let bad = |m: String| Error::WavFormat(m);
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + 16 > bytes.len() {
                    return Err(bad(format!("fmt chunk size={size} too small")));
                }
                let audio_format = le_u16(bytes, body);
                let channels = le_u16(bytes, body + 2);
                let sample_rate = le_u32(bytes, body + 4);
                let bits = le_u16(bytes, body + 14);
                if audio_format != 1 {
                    return Err(bad(format!("audio_format={audio_format} unsupported (PCM=1 required)")));
                }
                if channels != 1 {
                    return Err(bad(format!("channels={channels} unsupported")));
                }
                if bits != 16 {
                    return Err(bad(format!("bits_per_sample={bits} unsupported")));
                }
                if sample_rate == 0 {
                    return Err(bad("sample_rate=0 unsupported".into()));
                }
                format = Some((sample_rate, channels));
            }
            b"data" => {
                let (sample_rate, _) = format.ok_or_else(|| bad("data chunk before fmt chunk".into()))?;
                let available = bytes.len() - body;
                if available < size {
                    return Err(bad(format!(
                        "data chunk size={size} but only {available} bytes present"
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(bad(format!("data chunk size={size} is not a whole number of samples")));
                }
                let samples: Vec<f32> = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                    .collect();
                return Waveform::new(samples, sample_rate).map_err(|_| bad("data chunk is empty".into()));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(bad(if format.is_some() {
        "no data chunk".into()
    } else {
        "no fmt chunk".into()
    }))
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::WavFormat(m) => Error::WavFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Serializes as 16-bit PCM mono; samples are clamped to `[-1, 1)`.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = 2 * w.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Filterbank

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FbankConfig {
    pub frame_length: f64,
    pub frame_shift: f64,
    pub n_mels: usize,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means the Nyquist frequency.
    pub fmax: Option<f64>,
    pub log_floor: f64,
    pub preemphasis: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            frame_length: DEFAULT_FRAME_LENGTH,
            frame_shift: DEFAULT_FRAME_SHIFT,
            n_mels: 64,
            fmin: 20.0,
            fmax: None,
            log_floor: 1e-10,
            preemphasis: 0.97,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl FbankConfig {
    pub fn win_samples(&self, sample_rate: u32) -> usize {
        (self.frame_length * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.frame_shift * sample_rate as f64).round() as usize
    }

    pub fn fft_size(&self, sample_rate: u32) -> usize {
        self.win_samples(sample_rate).next_power_of_two()
    }

    pub fn upper_edge(&self, sample_rate: u32) -> f64 {
        self.fmax.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let fmax = self.upper_edge(sample_rate);
        if self.n_mels == 0 {
            return Err(Error::validation("n_mels", "must be at least 1"));
        }
        if self.win_samples(sample_rate) < 2 {
            return Err(Error::validation("frame_length", "window shorter than two samples"));
        }
        if self.hop_samples(sample_rate) == 0 {
            return Err(Error::validation("frame_shift", "hop shorter than one sample"));
        }
        if !(self.fmin >= 0.0 && self.fmin < fmax) {
            return Err(Error::validation(
                "fmin",
                format!("{} must lie in [0, fmax={fmax})", self.fmin),
            ));
        }
        if sample_rate as f64 + 1e-9 < 2.0 * fmax {
            return Err(Error::validation(
                "fmax",
                format!("{fmax} Hz exceeds Nyquist for sample_rate={sample_rate}"),
            ));
        }
        if self.log_floor.is_nan() || self.log_floor <= 0.0 {
            return Err(Error::validation("log_floor", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err(Error::validation("preemphasis", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Center frequencies (Hz) of the triangular filters.
    pub fn mel_centers(&self, sample_rate: u32) -> Vec<f64> {
        let edges = self.mel_edges(sample_rate);
        edges[1..edges.len() - 1].to_vec()
    }

    fn mel_edges(&self, sample_rate: u32) -> Vec<f64> {
        let (lo, hi) = (hz_to_mel(self.fmin), hz_to_mel(self.upper_edge(sample_rate)));
        let step = (hi - lo) / (self.n_mels + 1) as f64;
        (0..self.n_mels + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect()
    }

    /// `n_mels × (fft_size/2 + 1)` triangular weights on the FFT bin grid.
    pub fn mel_filterbank(&self, sample_rate: u32) -> Vec<Vec<f64>> {
        let nfft = self.fft_size(sample_rate);
        let edges = self.mel_edges(sample_rate);
        let bin_hz = sample_rate as f64 / nfft as f64;
        (0..self.n_mels)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..=nfft / 2)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Log Mel filterbank energies. Each frame is pre-emphasized, Hamming
/// windowed and zero-padded to the FFT size; its power spectrum is pooled by
/// the triangular Mel filters and `ln(max(energy, log_floor))` is taken.
pub fn fbank(w: &Waveform, cfg: &FbankConfig) -> Result<FeatureSequence> {
    cfg.validate(w.sample_rate)?;
    let (win, hop, nfft) = (
        cfg.win_samples(w.sample_rate),
        cfg.hop_samples(w.sample_rate),
        cfg.fft_size(w.sample_rate),
    );
    let n = w.samples.len();
    if n < win {
        return Err(Error::TooShort { got: n, min: win });
    }
    let num_frames = 1 + (n - win) / hop;

    let mut emph = Vec::with_capacity(n);
    emph.push(w.samples[0] as f64);
    for i in 1..n {
        emph.push(w.samples[i] as f64 - cfg.preemphasis * w.samples[i - 1] as f64);
    }
    let hamming: Vec<f64> = (0..win)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
        .collect();
    let filters = cfg.mel_filterbank(w.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);

    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut power = vec![0.0; nfft / 2 + 1];
    let mut out = Vec::with_capacity(num_frames * cfg.n_mels);
    for t in 0..num_frames {
        let frame = &emph[t * hop..t * hop + win];
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if i < win { frame[i] * hamming[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p = b.norm_sqr();
        }
        for filt in &filters {
            let e: f64 = filt.iter().zip(&power).map(|(a, b)| a * b).sum();
            out.push(e.max(cfg.log_floor).ln() as f32);
        }
    }
    Ok(FeatureSequence::new(out, num_frames, cfg.n_mels)?.with_timing(cfg.frame_shift, cfg.frame_length))
}
