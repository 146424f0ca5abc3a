//! Audio to the per-frame scalar that drives `u_audio`.
//!
//! Each analysis frame is 64 mono samples, Hann-windowed and transformed;
//! bins 0..32 of the magnitude spectrum form the 32 bands. The frame energy
//! (mean band magnitude) is normalized against a slowly decaying running
//! maximum so that silence maps to 0 and the loudest recent frame to 1.

mod wav;

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use wav::{decode_wav, encode_wav_pcm16, WavError};

pub const FRAME_LEN: usize = 64;
pub const BAND_COUNT: usize = FRAME_LEN / 2;
/// Per-frame decay applied to the running maximum.
pub const DEFAULT_DECAY: f64 = 0.999;
const EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AudioError {
    #[error("frame must hold {FRAME_LEN} samples, got {0}")]
    FrameLength(usize),
    #[error("clip is empty")]
    EmptyClip,
    #[error("sample rate must be positive")]
    SampleRate,
    #[error("hop must be a positive number of seconds, got {0}")]
    Hop(f64),
    #[error("sample {index} is not finite")]
    NonFinite { index: usize },
    #[error("malformed feature file, line {line}: {message}")]
    TimelineFormat { line: usize, message: String },
}

/// Mono PCM in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl PcmClip {
    /// Samples outside [-1, 1] are clipped.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        Self::from_interleaved(samples, 1, sample_rate)
    }

    /// Averages interleaved channels down to mono.
    pub fn from_interleaved(
        interleaved: Vec<f32>,
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::SampleRate);
        }
        if let Some(index) = interleaved.iter().position(|s| !s.is_finite()) {
            return Err(AudioError::NonFinite { index });
        }
        let channels = channels.max(1);
        let samples = if channels == 1 {
            interleaved.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect()
        } else {
            interleaved
                .chunks(channels)
                .map(|c| (c.iter().sum::<f32>() / c.len() as f32).clamp(-1.0, 1.0))
                .collect()
        };
        Ok(PcmClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSpectrum {
    pub magnitudes: [f64; BAND_COUNT],
    pub frame_index: usize,
}

/// Reusable windowed 64-point transform.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: [f64; FRAME_LEN],
}

impl Default for SpectrumAnalyzer {
    fn default() -> Self {
        Self::new()
    }
}

impl SpectrumAnalyzer {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FRAME_LEN);
        SpectrumAnalyzer {
            fft,
            window: hann_window(),
        }
    }

    pub fn analyze(&self, frame: &[f64], frame_index: usize) -> Result<BandSpectrum, AudioError> {
        if frame.len() != FRAME_LEN {
            return Err(AudioError::FrameLength(frame.len()));
        }
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let mut magnitudes = [0.0; BAND_COUNT];
        for (m, c) in magnitudes.iter_mut().zip(&buf) {
            *m = c.norm();
        }
        Ok(BandSpectrum {
            magnitudes,
            frame_index,
        })
    }
}

/// Periodic Hann window of length [`FRAME_LEN`].
pub fn hann_window() -> [f64; FRAME_LEN] {
    let mut w = [0.0; FRAME_LEN];
    for (n, v) in w.iter_mut().enumerate() {
        *v = 0.5 - 0.5 * (2.0 * PI * n as f64 / FRAME_LEN as f64).cos();
    }
    w
}

/// Magnitudes of bins 0..32 of the Hann-windowed 64-point DFT of `frame`.
pub fn band_spectrum(frame: &[f64]) -> Result<BandSpectrum, AudioError> {
    SpectrumAnalyzer::new().analyze(frame, 0)
}

/// Mean band magnitude.
pub fn energy(s: &BandSpectrum) -> f64 {
    s.magnitudes.iter().sum::<f64>() / BAND_COUNT as f64
}

/// Running-maximum calibration state. One per timeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningMax {
    pub max: f64,
    pub decay: f64,
}

impl Default for RunningMax {
    fn default() -> Self {
        RunningMax {
            max: 0.0,
            decay: DEFAULT_DECAY,
        }
    }
}

/// Maps an energy value into [0, 1] against the decayed running maximum and
/// returns the updated state.
pub fn normalize_feature(e: f64, calib: RunningMax) -> (f64, RunningMax) {
    let e = e.max(0.0);
    let max = (calib.max * calib.decay).max(e);
    let a = (e / max.max(EPSILON)).clamp(0.0, 1.0);
    (a, RunningMax { max, ..calib })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioFeatureTimeline {
    pub features: Vec<f64>,
    pub hop_seconds: f64,
}

/// Number of frames for a clip: `ceil(duration / hop)`, ignoring rounding
/// noise in the division.
pub fn frame_count(samples: usize, sample_rate: u32, hop_seconds: f64) -> usize {
    let ratio = samples as f64 / sample_rate as f64 / hop_seconds;
    ((ratio - 1e-9).ceil().max(1.0)) as usize
}

/// Frames the clip every `hop_seconds` (64 samples from each hop start, zero
/// padded at the end) and runs spectrum, energy and normalization in order.
pub fn feature_timeline(clip: &PcmClip, hop_seconds: f64) -> Result<AudioFeatureTimeline, AudioError> {
    if !(hop_seconds.is_finite() && hop_seconds > 0.0) {
        return Err(AudioError::Hop(hop_seconds));
    }
    let samples = clip.samples();
    if samples.is_empty() {
        return Err(AudioError::EmptyClip);
    }
    let sr = clip.sample_rate() as f64;
    let n = frame_count(samples.len(), clip.sample_rate(), hop_seconds);
    let analyzer = SpectrumAnalyzer::new();
    let mut calib = RunningMax::default();
    let mut features = Vec::with_capacity(n);
    let mut frame = [0.0f64; FRAME_LEN];
    for i in 0..n {
        let start = (i as f64 * hop_seconds * sr + 1e-9).floor() as usize;
        for (k, slot) in frame.iter_mut().enumerate() {
            *slot = samples.get(start + k).copied().unwrap_or(0.0) as f64;
        }
        let spectrum = analyzer.analyze(&frame, i)?;
        let (a, next) = normalize_feature(energy(&spectrum), calib);
        calib = next;
        features.push(a);
    }
    Ok(AudioFeatureTimeline {
        features,
        hop_seconds,
    })
}

const TIMELINE_HEADER: &str = "# shaderbreed audio features v1";

impl AudioFeatureTimeline {
    /// Text export: a header, `hop_seconds`, `frames`, then one feature per
    /// line in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.features.len() * 8 + 64);
        let _ = writeln!(out, "{TIMELINE_HEADER}");
        let _ = writeln!(out, "hop_seconds {}", self.hop_seconds);
        let _ = writeln!(out, "frames {}", self.features.len());
        for f in &self.features {
            let _ = writeln!(out, "{f}");
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self, AudioError> {
        let bad = |line: usize, message: &str| AudioError::TimelineFormat {
            line,
            message: message.to_owned(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, TIMELINE_HEADER)) => {}
            _ => return Err(bad(1, "missing header")),
        }
        let mut field = |name: &str| -> Result<(usize, String), AudioError> {
            let (n, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            l.strip_prefix(name)
                .map(|v| (n, v.trim().to_owned()))
                .ok_or_else(|| bad(n, &format!("expected `{name}`")))
        };
        let (n, hop) = field("hop_seconds")?;
        let hop_seconds: f64 = hop.parse().map_err(|_| bad(n, "bad hop_seconds"))?;
        let (n, frames) = field("frames")?;
        let frames: usize = frames.parse().map_err(|_| bad(n, "bad frame count"))?;
        let mut features = Vec::with_capacity(frames);
        for (n, l) in lines {
            if l.is_empty() {
                continue;
            }
            let v: f64 = l.parse().map_err(|_| bad(n, "bad feature value"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad(n, "feature outside [0, 1]"));
            }
            features.push(v);
        }
        if features.len() != frames {
            return Err(bad(0, &format!("declared {frames} frames, found {}", features.len())));
        }
        Ok(AudioFeatureTimeline {
            features,
            hop_seconds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_give_zero_spectrum() {
        let s = band_spectrum(&[0.0; FRAME_LEN]).unwrap();
        assert!(s.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn constant_frame_concentrates_in_low_bins() {
        let s = band_spectrum(&[0.4; FRAME_LEN]).unwrap();
        // Hann leakage spreads DC into bin 1 only.
        assert!((s.magnitudes[0] - 0.4 * 32.0).abs() < 1e-9);
        assert!((s.magnitudes[1] - 0.4 * 16.0).abs() < 1e-9);
        assert!(s.magnitudes[2..].iter().all(|&m| m < 1e-9));
    }

    #[test]
    fn wrong_frame_length() {
        assert_eq!(band_spectrum(&[0.0; 63]).unwrap_err(), AudioError::FrameLength(63));
    }

    #[test]
    fn energy_is_mean() {
        let mut s = band_spectrum(&[0.0; FRAME_LEN]).unwrap();
        assert_eq!(energy(&s), 0.0);
        s.magnitudes[7] = 32.0;
        assert_eq!(energy(&s), 1.0);
    }

    #[test]
    fn normalization_basics() {
        let state = RunningMax {
            max: 3.0,
            decay: DEFAULT_DECAY,
        };
        assert_eq!(normalize_feature(0.0, state).0, 0.0);
        assert_eq!(normalize_feature(0.0, RunningMax::default()).0, 0.0);
        assert_eq!(normalize_feature(3.0, state).0, 1.0);
        assert_eq!(normalize_feature(7.0, state).1.max, 7.0);
        let (a, next) = normalize_feature(1.5, state);
        assert!((a - 1.5 / (3.0 * DEFAULT_DECAY)).abs() < 1e-12);
        assert!((next.max - 3.0 * DEFAULT_DECAY).abs() < 1e-12);
    }

    #[test]
    fn short_clip_gives_one_frame() {
        let clip = PcmClip::new(vec![0.5; 20], 48_000).unwrap();
        let t = feature_timeline(&clip, 1.0 / 60.0).unwrap();
        assert_eq!(t.features.len(), 1);
        assert_eq!(t.features[0], 1.0);
    }

    #[test]
    fn one_second_of_silence() {
        let clip = PcmClip::new(vec![0.0; 48_000], 48_000).unwrap();
        let t = feature_timeline(&clip, 1.0 / 60.0).unwrap();
        assert_eq!(t.features.len(), 60);
        assert!(t.features.iter().all(|&f| f == 0.0));
        let t = feature_timeline(&clip, 0.0167).unwrap();
        assert_eq!(t.features.len(), 60);
    }

    #[test]
    fn errors() {
        let empty = PcmClip::new(vec![], 8000).unwrap();
        assert_eq!(feature_timeline(&empty, 0.1).unwrap_err(), AudioError::EmptyClip);
        let clip = PcmClip::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(feature_timeline(&clip, 0.0), Err(AudioError::Hop(_))));
        assert_eq!(PcmClip::new(vec![0.0], 0).unwrap_err(), AudioError::SampleRate);
        assert_eq!(
            PcmClip::new(vec![0.0, f32::NAN], 8000).unwrap_err(),
            AudioError::NonFinite { index: 1 }
        );
    }

    #[test]
    fn stereo_downmix_and_clipping() {
        let clip = PcmClip::from_interleaved(vec![1.0, 0.0, 2.0, 2.0], 2, 8000).unwrap();
        assert_eq!(clip.samples(), &[0.5, 1.0]);
    }

    #[test]
    fn timeline_text_round_trip() {
        let t = AudioFeatureTimeline {
            features: vec![0.0, 0.25, 1.0, 0.1 + 0.2],
            hop_seconds: 1.0 / 60.0,
        };
        let text = t.to_text();
        assert!(text.starts_with("# shaderbreed audio features v1\nhop_seconds 0.016666666666666666\nframes 4\n"));
        assert_eq!(AudioFeatureTimeline::parse_text(&text).unwrap(), t);
        assert!(AudioFeatureTimeline::parse_text("nope").is_err());
        let truncated = text.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(AudioFeatureTimeline::parse_text(&truncated).is_err());
    }
}
