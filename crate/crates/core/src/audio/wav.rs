//! RIFF/WAVE ingestion: 16-bit integer PCM and 32-bit IEEE float, mono or
//! stereo. Errors carry the byte offset where parsing stopped.

use thiserror::Error;

use super::{AudioError, PcmClip};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WavError {
    #[error("offset {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("offset {offset}: missing '{chunk}' chunk")]
    MissingChunk { offset: usize, chunk: &'static str },
    #[error("offset {offset}: '{chunk}' chunk truncated (declares {declared} bytes, {available} present)")]
    Truncated {
        offset: usize,
        chunk: String,
        declared: usize,
        available: usize,
    },
    #[error("offset {offset}: unsupported encoding (format tag {format_tag}, {bits} bits)")]
    Unsupported {
        offset: usize,
        format_tag: u16,
        bits: u16,
    },
    #[error("invalid audio: {0}")]
    Audio(#[from] AudioError),
}

struct Fmt {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
    offset: usize,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<PcmClip, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::Truncated {
            offset: 0,
            chunk: "RIFF".into(),
            declared: 12,
            available: bytes.len(),
        });
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::Malformed {
            offset: 0,
            message: "not a RIFF file".into(),
        });
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::Malformed {
            offset: 8,
            message: "RIFF form type is not WAVE".into(),
        });
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, &[u8])> = None;
    let mut at = 12;
    while at < bytes.len() {
        if bytes.len() - at < 8 {
            return Err(WavError::Malformed {
                offset: at,
                message: format!("incomplete chunk header ({} bytes)", bytes.len() - at),
            });
        }
        let id = &bytes[at..at + 4];
        let name = String::from_utf8_lossy(id).into_owned();
        let declared = u32_at(bytes, at + 4);
        let body_start = at + 8;
        let available = bytes.len() - body_start;
        let size = if id == b"data" && (declared == u32::MAX || declared == 0) {
            // Streaming writers leave the size unset.
            available
        } else {
            declared as usize
        };
        if size > available {
            return Err(WavError::Truncated {
                offset: at,
                chunk: name,
                declared: size,
                available,
            });
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Truncated {
                        offset: at,
                        chunk: name,
                        declared: 16,
                        available: size,
                    });
                }
                let mut format_tag = u16_at(body, 0);
                if format_tag == FORMAT_EXTENSIBLE && size >= 26 {
                    format_tag = u16_at(body, 24);
                }
                fmt = Some(Fmt {
                    format_tag,
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits: u16_at(body, 14),
                    offset: at,
                });
            }
            b"data" => data = Some((body_start, body)),
            _ => {}
        }
        at = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or(WavError::MissingChunk {
        offset: at.min(bytes.len()),
        chunk: "fmt ",
    })?;
    let (data_offset, data) = data.ok_or(WavError::MissingChunk {
        offset: at.min(bytes.len()),
        chunk: "data",
    })?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(WavError::Malformed {
            offset: fmt.offset + 10,
            message: format!("{} channels; expected 1 or 2", fmt.channels),
        });
    }
    let samples: Vec<f32> = match (fmt.format_tag, fmt.bits) {
        (FORMAT_PCM, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
            .collect(),
        (FORMAT_FLOAT, 32) => {
            let v: Vec<f32> = data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if let Some(i) = v.iter().position(|s| !s.is_finite()) {
                return Err(WavError::Malformed {
                    offset: data_offset + 4 * i,
                    message: "non-finite float sample".into(),
                });
            }
            v
        }
        (format_tag, bits) => {
            return Err(WavError::Unsupported {
                offset: fmt.offset + 8,
                format_tag,
                bits,
            })
        }
    };
    Ok(PcmClip::from_interleaved(
        samples,
        fmt.channels as usize,
        fmt.sample_rate,
    )?)
}

/// Encodes a mono clip as 16-bit PCM WAV.
pub fn encode_wav_pcm16(clip: &PcmClip) -> Vec<u8> {
    let data_len = clip.samples().len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for s in clip.samples() {
        let v = (s * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
