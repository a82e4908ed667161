//! RIFF/WAVE PCM16 mono reading and writing.

use std::fs;
use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let malformed = |m: &str| Error::MalformedWav(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = u32_at(bytes, at + 4) as usize;
        let body = at + 8;
        if body + size > bytes.len() {
            return Err(malformed("chunk runs past end of file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed("fmt chunk too small"));
                }
                fmt = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => data = Some(&bytes[body..body + size]),
            _ => {}
        }
        at = body + size + (size & 1);
    }
    let (format, channels, sample_rate, bits) = fmt.ok_or_else(|| malformed("no fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(Error::UnsupportedFormat { format, bits });
    }
    if channels != 1 {
        return Err(Error::UnsupportedChannelCount(channels));
    }
    let data = data.ok_or_else(|| malformed("no data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(malformed("odd data length"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Waveform::new(samples, sample_rate)
}

pub fn encode_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate().to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in wave.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(wave)).map_err(|e| Error::io(path, e))
}
