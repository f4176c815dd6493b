//! Binary tensor dumps.
//!
//! Little-endian. Version 1 holds a complex spectrogram:
//!
//! ```text
//! "PSPC" | u32 1 | u32 I | u32 M | u32 K | u32 N | u32 n0 | u32 sample_rate
//! I·M·K × (f32 re, f32 im), channel-major, then frame, then bin
//! [u32 n | n bytes UTF-8 note]
//! ```
//!
//! Version 2 holds a real feature tensor: the same header followed by
//! `u32 F`, then `I·M·K·F` f32 values with the feature axis fastest. The
//! optional trailing note carries run provenance such as the config hash.

use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::{Spectrogram, StftConfig};

pub const DUMP_MAGIC: &[u8; 4] = b"PSPC";
pub const SPECTROGRAM_VERSION: u32 = 1;
pub const FEATURE_VERSION: u32 = 2;

/// Geometry recorded in every dump header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DumpHeader {
    pub channels: u32,
    pub frames: u32,
    pub bins: u32,
    pub fft_size: u32,
    pub hop: u32,
    pub sample_rate: u32,
}

impl DumpHeader {
    fn new(dim: (usize, usize, usize), cfg: &StftConfig) -> Result<Self> {
        let u = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Shape(format!("{what} {v} does not fit a dump header")))
        };
        Ok(Self {
            channels: u(dim.0, "channels")?,
            frames: u(dim.1, "frames")?,
            bins: u(dim.2, "bins")?,
            fft_size: u(cfg.fft_size, "fft size")?,
            hop: u(cfg.hop, "hop")?,
            sample_rate: cfg.sample_rate,
        })
    }

    fn dim(&self) -> (usize, usize, usize) {
        (self.channels as usize, self.frames as usize, self.bins as usize)
    }

    fn write(&self, version: u32, out: &mut Vec<u8>) {
        out.extend_from_slice(DUMP_MAGIC);
        for v in [
            version,
            self.channels,
            self.frames,
            self.bins,
            self.fft_size,
            self.hop,
            self.sample_rate,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn push_note(out: &mut Vec<u8>, note: Option<&str>) {
    if let Some(n) = note {
        out.extend_from_slice(&(n.len() as u32).to_le_bytes());
        out.extend_from_slice(n.as_bytes());
    }
}

pub fn spectrogram_to_bytes(spec: &Spectrogram, note: Option<&str>) -> Result<Vec<u8>> {
    let header = DumpHeader::new(spec.values().dim(), spec.config())?;
    let mut out = Vec::with_capacity(32 + spec.values().len() * 8);
    header.write(SPECTROGRAM_VERSION, &mut out);
    for z in spec.values().iter() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    push_note(&mut out, note);
    Ok(out)
}

/// `features` is `channels × frames × bins × F`.
pub fn features_to_bytes(features: &Array4<f64>, cfg: &StftConfig, note: Option<&str>) -> Result<Vec<u8>> {
    let (i, m, k, f) = features.dim();
    let header = DumpHeader::new((i, m, k), cfg)?;
    let f = u32::try_from(f).map_err(|_| Error::Shape(format!("{f} features do not fit a dump header")))?;
    let mut out = Vec::with_capacity(36 + features.len() * 4);
    header.write(FEATURE_VERSION, &mut out);
    out.extend_from_slice(&f.to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    push_note(&mut out, note);
    Ok(out)
}

/// A decoded dump.
#[derive(Clone, Debug, PartialEq)]
pub enum Dump {
    Spectrogram {
        header: DumpHeader,
        values: Array3<Complex64>,
        note: Option<String>,
    },
    Features {
        header: DumpHeader,
        values: Array4<f64>,
        note: Option<String>,
    },
}

fn corrupt(m: impl Into<String>) -> Error {
    Error::CorruptDump(m.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?, "values")?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect())
    }

    fn note(&mut self) -> Result<Option<String>> {
        if self.pos == self.bytes.len() {
            return Ok(None);
        }
        let n = self.u32("note length")? as usize;
        let text = std::str::from_utf8(self.take(n, "note")?).map_err(|_| corrupt("note is not UTF-8"))?;
        if self.pos != self.bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(Some(text.to_owned()))
    }
}

pub fn dump_from_bytes(bytes: &[u8]) -> Result<Dump> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != DUMP_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = c.u32("version")?;
    let mut fields = [0u32; 6];
    for (f, what) in fields
        .iter_mut()
        .zip(["channels", "frames", "bins", "fft size", "hop", "sample rate"])
    {
        *f = c.u32(what)?;
    }
    let header = DumpHeader {
        channels: fields[0],
        frames: fields[1],
        bins: fields[2],
        fft_size: fields[3],
        hop: fields[4],
        sample_rate: fields[5],
    };
    let dim = header.dim();
    let count = dim
        .0
        .checked_mul(dim.1)
        .and_then(|v| v.checked_mul(dim.2))
        .ok_or_else(|| corrupt("tensor too large"))?;
    match version {
        SPECTROGRAM_VERSION => {
            let flat = c.f32s(count.checked_mul(2).ok_or_else(|| corrupt("tensor too large"))?)?;
            let values = flat.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Ok(Dump::Spectrogram {
                header,
                values: Array3::from_shape_vec(dim, values).map_err(|e| corrupt(e.to_string()))?,
                note: c.note()?,
            })
        }
        FEATURE_VERSION => {
            let f = c.u32("feature count")? as usize;
            let flat = c.f32s(count.checked_mul(f).ok_or_else(|| corrupt("tensor too large"))?)?;
            Ok(Dump::Features {
                header,
                values: Array4::from_shape_vec((dim.0, dim.1, dim.2, f), flat).map_err(|e| corrupt(e.to_string()))?,
                note: c.note()?,
            })
        }
        v => Err(corrupt(format!("unsupported version {v}"))),
    }
}

pub fn write_spectrogram_dump(path: impl AsRef<Path>, spec: &Spectrogram, note: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, spectrogram_to_bytes(spec, note)?).map_err(|e| Error::write(path, e))
}

pub fn write_feature_dump(
    path: impl AsRef<Path>,
    features: &Array4<f64>,
    cfg: &StftConfig,
    note: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features_to_bytes(features, cfg, note)?).map_err(|e| Error::write(path, e))
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Dump> {
    let path = path.as_ref();
    dump_from_bytes(&fs::read(path).map_err(|e| Error::read(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use crate::stft::stft;

    fn spec() -> Spectrogram {
        let clip = AudioClip::from_channels(&[(0..900).map(|n| (n as f64 * 0.05).sin()).collect()], 8000).unwrap();
        stft(&clip, &StftConfig::desk()).unwrap()
    }

    #[test]
    fn spectrogram_round_trip_at_single_precision() {
        let s = spec();
        let Dump::Spectrogram { header, values, note } =
            dump_from_bytes(&spectrogram_to_bytes(&s, Some("h=1")).unwrap()).unwrap()
        else {
            panic!("wrong kind");
        };
        assert_eq!(header.dim(), s.values().dim());
        assert_eq!((header.fft_size, header.hop, header.sample_rate), (512, 128, 8000));
        assert_eq!(note.as_deref(), Some("h=1"));
        for (a, b) in values.iter().zip(s.values()) {
            assert_eq!(a.re, b.re as f32 as f64);
            assert_eq!(a.im, b.im as f32 as f64);
        }
    }

    #[test]
    fn feature_round_trip() {
        let f = Array4::from_shape_fn((2, 3, 4, 5), |(a, b, c, d)| (a * 1000 + b * 100 + c * 10 + d) as f64);
        let bytes = features_to_bytes(&f, &StftConfig::desk(), None).unwrap();
        assert_eq!(bytes.len(), 36 + f.len() * 4);
        let Dump::Features { values, note, .. } = dump_from_bytes(&bytes).unwrap() else {
            panic!("wrong kind");
        };
        assert_eq!(values, f);
        assert_eq!(note, None);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = spectrogram_to_bytes(&spec(), None).unwrap();
        assert!(matches!(
            dump_from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::CorruptDump(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(dump_from_bytes(&bad), Err(Error::CorruptDump(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(dump_from_bytes(&bad), Err(Error::CorruptDump(_))));
    }
}
