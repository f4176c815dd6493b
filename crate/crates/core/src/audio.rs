//! Multichannel audio clips, RIFF/WAVE input and output, and mixing.
//!
//! Only two encodings are accepted: 16-bit integer PCM (format code 1) and
//! 32-bit IEEE float (format code 3). Integer samples are scaled by 1/32768.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Time-domain signal, `channels × length`, plus its sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidClip("clip has no channels".into()));
        }
        if let Some(pos) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidClip(format!("non-finite sample at flat index {pos}")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn zeros(channels: usize, len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(Array2::zeros((channels, len)), sample_rate)
    }

    pub fn from_channels(channels: &[Vec<f64>], sample_rate: u32) -> Result<Self> {
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidClip("channels differ in length".into()));
        }
        let flat: Vec<f64> = channels.iter().flatten().copied().collect();
        let samples =
            Array2::from_shape_vec((channels.len(), len), flat).map_err(|e| Error::InvalidClip(e.to_string()))?;
        Self::new(samples, sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn samples(&self) -> ArrayView2<'_, f64> {
        self.samples.view()
    }

    pub fn channel(&self, i: usize) -> ArrayView1<'_, f64> {
        self.samples.row(i)
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> AudioClip {
        AudioClip {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }

    /// First `len` samples of every channel.
    pub fn truncated(&self, len: usize) -> AudioClip {
        let len = len.min(self.len());
        AudioClip {
            samples: self.samples.slice(ndarray::s![.., ..len]).to_owned(),
            sample_rate: self.sample_rate,
        }
    }

    fn same_shape(&self, other: &AudioClip) -> bool {
        self.samples.dim() == other.samples.dim() && self.sample_rate == other.sample_rate
    }
}

/// Sample-wise sum of clips, without normalization.
pub fn mix(clips: &[AudioClip]) -> Result<AudioClip> {
    let first = clips
        .first()
        .ok_or_else(|| Error::Empty("mix needs at least one clip".into()))?;
    let mut acc = first.samples.clone();
    for c in &clips[1..] {
        if !first.same_shape(c) {
            return Err(Error::Shape(format!(
                "cannot mix {:?}@{} Hz with {:?}@{} Hz",
                first.samples.dim(),
                first.sample_rate,
                c.samples.dim(),
                c.sample_rate
            )));
        }
        acc += &c.samples;
    }
    AudioClip::new(acc, first.sample_rate)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavFormat {
    Pcm16,
    Float32,
}

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    parse_wav(&bytes, path)
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Fmt {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_wav(bytes: &[u8], path: &Path) -> Result<AudioClip> {
    let malformed = |detail: &str| Error::MalformedWav {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE signature"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = le_u32(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(malformed("fmt chunk too short"));
            }
            fmt = Some(Fmt {
                code: le_u16(bytes, body),
                channels: le_u16(bytes, body + 2),
                sample_rate: le_u32(bytes, body + 4),
                bits: le_u16(bytes, body + 14),
            });
        } else if id == b"data" {
            let fmt = fmt.ok_or_else(|| malformed("data chunk precedes fmt chunk"))?;
            return decode_data(&fmt, bytes, body, size, path);
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(malformed("no data chunk"))
}

fn decode_data(fmt: &Fmt, bytes: &[u8], body: usize, size: usize, path: &Path) -> Result<AudioClip> {
    let unsupported = |detail: String| Error::UnsupportedWav {
        path: path.to_path_buf(),
        detail,
    };
    let width = match (fmt.code, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (code, bits) => return Err(unsupported(format!("format code {code} with {bits} bits per sample"))),
    };
    if !(1..=2).contains(&fmt.channels) {
        return Err(unsupported(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(unsupported("sample rate 0".into()));
    }
    let channels = fmt.channels as usize;
    let frame_bytes = width * channels;
    let available = bytes.len().saturating_sub(body);
    if available < size || !size.is_multiple_of(frame_bytes) {
        return Err(Error::TruncatedWav {
            path: path.to_path_buf(),
            detail: format!("data chunk declares {size} bytes, {available} present"),
        });
    }
    let frames = size / frame_bytes;
    let data = &bytes[body..body + size];
    let mut samples = Array2::<f64>::zeros((channels, frames));
    for (n, frame) in data.chunks_exact(frame_bytes).enumerate() {
        for (c, s) in frame.chunks_exact(width).enumerate() {
            samples[[c, n]] = if width == 2 {
                i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0
            } else {
                f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64
            };
        }
    }
    AudioClip::new(samples, fmt.sample_rate).map_err(|e| unsupported(e.to_string()))
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip, format: WavFormat) -> Result<()> {
    write_wav_with_comment(path, clip, format, None)
}

/// Like [`write_wav`], optionally appending a `LIST/INFO/ICMT` comment chunk.
pub fn write_wav_with_comment(
    path: impl AsRef<Path>,
    clip: &AudioClip,
    format: WavFormat,
    comment: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, format, comment);
    fs::write(path, bytes).map_err(|e| Error::write(path, e))
}

fn encode_wav(clip: &AudioClip, format: WavFormat, comment: Option<&str>) -> Vec<u8> {
    let channels = clip.channels() as u16;
    let (code, width) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 2u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 4u16),
    };
    let data_len = clip.len() * clip.channels() * width as usize;
    let list = comment.map(info_chunk).unwrap_or_default();
    let riff_len = 4 + (8 + 16) + (8 + data_len + (data_len & 1)) + list.len();

    let mut out = Vec::with_capacity(riff_len + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&code.to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    let block_align = channels * width;
    out.extend_from_slice(&(clip.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&(width * 8).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    let s = clip.samples();
    for n in 0..clip.len() {
        for c in 0..clip.channels() {
            let x = s[[c, n]];
            match format {
                WavFormat::Pcm16 => out.extend_from_slice(&pcm16(x).to_le_bytes()),
                WavFormat::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            }
        }
    }
    if data_len & 1 == 1 {
        out.push(0);
    }
    out.extend_from_slice(&list);
    out
}

fn pcm16(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

fn info_chunk(comment: &str) -> Vec<u8> {
    let mut text = comment.as_bytes().to_vec();
    text.push(0);
    if text.len() & 1 == 1 {
        text.push(0);
    }
    let mut out = Vec::with_capacity(text.len() + 20);
    out.extend_from_slice(b"LIST");
    out.extend_from_slice(&((4 + 8 + text.len()) as u32).to_le_bytes());
    out.extend_from_slice(b"INFO");
    out.extend_from_slice(b"ICMT");
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    out
}

/// Reads the `ICMT` comment written by [`write_wav_with_comment`], if any.
pub fn read_wav_comment(path: impl AsRef<Path>) -> Result<Option<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
    let Some(at) = bytes.windows(4).rposition(|w| w == b"ICMT") else {
        return Ok(None);
    };
    if at + 8 > bytes.len() {
        return Ok(None);
    }
    let len = le_u32(&bytes, at + 4) as usize;
    let text = &bytes[at + 8..(at + 8 + len).min(bytes.len())];
    let text = text.split(|&b| b == 0).next().unwrap_or_default();
    Ok(Some(String::from_utf8_lossy(text).into_owned()))
}

/// Largest absolute sample difference between two equally shaped clips.
pub fn max_abs_diff(a: &AudioClip, b: &AudioClip) -> f64 {
    assert_eq!(a.samples.dim(), b.samples.dim());
    a.samples
        .iter()
        .zip(b.samples.iter())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Per-channel energy `Σ x²`.
pub fn channel_energy(clip: &AudioClip) -> Vec<f64> {
    clip.samples
        .axis_iter(Axis(0))
        .map(|c| c.iter().map(|x| x * x).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(channels: usize, len: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((channels, len), |_| {
            // float32-representable so the float path round-trips exactly
            rng.random_range(-1.0f32..1.0) as f64
        });
        AudioClip::new(s, 8000).unwrap()
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let clip = AudioClip::from_channels(&[vec![0.5, -0.25, 0.0]], 8000).unwrap();
        write_wav(&p, &clip, WavFormat::Pcm16).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 16384);
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples()[[0, 0]], 0.5);
        assert_eq!(back.samples()[[0, 1]], -0.25);
    }

    #[test]
    fn pcm16_clamps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let clip = AudioClip::from_channels(&[vec![2.0, -3.0, 1.0]], 8000).unwrap();
        write_wav(&p, &clip, WavFormat::Pcm16).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(i16::from_le_bytes([bytes[44], bytes[45]]), 32767);
        assert_eq!(i16::from_le_bytes([bytes[46], bytes[47]]), -32768);
        assert_eq!(i16::from_le_bytes([bytes[48], bytes[49]]), 32767);
    }

    #[test]
    fn float_stereo_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let clip = random_clip(2, 1001, 3);
        write_wav(&p, &clip, WavFormat::Float32).unwrap();
        let bytes = fs::read(&p).unwrap();
        let first = f32::from_le_bytes([bytes[44], bytes[45], bytes[46], bytes[47]]);
        assert_eq!(first.to_bits(), (clip.samples()[[0, 0]] as f32).to_bits());
        let back = read_wav(&p).unwrap();
        assert_eq!(back, clip);
        assert_eq!(max_abs_diff(&back, &clip), 0.0);
    }

    #[test]
    fn silent_clip_writes_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        let clip = AudioClip::zeros(2, 37, 8000).unwrap();
        write_wav(&p, &clip, WavFormat::Pcm16).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 44 + 37 * 2 * 2);
        assert!(bytes[44..].iter().all(|&b| b == 0));
        assert_eq!(read_wav(&p).unwrap().len(), 37);
    }

    #[test]
    fn comment_chunk_is_skipped_by_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        let clip = random_clip(1, 11, 5);
        write_wav_with_comment(&p, &clip, WavFormat::Float32, Some("config_hash=abc seed=3")).unwrap();
        assert_eq!(read_wav(&p).unwrap(), clip);
        assert_eq!(read_wav_comment(&p).unwrap().as_deref(), Some("config_hash=abc seed=3"));
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.wav");
        assert!(matches!(read_wav(&missing), Err(Error::Unreadable { .. })));

        let clip = random_clip(2, 100, 1);
        let mut bytes = encode_wav(&clip, WavFormat::Pcm16, None);
        let p = dir.path().join("t.wav");
        bytes.truncate(bytes.len() - 10);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::TruncatedWav { .. })));

        // 24-bit PCM
        let mut bytes = encode_wav(&clip, WavFormat::Pcm16, None);
        bytes[34] = 24;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedWav { .. })));

        // A-law
        let mut bytes = encode_wav(&clip, WavFormat::Pcm16, None);
        bytes[20] = 6;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedWav { .. })));

        fs::write(&p, b"not a wav file at all").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::MalformedWav { .. })));
    }

    #[test]
    fn mix_single_and_cancellation() {
        let s = random_clip(2, 50, 9);
        assert_eq!(mix(std::slice::from_ref(&s)).unwrap(), s);
        let z = mix(&[s.clone(), s.scaled(-1.0)]).unwrap();
        assert!(z.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mix_matches_direct_sum() {
        let clips: Vec<_> = (0..4).map(|i| random_clip(2, 64, 20 + i)).collect();
        let m = mix(&clips).unwrap();
        for c in 0..2 {
            for n in 0..64 {
                let mut expected = 0.0;
                for clip in &clips {
                    expected += clip.samples()[[c, n]];
                }
                assert_eq!(m.samples()[[c, n]], expected);
            }
        }
    }

    #[test]
    fn mix_rejects_mismatch() {
        let a = random_clip(2, 50, 1);
        let b = random_clip(2, 51, 2);
        let c = random_clip(1, 50, 3);
        assert!(matches!(mix(&[a.clone(), b]), Err(Error::Shape(_))));
        assert!(matches!(mix(&[a, c]), Err(Error::Shape(_))));
        assert!(matches!(mix(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn clip_rejects_nan() {
        let s = Array2::from_elem((1, 3), f64::NAN);
        assert!(AudioClip::new(s, 8000).is_err());
        assert!(AudioClip::zeros(1, 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn float_round_trip_exact(seed in 0u64..1000, len in 1usize..300, ch in 1usize..=2) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("r.wav");
            let clip = random_clip(ch, len, seed);
            write_wav(&p, &clip, WavFormat::Float32).unwrap();
            prop_assert_eq!(read_wav(&p).unwrap(), clip);
        }

        #[test]
        fn mix_commutes_and_associates(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_clip(2, 40, rng.random());
            let b = random_clip(2, 40, rng.random());
            let c = random_clip(2, 40, rng.random());
            let abc = mix(&[mix(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let cba = mix(&[c, mix(&[b, a]).unwrap()]).unwrap();
            let scale = abc.peak().max(1.0);
            prop_assert!(max_abs_diff(&abc, &cba) <= 1e-12 * scale);
        }
    }
}
