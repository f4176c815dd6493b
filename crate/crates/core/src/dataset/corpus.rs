//! DSD100 directory layout:
//!
//! ```text
//! <root>/Mixtures/{Dev,Test}/<song>/mixture.wav
//! <root>/Sources/{Dev,Test}/<song>/{bass,drums,vocals,other}.wav
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Instrument, Song};
use crate::audio::{read_wav, write_wav_with_comment, WavFormat};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Dev, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Dev => "Dev",
            Split::Test => "Test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// A song on disk; nothing is read until [`SongRef::load`].
#[derive(Clone, Debug, PartialEq)]
pub struct SongRef {
    pub name: String,
    pub split: Split,
    pub mixture: PathBuf,
    pub sources: BTreeMap<Instrument, PathBuf>,
}

impl SongRef {
    pub fn load(&self) -> Result<Song> {
        let mixture = read_wav(&self.mixture)?;
        let mut sources = BTreeMap::new();
        for (&i, path) in &self.sources {
            let clip = read_wav(path)?;
            if clip.sample_rate() != mixture.sample_rate() {
                return Err(Error::SampleRate {
                    expected: mixture.sample_rate(),
                    found: clip.sample_rate(),
                });
            }
            sources.insert(i, clip);
        }
        Song::with_mixture(self.name.clone(), sources, mixture)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedSong {
    pub name: String,
    pub split: Split,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct CorpusScan {
    /// Sorted by split, then name.
    pub songs: Vec<SongRef>,
    pub skipped: Vec<SkippedSong>,
}

impl CorpusScan {
    pub fn split(&self, split: Split) -> Vec<&SongRef> {
        self.songs.iter().filter(|s| s.split == split).collect()
    }
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::read(dir, e))? {
        let path = entry.map_err(|e| Error::read(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Finds every complete song under `root`. Songs lacking the mixture or any
/// stem are listed in [`CorpusScan::skipped`] and logged.
pub fn scan_corpus(root: impl AsRef<Path>) -> Result<CorpusScan> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Corpus(format!("corpus root {} does not exist", root.display())));
    }
    let mut scan = CorpusScan::default();
    for split in Split::ALL {
        let mix_dir = root.join("Mixtures").join(split.dir_name());
        if !mix_dir.is_dir() {
            continue;
        }
        for song_dir in sorted_dirs(&mix_dir)? {
            let name = song_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let mixture = song_dir.join("mixture.wav");
            let src_dir = root.join("Sources").join(split.dir_name()).join(&name);
            let sources: BTreeMap<_, _> = Instrument::ALL
                .iter()
                .map(|&i| (i, src_dir.join(format!("{i}.wav"))))
                .collect();
            let missing: Vec<String> = std::iter::once(&mixture)
                .chain(sources.values())
                .filter(|p| !p.is_file())
                .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
                .collect();
            if missing.is_empty() {
                scan.songs.push(SongRef {
                    name,
                    split,
                    mixture,
                    sources,
                });
            } else {
                let reason = format!("missing {}", missing.join(", "));
                log::warn!("skipping {split}/{name}: {reason}");
                scan.skipped.push(SkippedSong { name, split, reason });
            }
        }
    }
    if scan.songs.is_empty() {
        return Err(Error::Corpus(format!("no complete songs under {}", root.display())));
    }
    Ok(scan)
}

/// Writes `song` into the layout under `root`, creating directories.
pub fn write_song(
    root: impl AsRef<Path>,
    split: Split,
    song: &Song,
    format: WavFormat,
    comment: Option<&str>,
) -> Result<SongRef> {
    let root = root.as_ref();
    let mix_dir = root.join("Mixtures").join(split.dir_name()).join(&song.name);
    let src_dir = root.join("Sources").join(split.dir_name()).join(&song.name);
    for d in [&mix_dir, &src_dir] {
        fs::create_dir_all(d).map_err(|e| Error::write(d, e))?;
    }
    let mixture = mix_dir.join("mixture.wav");
    write_wav_with_comment(&mixture, &song.mixture, format, comment)?;
    let mut sources = BTreeMap::new();
    for (&i, clip) in &song.sources {
        let path = src_dir.join(format!("{i}.wav"));
        write_wav_with_comment(&path, clip, format, comment)?;
        sources.insert(i, path);
    }
    Ok(SongRef {
        name: song.name.clone(),
        split,
        mixture,
        sources,
    })
}
