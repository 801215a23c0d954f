//! Region features, captions and datasets.
//!
//! Region features arrive pre-extracted in the binary VSRN format (see
//! [`vsrn`]); captions are token ids in a tab-separated text file and the
//! vocabulary is one token per line.

pub mod synth;
pub mod vsrn;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{at_path, Error, Result};
use crate::numerics::Matrix;

pub use synth::{synth_dataset, SynthConfig};
pub use vsrn::{load_features, read_features, write_features};

/// Frames sampled per video by default.
pub const DEFAULT_FRAMES: usize = 16;
/// Regions kept per frame by default.
pub const DEFAULT_REGIONS: usize = 36;
/// Region feature width by default.
pub const DEFAULT_FEATURE_DIM: usize = 2048;

/// The `n × d` region features of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub features: Matrix,
    pub frame_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub video_id: usize,
    pub frames: Vec<RegionSet>,
}

impl VideoSample {
    /// `(frames, n, d)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let (n, d) = self.frames.first().map_or((0, 0), |f| f.features.shape());
        (self.frames.len(), n, d)
    }

    /// Keeps `target` frames at uniformly spaced indices.
    pub fn resample(&self, target: usize) -> VideoSample {
        let frames = sample_frames(self.frames.len(), target)
            .into_iter()
            .map(|i| self.frames[i].clone())
            .collect();
        VideoSample {
            video_id: self.video_id,
            frames,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Caption {
    /// Index of the described video within the same split.
    pub video_id: usize,
    pub token_ids: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!(
                "unknown split `{other}` (train|val|test)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoSample>,
    pub captions: Vec<Caption>,
    pub vocab_size: usize,
    pub split: Split,
}

impl Dataset {
    /// Assembles a dataset, checking every cross-reference.
    pub fn new(
        videos: Vec<VideoSample>,
        captions: Vec<Caption>,
        vocab_size: usize,
        split: Split,
    ) -> Result<Self> {
        let ds = Self {
            videos,
            captions,
            vocab_size,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.videos.first().map(|v| v.shape());
        for v in &self.videos {
            if Some(v.shape()) != shape || v.frames.is_empty() {
                return Err(Error::Format(format!(
                    "video {} has shape {:?}, expected {:?}",
                    v.video_id,
                    v.shape(),
                    shape
                )));
            }
            if v.frames.iter().any(|f| !f.features.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "features of video {}",
                    v.video_id
                )));
            }
        }
        let mut caption_count = vec![0usize; self.videos.len()];
        for (k, c) in self.captions.iter().enumerate() {
            if c.video_id >= self.videos.len() {
                return Err(Error::Format(format!(
                    "caption {k} refers to video {} but the split has {}",
                    c.video_id,
                    self.videos.len()
                )));
            }
            if c.token_ids.is_empty() {
                return Err(Error::Format(format!("caption {k} is empty")));
            }
            if let Some(&t) = c.token_ids.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Vocabulary {
                    token: t,
                    vocab_size: self.vocab_size,
                });
            }
            caption_count[c.video_id] += 1;
        }
        if let Some(v) = caption_count.iter().position(|&c| c == 0) {
            return Err(Error::Format(format!("video {v} has no caption")));
        }
        Ok(())
    }

    /// `(frames, n, d)` shared by every video.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.videos.first().map_or((0, 0, 0), |v| v.shape())
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }
}

/// `F` indices `floor(i·T/F)`, repeating frames when `T < F`.
pub fn sample_frames(available: usize, target: usize) -> Vec<usize> {
    let (t, f) = (available as u128, target as u128);
    (0..f).map(|i| (i * t / f) as usize).collect()
}

pub fn write_captions<W: Write>(captions: &[Caption], mut w: W) -> Result<()> {
    for c in captions {
        let tokens: Vec<String> = c.token_ids.iter().map(|t| t.to_string()).collect();
        writeln!(w, "{}\t{}", c.video_id, tokens.join(" "))?;
    }
    Ok(())
}

pub fn read_captions<R: BufRead>(r: R) -> Result<Vec<Caption>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("captions line {}: {what}", lineno + 1));
        let (video, tokens) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let video_id = video.trim().parse().map_err(|_| bad("bad video index"))?;
        let token_ids = tokens
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad token id")))
            .collect::<Result<Vec<_>>>()?;
        out.push(Caption {
            video_id,
            token_ids,
        });
    }
    Ok(out)
}

pub fn write_vocab<W: Write>(tokens: &[String], mut w: W) -> Result<()> {
    for t in tokens {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

pub fn read_vocab<R: BufRead>(r: R) -> Result<Vec<String>> {
    Ok(r.lines().collect::<std::io::Result<Vec<_>>>()?)
}

/// File names for one split inside a data directory.
pub struct SplitFiles {
    pub features: PathBuf,
    pub captions: PathBuf,
    pub vocab: PathBuf,
}

impl SplitFiles {
    pub fn new(dir: &Path, split: Split) -> Self {
        Self {
            features: dir.join(format!("{split}.vsrn")),
            captions: dir.join(format!("{split}.captions")),
            vocab: dir.join("vocab.txt"),
        }
    }
}

pub fn save_split(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files = SplitFiles::new(dir, ds.split);
    write_features(&files.features, &ds.videos)?;
    let mut w =
        BufWriter::new(fs::File::create(&files.captions).map_err(at_path(&files.captions))?);
    write_captions(&ds.captions, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_split(dir: &Path, split: Split) -> Result<Dataset> {
    let files = SplitFiles::new(dir, split);
    let videos = load_features(&files.features)?;
    let captions = read_captions(BufReader::new(
        fs::File::open(&files.captions).map_err(at_path(&files.captions))?,
    ))?;
    let vocab = read_vocab(BufReader::new(
        fs::File::open(&files.vocab).map_err(at_path(&files.vocab))?,
    ))?;
    Dataset::new(videos, captions, vocab.len(), split)
}
