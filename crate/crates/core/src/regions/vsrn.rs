//! VSRN region-feature files.
//!
//! Little-endian: magic `VSRN`, then `u32` version (1), `num_videos`,
//! `frames_per_video`, `n`, `d`, then `num_videos·frames·n·d` `f32` values,
//! row-major and video-major.

use std::fs;
use std::path::Path;

use crate::error::{at_path, Error, Result};
use crate::numerics::Matrix;

use super::{RegionSet, VideoSample};

pub const MAGIC: [u8; 4] = *b"VSRN";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn read_features(bytes: &[u8]) -> Result<Vec<VideoSample>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"VSRN\"",
            &bytes[..4]
        )));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported VSRN version {version}")));
    }
    let [videos, frames, n, d] = [8, 12, 16, 20].map(|at| u32_at(bytes, at) as usize);
    if videos == 0 || frames == 0 || n == 0 || d == 0 {
        return Err(Error::Format(format!(
            "empty dimension in header: videos={videos} frames={frames} n={n} d={d}"
        )));
    }
    let values = [videos, frames, n, d]
        .iter()
        .try_fold(1usize, |acc, &x| acc.checked_mul(x))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let expected = HEADER_LEN + values;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            actual: bytes.len(),
        });
    }

    let mut offset = HEADER_LEN;
    let mut out = Vec::with_capacity(videos);
    for video_id in 0..videos {
        let mut frame_sets = Vec::with_capacity(frames);
        for frame_index in 0..frames {
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n * d {
                let x = f32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"));
                if !x.is_finite() {
                    return Err(Error::Data { offset });
                }
                data.push(f64::from(x));
                offset += 4;
            }
            let features = Matrix::from_vec(n, d, data)?;
            frame_sets.push(RegionSet {
                features,
                frame_index,
            });
        }
        out.push(VideoSample {
            video_id,
            frames: frame_sets,
        });
    }
    Ok(out)
}

pub fn load_features(path: &Path) -> Result<Vec<VideoSample>> {
    read_features(&fs::read(path).map_err(at_path(path))?)
}

/// Serializes videos to VSRN bytes. Values are narrowed to `f32`.
pub fn encode_features(videos: &[VideoSample]) -> Result<Vec<u8>> {
    let first = videos.first().ok_or(Error::EmptyInput("write_features"))?;
    let (frames, n, d) = first.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + videos.len() * frames * n * d * 4);
    out.extend_from_slice(&MAGIC);
    for v in [VERSION as usize, videos.len(), frames, n, d] {
        let v =
            u32::try_from(v).map_err(|_| Error::Format(format!("dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in videos {
        if v.shape() != (frames, n, d) {
            return Err(Error::Format(format!(
                "video {} has shape {:?}, expected {:?}",
                v.video_id,
                v.shape(),
                (frames, n, d)
            )));
        }
        for f in &v.frames {
            for &x in f.features.as_slice() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn write_features(path: &Path, videos: &[VideoSample]) -> Result<()> {
    fs::write(path, encode_features(videos)?).map_err(at_path(path))?;
    Ok(())
}
