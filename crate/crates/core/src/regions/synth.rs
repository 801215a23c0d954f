//! Synthetic video-caption pairs with a planted latent topic.
//!
//! Every topic owns a random vector in region space and a contiguous band of
//! the vocabulary. A region is `topic + slot + noise`, where the slot vector
//! is shared by all videos (the same kind of object sits in region `r`
//! everywhere) and the noise is fresh Gaussian per region. Caption tokens are
//! drawn uniformly from the topic's band. Topic vectors depend only on the
//! seed, so all splits of one seed share them.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

use super::{Caption, Dataset, RegionSet, Split, VideoSample};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_pairs: usize,
    pub frames: usize,
    pub n: usize,
    pub d: usize,
    pub vocab_size: usize,
    pub noise_scale: f64,
    pub num_topics: usize,
    pub caption_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            num_pairs: 200,
            frames: super::DEFAULT_FRAMES,
            n: super::DEFAULT_REGIONS,
            d: super::DEFAULT_FEATURE_DIM,
            vocab_size: 1000,
            noise_scale: 0.1,
            num_topics: 20,
            caption_len: 8,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_pairs < 2 {
            return fail(format!("need at least 2 pairs, got {}", self.num_pairs));
        }
        if self.frames == 0 || self.n == 0 || self.d == 0 || self.caption_len == 0 {
            return fail("frames, n, d and caption length must be positive".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!(
                "noise scale must be finite and non-negative, got {}",
                self.noise_scale
            ));
        }
        if self.num_topics == 0 {
            return fail("need at least one topic".into());
        }
        if self.vocab_size < self.num_topics {
            return fail(format!(
                "vocabulary of {} cannot hold {} topic bands",
                self.vocab_size, self.num_topics
            ));
        }
        Ok(())
    }

    /// Topic of the `i`-th video; topics are assigned round-robin.
    pub fn topic_of(&self, i: usize) -> usize {
        i % self.num_topics
    }

    fn band(&self, topic: usize) -> std::ops::Range<usize> {
        let width = self.vocab_size / self.num_topics;
        topic * width..(topic + 1) * width
    }
}

fn gaussian(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.normal()).collect()
}

/// Token strings for a synthetic vocabulary.
pub fn synth_vocab(vocab_size: usize) -> Vec<String> {
    (0..vocab_size).map(|i| format!("tok{i}")).collect()
}

pub fn synth_dataset(cfg: &SynthConfig, split: Split) -> Result<Dataset> {
    cfg.validate()?;
    let mut shared = Rng::stream(cfg.seed, "synth/topics");
    let topics: Vec<Vec<f64>> = (0..cfg.num_topics)
        .map(|_| gaussian(&mut shared, cfg.d))
        .collect();
    let slots: Vec<Vec<f64>> = (0..cfg.n).map(|_| gaussian(&mut shared, cfg.d)).collect();

    let mut rng = Rng::stream(cfg.seed, &format!("synth/{split}"));
    let mut videos = Vec::with_capacity(cfg.num_pairs);
    let mut captions = Vec::with_capacity(cfg.num_pairs);
    for video_id in 0..cfg.num_pairs {
        let topic = cfg.topic_of(video_id);
        let mut frames = Vec::with_capacity(cfg.frames);
        for frame_index in 0..cfg.frames {
            let mut data = Vec::with_capacity(cfg.n * cfg.d);
            for slot in &slots {
                for (t, s) in topics[topic].iter().zip(slot) {
                    data.push(t + s + cfg.noise_scale * rng.normal());
                }
            }
            frames.push(RegionSet {
                features: Matrix::from_vec(cfg.n, cfg.d, data)?,
                frame_index,
            });
        }
        videos.push(VideoSample { video_id, frames });
        let band = cfg.band(topic);
        let token_ids = (0..cfg.caption_len)
            .map(|_| band.start + rng.index(band.len()))
            .collect();
        captions.push(Caption {
            video_id,
            token_ids,
        });
    }
    Dataset::new(videos, captions, cfg.vocab_size, split)
}
