//! The full retrieval model: region reasoning, video and text encoders, and
//! the batch loss with its gradient with respect to every parameter.

use rayon::prelude::*;

use crate::embedding::{
    mean_vector, pooled_words, projection_backward, similarity_backward, similarity_matrix,
    triplet_loss_hard, LossConfig, TextEncoderParams, VideoEncoderParams,
};
use crate::error::{Error, Result};
use crate::gcn::{
    mean_rows_backward, rw_gcn_backward, rw_gcn_forward_cached, GcnConfig, GcnParams,
    ReasonedRegions,
};
use crate::graph::{AdjacencyMode, EmbedParams, Normalization};
use crate::numerics::{Matrix, Rng};
use crate::regions::VideoSample;

/// Names of the learnable tensors, in storage order.
pub const PARAM_NAMES: [&str; 11] = [
    "w_phi",
    "b_phi",
    "w_theta",
    "b_theta",
    "w_g",
    "w_r",
    "w_v",
    "b_v",
    "embedding",
    "w_t",
    "b_t",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Region feature width.
    pub d: usize,
    /// Common-space width `D`.
    pub common_dim: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub gcn: GcnConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.common_dim == 0 || self.word_dim == 0 || self.vocab_size == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub embed: EmbedParams,
    pub gcn: GcnParams,
    pub video: VideoEncoderParams,
    pub text: TextEncoderParams,
}

/// One matrix per entry of [`PARAM_NAMES`].
pub type Grads = Vec<Matrix>;

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, "model/init");
        Ok(Self {
            config,
            embed: EmbedParams::init(config.d, &mut rng),
            gcn: GcnParams::init(config.d, &mut rng),
            video: VideoEncoderParams::init(config.d, config.common_dim, &mut rng),
            text: TextEncoderParams::init(
                config.vocab_size,
                config.word_dim,
                config.common_dim,
                &mut rng,
            ),
        })
    }

    pub fn params(&self) -> [&Matrix; 11] {
        [
            &self.embed.w_phi,
            &self.embed.b_phi,
            &self.embed.w_theta,
            &self.embed.b_theta,
            &self.gcn.w_g,
            &self.gcn.w_r,
            &self.video.w_v,
            &self.video.b_v,
            &self.text.embedding,
            &self.text.w_t,
            &self.text.b_t,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 11] {
        [
            &mut self.embed.w_phi,
            &mut self.embed.b_phi,
            &mut self.embed.w_theta,
            &mut self.embed.b_theta,
            &mut self.gcn.w_g,
            &mut self.gcn.w_r,
            &mut self.video.w_v,
            &mut self.video.b_v,
            &mut self.text.embedding,
            &mut self.text.w_t,
            &mut self.text.b_t,
        ]
    }

    /// Rebuilds a model from tensors in [`PARAM_NAMES`] order, checking shapes.
    pub fn from_params(config: ModelConfig, mut tensors: Vec<Matrix>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        if tensors.len() != PARAM_NAMES.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                PARAM_NAMES.len(),
                tensors.len()
            )));
        }
        for (k, slot) in model.params_mut().into_iter().enumerate() {
            let t = std::mem::replace(&mut tensors[k], Matrix::zeros(0, 0));
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    PARAM_NAMES[k],
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    pub fn zero_grads(&self) -> Grads {
        self.params()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect()
    }

    pub fn normalization(&self) -> Normalization {
        self.config.gcn.normalization
    }

    pub fn with_normalization(mut self, kind: Normalization) -> Self {
        self.config.gcn.normalization = kind;
        self
    }

    pub fn adjacency_mode(&self) -> AdjacencyMode {
        self.config.gcn.adjacency
    }

    /// Reasoned regions of one frame.
    pub fn reason_frame(&self, regions: &Matrix) -> Result<ReasonedRegions> {
        rw_gcn_forward_cached(regions, &self.embed, &self.gcn, self.config.gcn).map(|(r, _)| r)
    }

    /// Common-space embedding `O` of a video.
    pub fn encode_video(&self, video: &VideoSample) -> Result<Vec<f64>> {
        let frames = video
            .frames
            .iter()
            .map(|f| self.reason_frame(&f.features).map(|r| r.frame_feature))
            .collect::<Result<Vec<_>>>()?;
        crate::embedding::encode_video(&frames, &self.video)
    }

    /// Common-space embedding `T` of a caption.
    pub fn encode_text(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        crate::embedding::encode_text(tokens, &self.text)
    }
}

/// Gradient contributions of one sample; embedding rows are kept sparse.
struct SampleGrads {
    dense: Vec<(usize, Matrix)>,
    rows: Vec<(usize, Vec<f64>)>,
}

struct VideoPass {
    caches: Vec<crate::gcn::ForwardCache>,
    pooled: Vec<f64>,
    out: Vec<f64>,
}

fn video_forward(model: &Model, video: &VideoSample) -> Result<VideoPass> {
    let mut caches = Vec::with_capacity(video.frames.len());
    let mut frames = Vec::with_capacity(video.frames.len());
    for f in &video.frames {
        let (r, cache) =
            rw_gcn_forward_cached(&f.features, &model.embed, &model.gcn, model.config.gcn)?;
        frames.push(r.frame_feature);
        caches.push(cache);
    }
    let pooled = mean_vector(&frames, "encode_video")?;
    let out = project(&model.video.w_v, &model.video.b_v, &pooled);
    Ok(VideoPass {
        caches,
        pooled,
        out,
    })
}

fn project(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    let mut out = b.row(0).to_vec();
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wk) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wk;
        }
    }
    out
}

fn video_backward(
    model: &Model,
    video: &VideoSample,
    pass: &VideoPass,
    grad_out: &[f64],
) -> Result<SampleGrads> {
    let proj = projection_backward(grad_out, &pass.pooled, &model.video.w_v);
    let frames = video.frames.len() as f64;
    let grad_frame: Vec<f64> = proj.input.iter().map(|g| g / frames).collect();
    let d = model.config.d;
    let mut acc = [
        Matrix::zeros(d, d),
        Matrix::zeros(1, d),
        Matrix::zeros(d, d),
        Matrix::zeros(1, d),
        Matrix::zeros(d, d),
        Matrix::zeros(d, d),
    ];
    if model.normalization() != Normalization::None {
        for (f, cache) in video.frames.iter().zip(&pass.caches) {
            let grad_z = mean_rows_backward(&grad_frame, f.features.rows());
            let g = rw_gcn_backward(&grad_z, cache, &model.embed, &model.gcn)?;
            for (a, m) in acc
                .iter_mut()
                .zip([&g.w_phi, &g.b_phi, &g.w_theta, &g.b_theta, &g.w_g, &g.w_r])
            {
                a.add_assign(m)?;
            }
        }
    }
    let mut dense: Vec<(usize, Matrix)> = acc.into_iter().enumerate().collect();
    dense.push((6, proj.w));
    dense.push((7, proj.b));
    Ok(SampleGrads {
        dense,
        rows: Vec::new(),
    })
}

fn text_backward(model: &Model, tokens: &[usize], pooled: &[f64], grad_out: &[f64]) -> SampleGrads {
    let proj = projection_backward(grad_out, pooled, &model.text.w_t);
    let scale = 1.0 / tokens.len() as f64;
    let row: Vec<f64> = proj.input.iter().map(|g| g * scale).collect();
    SampleGrads {
        dense: vec![(9, proj.w), (10, proj.b)],
        rows: tokens.iter().map(|&t| (t, row.clone())).collect(),
    }
}

/// Loss value and its gradient for one mini-batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: Grads,
}

/// Forward and backward through the whole model for a batch of matching
/// `(video, caption)` pairs. Per-sample work runs on the current rayon pool;
/// contributions are summed in batch order so the result does not depend on
/// the number of threads.
pub fn batch_loss_and_grads(
    model: &Model,
    videos: &[&VideoSample],
    captions: &[&[usize]],
    loss_cfg: &LossConfig,
) -> Result<BatchResult> {
    if videos.len() != captions.len() {
        return Err(Error::Shape {
            op: "batch",
            left: (videos.len(), 1),
            right: (captions.len(), 1),
        });
    }
    if videos.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let passes = videos
        .par_iter()
        .map(|v| video_forward(model, v))
        .collect::<Result<Vec<_>>>()?;
    let pooled_text = captions
        .par_iter()
        .map(|c| pooled_words(c, &model.text))
        .collect::<Result<Vec<_>>>()?;
    let texts: Vec<Vec<f64>> = pooled_text
        .iter()
        .map(|p| project(&model.text.w_t, &model.text.b_t, p))
        .collect();
    let outs: Vec<Vec<f64>> = passes.iter().map(|p| p.out.clone()).collect();

    let s = similarity_matrix(&outs, &texts)?;
    let tl = triplet_loss_hard(&s, loss_cfg)?;
    let (g_video, g_text) = similarity_backward(&tl.grad, &outs, &texts)?;

    let per_video = (0..videos.len())
        .into_par_iter()
        .map(|i| video_backward(model, videos[i], &passes[i], &g_video[i]))
        .collect::<Result<Vec<_>>>()?;
    let per_text: Vec<SampleGrads> = (0..captions.len())
        .into_par_iter()
        .map(|i| text_backward(model, captions[i], &pooled_text[i], &g_text[i]))
        .collect();

    let mut grads = model.zero_grads();
    for sample in per_video.iter().chain(&per_text) {
        for (k, m) in &sample.dense {
            grads[*k].add_assign(m)?;
        }
        for (token, row) in &sample.rows {
            for (g, x) in grads[8].row_mut(*token).iter_mut().zip(row) {
                *g += x;
            }
        }
    }
    Ok(BatchResult {
        loss: tl.loss,
        grads,
    })
}

/// Loss only, without gradients.
pub fn batch_loss(
    model: &Model,
    videos: &[&VideoSample],
    captions: &[&[usize]],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let outs = videos
        .par_iter()
        .map(|v| model.encode_video(v))
        .collect::<Result<Vec<_>>>()?;
    let texts = captions
        .par_iter()
        .map(|c| model.encode_text(c))
        .collect::<Result<Vec<_>>>()?;
    let s = similarity_matrix(&outs, &texts)?;
    Ok(triplet_loss_hard(&s, loss_cfg)?.loss)
}
