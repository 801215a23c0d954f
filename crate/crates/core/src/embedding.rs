//! Common-space encoders and the hard-negative triplet ranking loss.
//!
//! Both encoders are mean-pool + affine maps into a `D`-dimensional space.
//! Videos and captions are compared by cosine similarity; similarity
//! matrices are laid out with videos on rows and captions on columns.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::uniform_matrix;
use crate::numerics::{cosine, dot, norm, Matrix, Rng};

/// Word-embedding width used by default.
pub const WORD_EMBEDDING_DIM: usize = 500;
pub const DEFAULT_MARGIN: f64 = 0.2;

/// Anything that maps a video's frame features to a common-space vector.
pub trait VideoEncoder {
    fn encode_video(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Anything that maps a token sequence to a common-space vector.
pub trait TextEncoder {
    fn encode_text(&self, tokens: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEncoderParams {
    /// `d × D`
    pub w_v: Matrix,
    /// `1 × D`
    pub b_v: Matrix,
}

impl VideoEncoderParams {
    pub fn init(d: usize, common_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w_v: uniform_matrix(d, common_dim, rng),
            b_v: Matrix::zeros(1, common_dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams {
    /// `vocab × word_dim`
    pub embedding: Matrix,
    /// `word_dim × D`
    pub w_t: Matrix,
    /// `1 × D`
    pub b_t: Matrix,
}

impl TextEncoderParams {
    /// Word embeddings are standard normal; the projection is uniform in
    /// ±1/√word_dim.
    pub fn init(vocab: usize, word_dim: usize, common_dim: usize, rng: &mut Rng) -> Self {
        let embedding = Matrix::from_vec(
            vocab,
            word_dim,
            (0..vocab * word_dim).map(|_| rng.normal()).collect(),
        )
        .expect("finite by construction");
        Self {
            embedding,
            w_t: uniform_matrix(word_dim, common_dim, rng),
            b_t: Matrix::zeros(1, common_dim),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }
}

/// `Wᵀx + b`.
fn project(w: &Matrix, b: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if w.rows() != x.len() || b.shape() != (1, w.cols()) {
        return Err(Error::Shape {
            op: "project",
            left: (1, x.len()),
            right: w.shape(),
        });
    }
    let mut out = b.row(0).to_vec();
    for (k, &xk) in x.iter().enumerate() {
        for (o, &wk) in out.iter_mut().zip(w.row(k)) {
            *o += xk * wk;
        }
    }
    Ok(out)
}

pub fn mean_vector(items: &[Vec<f64>], what: &'static str) -> Result<Vec<f64>> {
    let first = items.first().ok_or(Error::EmptyInput(what))?;
    let mut out = vec![0.0; first.len()];
    for it in items {
        if it.len() != out.len() {
            return Err(Error::Shape {
                op: what,
                left: (1, out.len()),
                right: (1, it.len()),
            });
        }
        for (o, x) in out.iter_mut().zip(it) {
            *o += x;
        }
    }
    let inv = 1.0 / items.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

/// `O = W_vᵀ · mean(frames) + b_v`.
pub fn encode_video(frames: &[Vec<f64>], p: &VideoEncoderParams) -> Result<Vec<f64>> {
    let pooled = mean_vector(frames, "encode_video")?;
    project(&p.w_v, &p.b_v, &pooled)
}

/// Mean of the embedding rows of the caption's tokens.
pub fn pooled_words(tokens: &[usize], p: &TextEncoderParams) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("encode_text"));
    }
    let vocab = p.vocab_size();
    let mut out = vec![0.0; p.embedding.cols()];
    for &t in tokens {
        if t >= vocab {
            return Err(Error::Vocabulary {
                token: t,
                vocab_size: vocab,
            });
        }
        for (o, x) in out.iter_mut().zip(p.embedding.row(t)) {
            *o += x;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

/// `T = W_tᵀ · mean(E[token]) + b_t`.
pub fn encode_text(tokens: &[usize], p: &TextEncoderParams) -> Result<Vec<f64>> {
    let pooled = pooled_words(tokens, p)?;
    project(&p.w_t, &p.b_t, &pooled)
}

impl VideoEncoder for VideoEncoderParams {
    fn encode_video(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        encode_video(frames, self)
    }
}

impl TextEncoder for TextEncoderParams {
    fn encode_text(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        encode_text(tokens, self)
    }
}

/// Gradients of an affine projection `y = Wᵀx + b` given `∂/∂y`.
pub struct ProjectionGrads {
    pub w: Matrix,
    pub b: Matrix,
    pub input: Vec<f64>,
}

pub fn projection_backward(grad_out: &[f64], input: &[f64], w: &Matrix) -> ProjectionGrads {
    let mut gw = Matrix::zeros(w.rows(), w.cols());
    for (k, &xk) in input.iter().enumerate() {
        for (g, &go) in gw.row_mut(k).iter_mut().zip(grad_out) {
            *g = xk * go;
        }
    }
    let grad_in = (0..w.rows()).map(|k| dot(w.row(k), grad_out)).collect();
    ProjectionGrads {
        w: gw,
        b: Matrix::row_vector(grad_out),
        input: grad_in,
    }
}

/// `S[i][j] = cosine(O_i, T_j)`.
pub fn similarity_matrix(videos: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<Matrix> {
    let mut s = Matrix::zeros(videos.len(), texts.len());
    for (i, o) in videos.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            s[(i, j)] = cosine(o, t)?;
        }
    }
    Ok(s)
}

/// Pulls `∂loss/∂S` back onto the embeddings.
pub fn similarity_backward(
    grad_s: &Matrix,
    videos: &[Vec<f64>],
    texts: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let dim = videos.first().map_or(0, |v| v.len());
    let mut gv = vec![vec![0.0; dim]; videos.len()];
    let mut gt = vec![vec![0.0; dim]; texts.len()];
    let vn: Vec<f64> = videos.iter().map(|v| norm(v)).collect();
    let tn: Vec<f64> = texts.iter().map(|t| norm(t)).collect();
    if vn.iter().chain(&tn).any(|&x| x == 0.0) {
        return Err(Error::Degenerate("zero-norm embedding".into()));
    }
    for (i, o) in videos.iter().enumerate() {
        for (j, t) in texts.iter().enumerate() {
            let g = grad_s[(i, j)];
            if g == 0.0 {
                continue;
            }
            let inv = 1.0 / (vn[i] * tn[j]);
            let s = dot(o, t) * inv;
            let (go, gt_j) = (&mut gv[i], &mut gt[j]);
            for k in 0..dim {
                go[k] += g * (t[k] * inv - s * o[k] / (vn[i] * vn[i]));
                gt_j[k] += g * (o[k] * inv - s * t[k] / (tn[j] * tn[j]));
            }
        }
    }
    Ok((gv, gt))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        })
    }
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Reduction::Sum),
            "mean" => Ok(Reduction::Mean),
            other => Err(Error::Config(format!(
                "unknown reduction `{other}` (sum|mean)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: DEFAULT_MARGIN,
            reduction: Reduction::Sum,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    /// Subgradient with respect to the similarity matrix.
    pub grad: Matrix,
}

/// Index of the largest entry other than `skip`; ties go to the lowest index.
fn hardest(values: impl Iterator<Item = f64>, skip: usize) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in values.enumerate() {
        if k == skip {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best
}

/// Hinge triplet loss over the hardest in-batch negatives. For each positive
/// pair `i`, one term uses the most similar non-matching video for caption
/// `i` (column `i`), the other the most similar non-matching caption for
/// video `i` (row `i`).
pub fn triplet_loss_hard(s: &Matrix, cfg: &LossConfig) -> Result<TripletLoss> {
    let b = s.rows();
    if s.cols() != b {
        return Err(Error::Shape {
            op: "triplet_loss_hard",
            left: s.shape(),
            right: (b, b),
        });
    }
    if cfg.margin < 0.0 {
        return Err(Error::Config(format!(
            "margin must be non-negative, got {}",
            cfg.margin
        )));
    }
    let mut loss = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for i in 0..b {
        let pos = s[(i, i)];
        if let Some((k, neg)) = hardest((0..b).map(|k| s[(k, i)]), i) {
            let h = cfg.margin - pos + neg;
            if h > 0.0 {
                loss += h;
                grad[(i, i)] -= 1.0;
                grad[(k, i)] += 1.0;
            }
        }
        if let Some((k, neg)) = hardest(s.row(i).iter().copied(), i) {
            let h = cfg.margin - pos + neg;
            if h > 0.0 {
                loss += h;
                grad[(i, i)] -= 1.0;
                grad[(i, k)] += 1.0;
            }
        }
    }
    if cfg.reduction == Reduction::Mean && b > 0 {
        loss /= b as f64;
        grad = grad.scale(1.0 / b as f64);
    }
    Ok(TripletLoss { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_projection_returns_frame() {
        let p = VideoEncoderParams {
            w_v: Matrix::identity(3),
            b_v: Matrix::zeros(1, 3),
        };
        let f = vec![0.5, -1.0, 2.0];
        assert_eq!(encode_video(&[f.clone()], &p).unwrap(), f);
    }

    #[test]
    fn zero_frames_give_the_bias() {
        let p = VideoEncoderParams {
            w_v: Matrix::filled(2, 3, 0.7),
            b_v: Matrix::from_rows(&[[1.0, 2.0, 3.0]]),
        };
        assert_eq!(
            encode_video(&[vec![0.0, 0.0]], &p).unwrap(),
            vec![1.0, 2.0, 3.0]
        );
        assert!(matches!(encode_video(&[], &p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn video_matches_mean_then_affine() {
        let mut rng = Rng::new(21);
        let p = VideoEncoderParams::init(5, 4, &mut rng);
        let p = VideoEncoderParams {
            b_v: Matrix::from_rows(&[[0.1, 0.2, -0.3, 0.4]]),
            ..p
        };
        let frames: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let got = encode_video(&frames, &p).unwrap();
        let mut mean = [0.0; 5];
        for f in &frames {
            for k in 0..5 {
                mean[k] += f[k] / 16.0;
            }
        }
        for j in 0..4 {
            let expected: f64 =
                (0..5).map(|k| p.w_v[(k, j)] * mean[k]).sum::<f64>() + p.b_v[(0, j)];
            assert!((got[j] - expected).abs() < 1e-12);
        }
    }

    fn text_params() -> TextEncoderParams {
        let mut rng = Rng::new(4);
        TextEncoderParams::init(6, 3, 2, &mut rng)
    }

    #[test]
    fn single_token_is_a_lookup() {
        let p = text_params();
        let got = encode_text(&[4], &p).unwrap();
        let expected = project(&p.w_t, &p.b_t, p.embedding.row(4)).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn two_tokens_average_rows() {
        let p = text_params();
        let pooled = pooled_words(&[1, 3], &p).unwrap();
        for k in 0..3 {
            let expected = (p.embedding[(1, k)] + p.embedding[(3, k)]) / 2.0;
            assert!((pooled[k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn text_matches_one_hot_product() {
        let p = text_params();
        let tokens = [0usize, 5, 2, 2, 1];
        let mut one_hot = Matrix::zeros(tokens.len(), 6);
        for (r, &t) in tokens.iter().enumerate() {
            one_hot[(r, t)] = 1.0;
        }
        let words = one_hot.matmul(&p.embedding).unwrap();
        let pooled = words.mean_rows().unwrap();
        let expected = pooled.matmul(&p.w_t).unwrap().add(&p.b_t).unwrap();
        let got = encode_text(&tokens, &p).unwrap();
        for j in 0..2 {
            assert!((got[j] - expected[(0, j)]).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_vocabulary_names_the_token() {
        let p = text_params();
        match encode_text(&[1, 9], &p) {
            Err(Error::Vocabulary { token, vocab_size }) => assert_eq!((token, vocab_size), (9, 6)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn orthogonal_pairs_give_identity_similarity() {
        let vs: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|k| f64::from(u8::from(i == k))).collect())
            .collect();
        assert_eq!(similarity_matrix(&vs, &vs).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn scaling_a_video_leaves_its_row_unchanged() {
        let mut rng = Rng::new(8);
        let vs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let ts: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let s = similarity_matrix(&vs, &ts).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = dot(&vs[i], &ts[j]) / (norm(&vs[i]) * norm(&ts[j]));
                assert!((s[(i, j)] - expected).abs() < 1e-12);
            }
        }
        let mut scaled = vs.clone();
        scaled[1].iter_mut().for_each(|x| *x *= 3.0);
        let s2 = similarity_matrix(&scaled, &ts).unwrap();
        for j in 0..4 {
            assert!((s2[(1, j)] - s[(1, j)]).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_embedding_is_degenerate() {
        let vs = vec![vec![0.0, 0.0]];
        let ts = vec![vec![1.0, 0.0]];
        assert!(matches!(
            similarity_matrix(&vs, &ts),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_pair_has_no_negatives() {
        let s = Matrix::from_rows(&[[0.1]]);
        assert_eq!(
            triplet_loss_hard(&s, &LossConfig::default()).unwrap().loss,
            0.0
        );
    }

    #[test]
    fn two_by_two_hand_value() {
        let s = Matrix::from_rows(&[[0.6, 0.7], [0.2, 0.5]]);
        let out = triplet_loss_hard(&s, &LossConfig::default()).unwrap();
        assert!((out.loss - 0.7).abs() < 1e-12);
        // active terms: video 0 vs caption 1, caption 1 vs video 0
        assert_eq!(out.grad, Matrix::from_rows(&[[-1.0, 2.0], [0.0, -1.0]]));
    }

    #[test]
    fn satisfied_margin_gives_zero_loss() {
        let s = Matrix::from_rows(&[[0.9, 0.1, 0.2], [0.0, 0.8, 0.3], [-0.5, 0.4, 0.95]]);
        let out = triplet_loss_hard(&s, &LossConfig::default()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.grad, Matrix::zeros(3, 3));
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        let s = Matrix::from_rows(&[[0.5, 0.4, 0.4], [0.0, 0.9, 0.0], [0.0, 0.0, 0.9]]);
        let out = triplet_loss_hard(&s, &LossConfig::default()).unwrap();
        assert_eq!(out.grad[(0, 1)], 1.0);
        assert_eq!(out.grad[(0, 2)], 0.0);
    }

    #[test]
    fn mean_reduction_divides_by_batch() {
        let s = Matrix::from_rows(&[[0.6, 0.7], [0.2, 0.5]]);
        let cfg = LossConfig {
            reduction: Reduction::Mean,
            ..LossConfig::default()
        };
        assert!((triplet_loss_hard(&s, &cfg).unwrap().loss - 0.35).abs() < 1e-12);
    }
}
