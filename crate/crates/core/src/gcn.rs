//! Residual random-walk graph convolution over one frame's regions,
//!
//! ```text
//! Z = (N V W_g) W_r + V,    N = D⁻¹R for the random-walk kind
//! ```
//!
//! followed by mean pooling into a frame feature. The backward pass is
//! written out by hand and differentiates through the adjacency, so the
//! pair-scoring embeddings receive gradient via `R` and via the degrees.

use crate::error::{Error, Result};
use crate::graph::{
    affine_rows, bilinear_scores, build_adjacency_with, normalize_adjacency, sigmoid, softplus,
    stabilized_degrees, uniform_matrix, AdjacencyMode, EmbedParams, Normalization, DEGREE_EPSILON,
};
use crate::numerics::{Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct GcnParams {
    pub w_g: Matrix,
    pub w_r: Matrix,
}

impl GcnParams {
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        Self {
            w_g: uniform_matrix(d, d, rng),
            w_r: uniform_matrix(d, d, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GcnConfig {
    pub normalization: Normalization,
    pub adjacency: AdjacencyMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasonedRegions {
    pub z: Matrix,
    pub frame_feature: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`rw_gcn_backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    config: GcnConfig,
    v: Matrix,
    inner: Option<GraphCache>,
}

#[derive(Clone, Debug)]
struct GraphCache {
    phi: Matrix,
    theta: Matrix,
    scores: Matrix,
    adjacency: Matrix,
    degree: Vec<f64>,
    normalized: Matrix,
    propagated: Matrix,
    gcn_out: Matrix,
}

/// Gradients of a scalar loss with respect to every input of the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnGrads {
    pub v: Matrix,
    pub w_phi: Matrix,
    pub b_phi: Matrix,
    pub w_theta: Matrix,
    pub b_theta: Matrix,
    pub w_g: Matrix,
    pub w_r: Matrix,
}

impl GcnGrads {
    fn zeros(n: usize, d: usize) -> Self {
        Self {
            v: Matrix::zeros(n, d),
            w_phi: Matrix::zeros(d, d),
            b_phi: Matrix::zeros(1, d),
            w_theta: Matrix::zeros(d, d),
            b_theta: Matrix::zeros(1, d),
            w_g: Matrix::zeros(d, d),
            w_r: Matrix::zeros(d, d),
        }
    }
}

fn check_params(v: &Matrix, p: &EmbedParams, q: &GcnParams) -> Result<()> {
    let d = v.cols();
    for m in [&q.w_g, &q.w_r] {
        if m.shape() != (d, d) {
            return Err(Error::Shape {
                op: "rw_gcn_forward",
                left: v.shape(),
                right: m.shape(),
            });
        }
    }
    if p.dim() != d {
        return Err(Error::Shape {
            op: "rw_gcn_forward",
            left: v.shape(),
            right: p.w_phi.shape(),
        });
    }
    Ok(())
}

/// Forward pass with raw adjacency. `Normalization::None` bypasses the
/// layer and returns `Z = V`.
pub fn rw_gcn_forward(
    v: &Matrix,
    p: &EmbedParams,
    q: &GcnParams,
    kind: Normalization,
) -> Result<ReasonedRegions> {
    let cfg = GcnConfig {
        normalization: kind,
        adjacency: AdjacencyMode::Raw,
    };
    rw_gcn_forward_cached(v, p, q, cfg).map(|(out, _)| out)
}

pub fn rw_gcn_forward_cached(
    v: &Matrix,
    p: &EmbedParams,
    q: &GcnParams,
    cfg: GcnConfig,
) -> Result<(ReasonedRegions, ForwardCache)> {
    if v.rows() == 0 {
        return Err(Error::EmptyInput("rw_gcn_forward"));
    }
    check_params(v, p, q)?;
    if cfg.normalization == Normalization::None {
        let frame_feature = v.mean_rows()?.into_vec();
        let out = ReasonedRegions {
            z: v.clone(),
            frame_feature,
        };
        let cache = ForwardCache {
            config: cfg,
            v: v.clone(),
            inner: None,
        };
        return Ok((out, cache));
    }

    let phi = affine_rows(v, &p.w_phi, &p.b_phi)?;
    let theta = affine_rows(v, &p.w_theta, &p.b_theta)?;
    let scores = bilinear_scores(&phi, &theta)?;
    let adjacency = match cfg.adjacency {
        AdjacencyMode::Raw => scores.clone(),
        AdjacencyMode::Softplus => scores.map(softplus),
    };
    adjacency.ensure_finite("adjacency")?;
    let degree = adjacency.row_sums();
    let normalized = normalize_adjacency(&adjacency, &degree, cfg.normalization)?;
    let propagated = normalized.matmul(v)?;
    let gcn_out = propagated.matmul(&q.w_g)?;
    let z = gcn_out.matmul(&q.w_r)?.add(v)?;
    z.ensure_finite("rw_gcn_forward")?;
    let frame_feature = z.mean_rows()?.into_vec();

    let cache = ForwardCache {
        config: cfg,
        v: v.clone(),
        inner: Some(GraphCache {
            phi,
            theta,
            scores,
            adjacency,
            degree,
            normalized,
            propagated,
            gcn_out,
        }),
    };
    Ok((ReasonedRegions { z, frame_feature }, cache))
}

/// Convenience for callers that only need the graph: same adjacency as the
/// layer would build.
pub fn layer_graph(
    v: &Matrix,
    p: &EmbedParams,
    cfg: GcnConfig,
) -> Result<crate::graph::SemanticGraph> {
    build_adjacency_with(v, p, cfg.adjacency)
}

/// Reverse pass given `∂loss/∂Z`.
pub fn rw_gcn_backward(
    grad_z: &Matrix,
    cache: &ForwardCache,
    p: &EmbedParams,
    q: &GcnParams,
) -> Result<GcnGrads> {
    let v = &cache.v;
    let (n, d) = v.shape();
    if grad_z.shape() != (n, d) {
        return Err(Error::State(format!(
            "upstream gradient {:?} does not match cached forward pass {:?}",
            grad_z.shape(),
            (n, d)
        )));
    }
    let mut grads = GcnGrads::zeros(n, d);
    grads.v = grad_z.clone();
    let Some(c) = &cache.inner else {
        return Ok(grads);
    };

    // Z = Y W_r + V,  Y = H W_g,  H = N V
    grads.w_r = c.gcn_out.t_matmul(grad_z)?;
    let grad_y = grad_z.matmul_t(&q.w_r)?;
    grads.w_g = c.propagated.t_matmul(&grad_y)?;
    let grad_h = grad_y.matmul_t(&q.w_g)?;
    let grad_n = grad_h.matmul_t(v)?;
    grads.v.add_assign(&c.normalized.t_matmul(&grad_h)?)?;

    let grad_adj =
        normalization_backward(&grad_n, &c.adjacency, &c.degree, cache.config.normalization)?;
    let grad_scores = match cache.config.adjacency {
        AdjacencyMode::Raw => grad_adj,
        AdjacencyMode::Softplus => {
            let mut g = grad_adj;
            for (gi, &s) in g.as_mut_slice().iter_mut().zip(c.scores.as_slice()) {
                *gi *= sigmoid(s);
            }
            g
        }
    };

    // R = A + Aᵀ with A = ΦΘᵀ
    let grad_a = grad_scores.add(&grad_scores.transpose())?;
    let grad_phi = grad_a.matmul(&c.theta)?;
    let grad_theta = grad_a.t_matmul(&c.phi)?;

    // Φ = V W_φᵀ + 1 b_φᵀ
    grads.w_phi = grad_phi.t_matmul(v)?;
    grads.b_phi = grad_phi.col_sums();
    grads.w_theta = grad_theta.t_matmul(v)?;
    grads.b_theta = grad_theta.col_sums();
    grads.v.add_assign(&grad_phi.matmul(&p.w_phi)?)?;
    grads.v.add_assign(&grad_theta.matmul(&p.w_theta)?)?;
    Ok(grads)
}

fn clamp_slope(raw_degree: f64) -> f64 {
    if raw_degree.abs() >= DEGREE_EPSILON {
        1.0
    } else {
        0.0
    }
}

/// `∂loss/∂R` from `∂loss/∂N`, with the degrees treated as functions of `R`.
fn normalization_backward(
    grad_n: &Matrix,
    r: &Matrix,
    degree: &[f64],
    kind: Normalization,
) -> Result<Matrix> {
    let n = r.rows();
    let mut g = Matrix::zeros(n, n);
    match kind {
        Normalization::None => g = grad_n.clone(),
        Normalization::Rw => {
            let ds = stabilized_degrees(degree)?;
            for i in 0..n {
                let mut grad_deg = 0.0;
                for j in 0..n {
                    g[(i, j)] = grad_n[(i, j)] / ds[i];
                    grad_deg -= grad_n[(i, j)] * r[(i, j)] / (ds[i] * ds[i]);
                }
                grad_deg *= clamp_slope(degree[i]);
                for j in 0..n {
                    g[(i, j)] += grad_deg;
                }
            }
        }
        Normalization::Sym => {
            let ds = stabilized_degrees(degree)?;
            let s: Vec<f64> = ds.iter().map(|d| 1.0 / d.abs().sqrt()).collect();
            let mut grad_s = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    let gn = grad_n[(i, j)];
                    g[(i, j)] = gn * s[i] * s[j];
                    grad_s[i] += gn * r[(i, j)] * s[j];
                    grad_s[j] += gn * r[(i, j)] * s[i];
                }
            }
            for i in 0..n {
                // s = |d|^{-1/2}  ⇒  ds/dd = −½ sign(d) |d|^{-3/2}
                let slope = -0.5 * ds[i].signum() * s[i].powi(3);
                let grad_deg = grad_s[i] * slope * clamp_slope(degree[i]);
                for j in 0..n {
                    g[(i, j)] += grad_deg;
                }
            }
        }
        Normalization::Row => {
            for i in 0..n {
                let l1: f64 = r.row(i).iter().map(|x| x.abs()).sum();
                if l1 == 0.0 {
                    return Err(Error::SingularDegree {
                        vertex: i,
                        degree: 0.0,
                    });
                }
                let mut grad_l1 = 0.0;
                for j in 0..n {
                    g[(i, j)] = grad_n[(i, j)] / l1;
                    grad_l1 -= grad_n[(i, j)] * r[(i, j)] / (l1 * l1);
                }
                for j in 0..n {
                    g[(i, j)] += grad_l1 * r[(i, j)].signum() * f64::from(r[(i, j)] != 0.0);
                }
            }
        }
    }
    Ok(g)
}

/// `∂loss/∂Z` for a loss that depends on `Z` only through its row mean.
pub fn mean_rows_backward(grad_mean: &[f64], rows: usize) -> Matrix {
    let scale = 1.0 / rows as f64;
    let mut g = Matrix::zeros(rows, grad_mean.len());
    for r in 0..rows {
        for (o, &x) in g.row_mut(r).iter_mut().zip(grad_mean) {
            *o = x * scale;
        }
    }
    g
}

/// Mean of the frame features of one video.
pub fn pool_frames(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames.first().ok_or(Error::EmptyInput("pool_frames"))?;
    let d = first.len();
    let mut out = vec![0.0; d];
    for f in frames {
        if f.len() != d {
            return Err(Error::Shape {
                op: "pool_frames",
                left: (1, d),
                right: (1, f.len()),
            });
        }
        for (o, x) in out.iter_mut().zip(f) {
            *o += x;
        }
    }
    let inv = 1.0 / frames.len() as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, Checked};

    fn random(rng: &mut Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    fn instance(seed: u64, n: usize, d: usize) -> (Matrix, EmbedParams, GcnParams) {
        let mut rng = Rng::stream(seed, "gcn-test");
        let v = random(&mut rng, n, d).map(|x| x + 0.5);
        let p = EmbedParams {
            w_phi: random(&mut rng, d, d),
            b_phi: random(&mut rng, 1, d),
            w_theta: random(&mut rng, d, d),
            b_theta: random(&mut rng, 1, d),
        };
        let q = GcnParams {
            w_g: random(&mut rng, d, d),
            w_r: random(&mut rng, d, d),
        };
        (v, p, q)
    }

    #[test]
    fn zero_gcn_weight_returns_regions_exactly() {
        let (v, p, mut q) = instance(1, 5, 4);
        q.w_g = Matrix::zeros(4, 4);
        for kind in [Normalization::Rw, Normalization::Sym, Normalization::Row] {
            let out = rw_gcn_forward(&v, &p, &q, kind).unwrap();
            assert_eq!(out.z, v);
        }
    }

    #[test]
    fn bypass_equals_identity() {
        let (v, p, q) = instance(2, 5, 4);
        let out = rw_gcn_forward(&v, &p, &q, Normalization::None).unwrap();
        assert_eq!(out.z, v);
        assert_eq!(out.frame_feature, v.mean_rows().unwrap().into_vec());
    }

    #[test]
    fn single_vertex_uses_unit_transition() {
        let (v, p, q) = instance(3, 1, 3);
        let out = rw_gcn_forward(&v, &p, &q, Normalization::Rw).unwrap();
        let expected = v
            .matmul(&q.w_g)
            .unwrap()
            .matmul(&q.w_r)
            .unwrap()
            .add(&v)
            .unwrap();
        assert!(out.z.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn frame_feature_is_column_mean() {
        let (v, p, q) = instance(4, 6, 3);
        let out = rw_gcn_forward(&v, &p, &q, Normalization::Rw).unwrap();
        let mean = out.z.mean_rows().unwrap();
        for (a, b) in out.frame_feature.iter().zip(mean.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_loss_with_zero_gcn_weight() {
        let (v, p, mut q) = instance(5, 4, 3);
        q.w_g = Matrix::zeros(3, 3);
        let cfg = GcnConfig::default();
        let (_, cache) = rw_gcn_forward_cached(&v, &p, &q, cfg).unwrap();
        let g = rw_gcn_backward(&Matrix::filled(4, 3, 1.0), &cache, &p, &q).unwrap();
        assert_eq!(g.v, Matrix::filled(4, 3, 1.0));
        assert!(g.w_g.frobenius_norm() > 0.0);
        assert_eq!(g.w_r, Matrix::zeros(3, 3));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (v, p, q) = instance(6, 4, 3);
        let (_, cache) = rw_gcn_forward_cached(&v, &p, &q, GcnConfig::default()).unwrap();
        let g = rw_gcn_backward(&Matrix::zeros(4, 3), &cache, &p, &q).unwrap();
        for m in [
            &g.v, &g.w_phi, &g.b_phi, &g.w_theta, &g.b_theta, &g.w_g, &g.w_r,
        ] {
            assert!(m.as_slice().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn mismatched_upstream_is_a_state_error() {
        let (v, p, q) = instance(7, 4, 3);
        let (_, cache) = rw_gcn_forward_cached(&v, &p, &q, GcnConfig::default()).unwrap();
        let err = rw_gcn_backward(&Matrix::zeros(3, 3), &cache, &p, &q).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    /// Weighted-sum loss `Σ C ⊙ Z` for a fixed random `C`.
    fn check_layer_gradients(seed: u64, cfg: GcnConfig) {
        let (n, d) = (4, 6);
        let (v, p, q) = instance(seed, n, d);
        let mut rng = Rng::stream(seed, "weights-of-loss");
        let c = random(&mut rng, n, d);
        let loss = |z: &Matrix| -> f64 {
            z.as_slice()
                .iter()
                .zip(c.as_slice())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = rw_gcn_forward_cached(&v, &p, &q, cfg).unwrap();
        let g = rw_gcn_backward(&c, &cache, &p, &q).unwrap();
        let report = finite_diff_grad(
            |m| {
                let p = EmbedParams {
                    w_phi: m[1].clone(),
                    b_phi: m[2].clone(),
                    w_theta: m[3].clone(),
                    b_theta: m[4].clone(),
                };
                let q = GcnParams {
                    w_g: m[5].clone(),
                    w_r: m[6].clone(),
                };
                let (out, _) = rw_gcn_forward_cached(&m[0], &p, &q, cfg).unwrap();
                loss(&out.z)
            },
            &[
                Checked {
                    name: "v",
                    value: &v,
                    analytic: &g.v,
                },
                Checked {
                    name: "w_phi",
                    value: &p.w_phi,
                    analytic: &g.w_phi,
                },
                Checked {
                    name: "b_phi",
                    value: &p.b_phi,
                    analytic: &g.b_phi,
                },
                Checked {
                    name: "w_theta",
                    value: &p.w_theta,
                    analytic: &g.w_theta,
                },
                Checked {
                    name: "b_theta",
                    value: &p.b_theta,
                    analytic: &g.b_theta,
                },
                Checked {
                    name: "w_g",
                    value: &q.w_g,
                    analytic: &g.w_g,
                },
                Checked {
                    name: "w_r",
                    value: &q.w_r,
                    analytic: &g.w_r,
                },
            ],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.passed, "seed {seed} {cfg:?}: {report:?}");
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        for kind in Normalization::ALL {
            for adjacency in [AdjacencyMode::Raw, AdjacencyMode::Softplus] {
                for seed in 0..4 {
                    check_layer_gradients(
                        seed,
                        GcnConfig {
                            normalization: kind,
                            adjacency,
                        },
                    );
                }
            }
        }
    }

    #[test]
    fn pool_frames_cases() {
        let f = vec![1.0, -2.0, 3.0];
        assert_eq!(pool_frames(&[f.clone()]).unwrap(), f);
        assert_eq!(pool_frames(&[f.clone(), f.clone()]).unwrap(), f);
        assert!(matches!(pool_frames(&[]), Err(Error::EmptyInput(_))));
        let mut rng = Rng::new(16);
        let frames: Vec<Vec<f64>> = (0..16)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let pooled = pool_frames(&frames).unwrap();
        for j in 0..5 {
            let mut s = 0.0;
            for fr in &frames {
                s += fr[j];
            }
            assert!((pooled[j] - s / 16.0).abs() < 1e-12);
        }
    }
}
