//! Semantic correlation graph over the regions of one frame.
//!
//! Edge weights come from a symmetric dot-product attention between two
//! affine embeddings of the region features:
//!
//! ```text
//! R(i, j) = φ(v_i)ᵀθ(v_j) + θ(v_i)ᵀφ(v_j),   φ(x) = W_φ x + b_φ,  θ(x) = W_θ x + b_θ
//! ```
//!
//! The graph is fully connected and includes self-pairs, so `D_ii` sums the
//! whole row of `R` including the diagonal.

mod chebyshev;
mod spectral;

use std::fmt;
use std::str::FromStr;

pub use chebyshev::{chebyshev_apply, chebyshev_scalar, scaled_laplacian, ChebCoeffs};
pub use spectral::{
    jacobi_eigen, rw_laplacian, rw_spectrum, spectral_decompose, sym_laplacian,
    verify_rw_sym_similarity, SimilarityCheck, SpectralDecomposition,
};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Degrees with magnitude below this are rejected outright.
pub const SINGULAR_DEGREE: f64 = 1e-12;
/// Degrees are kept at least this far from zero before inversion.
pub const DEGREE_EPSILON: f64 = 1e-8;

/// How raw attention scores become edge weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum AdjacencyMode {
    /// The bilinear score as is; entries and degrees may be negative.
    #[default]
    Raw,
    /// `softplus` of the bilinear score, giving a strictly positive graph
    /// whose random-walk matrix is a proper stochastic matrix.
    Softplus,
}

impl fmt::Display for AdjacencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdjacencyMode::Raw => "raw",
            AdjacencyMode::Softplus => "softplus",
        })
    }
}

impl FromStr for AdjacencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(AdjacencyMode::Raw),
            "softplus" | "nonneg" => Ok(AdjacencyMode::Softplus),
            other => Err(Error::Config(format!(
                "unknown adjacency mode `{other}` (raw|softplus)"
            ))),
        }
    }
}

/// Normalization applied to the adjacency before propagation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Normalization {
    /// `P = D⁻¹R`, the random-walk transition matrix.
    #[default]
    Rw,
    /// `D^{-1/2} R D^{-1/2}`.
    Sym,
    /// Each row divided by the L1 norm of its entries.
    Row,
    /// `R` untouched. In the reasoning layer this kind means the layer is
    /// bypassed altogether.
    None,
}

impl Normalization {
    pub const ALL: [Normalization; 4] = [
        Normalization::None,
        Normalization::Row,
        Normalization::Sym,
        Normalization::Rw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Normalization::Rw => "rw",
            Normalization::Sym => "sym",
            Normalization::Row => "row",
            Normalization::None => "none",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rw" => Ok(Normalization::Rw),
            "sym" => Ok(Normalization::Sym),
            "row" => Ok(Normalization::Row),
            "none" => Ok(Normalization::None),
            other => Err(Error::Config(format!(
                "unknown normalization `{other}` (rw|sym|row|none)"
            ))),
        }
    }
}

/// The two affine embeddings that score region pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams {
    pub w_phi: Matrix,
    pub b_phi: Matrix,
    pub w_theta: Matrix,
    pub b_theta: Matrix,
}

impl EmbedParams {
    /// Weights uniform in ±1/√d, biases zero.
    pub fn init(d: usize, rng: &mut Rng) -> Self {
        Self {
            w_phi: uniform_matrix(d, d, rng),
            b_phi: Matrix::zeros(1, d),
            w_theta: uniform_matrix(d, d, rng),
            b_theta: Matrix::zeros(1, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_phi.rows()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        for (m, want) in [
            (&self.w_phi, (d, d)),
            (&self.w_theta, (d, d)),
            (&self.b_phi, (1, d)),
            (&self.b_theta, (1, d)),
        ] {
            if m.shape() != want {
                return Err(Error::Shape {
                    op: "embed params",
                    left: want,
                    right: m.shape(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform(-bound, bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("finite by construction")
}

/// `X Wᵀ + 1 bᵀ`, i.e. `W x + b` applied to every row of `X`.
pub(crate) fn affine_rows(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = x.matmul_t(w)?;
    if b.shape() != (1, out.cols()) {
        return Err(Error::Shape {
            op: "affine bias",
            left: (1, out.cols()),
            right: b.shape(),
        });
    }
    for r in 0..out.rows() {
        for (o, &bb) in out.row_mut(r).iter_mut().zip(b.row(0)) {
            *o += bb;
        }
    }
    Ok(out)
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticGraph {
    adjacency: Matrix,
    degree: Vec<f64>,
}

impl SemanticGraph {
    /// Wraps an explicit adjacency. It must be square and symmetric to
    /// within 1e-12 relative to its largest entry.
    pub fn from_adjacency(adjacency: Matrix) -> Result<Self> {
        let asym = adjacency.max_asymmetry()?;
        let scale = adjacency
            .as_slice()
            .iter()
            .fold(1.0f64, |m, x| m.max(x.abs()));
        if asym > 1e-12 * scale {
            return Err(Error::Symmetry {
                max_asymmetry: asym,
            });
        }
        adjacency.ensure_finite("adjacency")?;
        let degree = adjacency.row_sums();
        Ok(Self { adjacency, degree })
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }
}

/// Raw bilinear scores `A + Aᵀ` with `A = ΦΘᵀ`. Entry (i, j) and (j, i)
/// are the same floating-point sum, so the result is exactly symmetric.
pub(crate) fn bilinear_scores(phi: &Matrix, theta: &Matrix) -> Result<Matrix> {
    let a = phi.matmul_t(theta)?;
    let n = a.rows();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = a[(i, j)] + a[(j, i)];
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

pub fn build_adjacency(regions: &Matrix, p: &EmbedParams) -> Result<SemanticGraph> {
    build_adjacency_with(regions, p, AdjacencyMode::Raw)
}

pub fn build_adjacency_with(
    regions: &Matrix,
    p: &EmbedParams,
    mode: AdjacencyMode,
) -> Result<SemanticGraph> {
    p.validate()?;
    if regions.cols() != p.dim() {
        return Err(Error::Shape {
            op: "build_adjacency",
            left: regions.shape(),
            right: p.w_phi.shape(),
        });
    }
    if regions.rows() == 0 {
        return Err(Error::EmptyInput("build_adjacency"));
    }
    let phi = affine_rows(regions, &p.w_phi, &p.b_phi)?;
    let theta = affine_rows(regions, &p.w_theta, &p.b_theta)?;
    let mut r = bilinear_scores(&phi, &theta)?;
    if mode == AdjacencyMode::Softplus {
        r = r.map(softplus);
    }
    r.ensure_finite("adjacency")?;
    let degree = r.row_sums();
    Ok(SemanticGraph {
        adjacency: r,
        degree,
    })
}

/// Combinatorial Laplacian `L = D − R`.
pub fn laplacian(g: &SemanticGraph) -> Matrix {
    let mut l = g.adjacency.scale(-1.0);
    for (i, &d) in g.degree.iter().enumerate() {
        l[(i, i)] += d;
    }
    l
}

/// Rejects degrees with `|d| < 1e-12`; otherwise keeps the sign and lifts the
/// magnitude to at least [`DEGREE_EPSILON`].
pub fn stabilized_degrees(degree: &[f64]) -> Result<Vec<f64>> {
    degree
        .iter()
        .enumerate()
        .map(|(vertex, &d)| {
            if d.is_nan() || d.abs() < SINGULAR_DEGREE {
                Err(Error::SingularDegree { vertex, degree: d })
            } else {
                Ok(d.signum() * d.abs().max(DEGREE_EPSILON))
            }
        })
        .collect()
}

pub fn normalize(g: &SemanticGraph, kind: Normalization) -> Result<Matrix> {
    normalize_adjacency(&g.adjacency, &g.degree, kind)
}

pub(crate) fn normalize_adjacency(
    r: &Matrix,
    degree: &[f64],
    kind: Normalization,
) -> Result<Matrix> {
    let n = r.rows();
    let mut out = r.clone();
    match kind {
        Normalization::None => {}
        Normalization::Rw => {
            let d = stabilized_degrees(degree)?;
            for i in 0..n {
                for x in out.row_mut(i) {
                    *x /= d[i];
                }
            }
        }
        Normalization::Sym => {
            let d = stabilized_degrees(degree)?;
            for i in 0..n {
                for (j, x) in out.row_mut(i).iter_mut().enumerate() {
                    *x /= (d[i] * d[j]).abs().sqrt();
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
                for x in out.row_mut(i) {
                    *x /= l1;
                }
            }
        }
    }
    out.ensure_finite("normalize")?;
    Ok(out)
}

/// Writes a matrix as CSV, one row per line.
pub fn write_matrix_csv<W: std::io::Write>(m: &Matrix, mut w: W) -> std::io::Result<()> {
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|x| x.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
