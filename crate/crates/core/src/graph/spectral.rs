//! Symmetric eigen-decomposition and the spectral facts behind the
//! random-walk normalization.

use crate::error::{Error, Result};
use crate::graph::{stabilized_degrees, SemanticGraph};
use crate::numerics::Matrix;

const MAX_SWEEPS: usize = 100;

#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Matrix,
    pub lambda_max: f64,
}

impl SpectralDecomposition {
    /// `U diag(Λ) Uᵀ`.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let u = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n)
                    .map(|k| u[(i, k)] * self.eigenvalues[k] * u[(j, k)])
                    .sum();
            }
        }
        out
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix. The input is assumed
/// symmetric; only callers that have checked it should use this directly.
pub fn jacobi_eigen(m: &Matrix) -> SpectralDecomposition {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        a[(r, p)] = c * arp - s * arq;
                        a[(p, r)] = a[(r, p)];
                        a[(r, q)] = c * arq + s * arp;
                        a[(q, r)] = a[(r, q)];
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[(r, k)] = v[(r, src)];
        }
    }
    let lambda_max = eigenvalues.last().copied().unwrap_or(0.0);
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        lambda_max,
    }
}

/// Eigen-decomposition of a symmetric matrix (checked to 1e-10 relative to
/// its largest entry).
pub fn spectral_decompose(m: &Matrix) -> Result<SpectralDecomposition> {
    let asym = m.max_asymmetry()?;
    let scale = m.as_slice().iter().fold(1.0f64, |acc, x| acc.max(x.abs()));
    if asym > 1e-10 * scale {
        return Err(Error::Symmetry {
            max_asymmetry: asym,
        });
    }
    m.ensure_finite("spectral_decompose")?;
    Ok(jacobi_eigen(m))
}

fn positive_degrees(g: &SemanticGraph) -> Result<Vec<f64>> {
    let d = stabilized_degrees(g.degree())?;
    if let Some(i) = d.iter().position(|&x| x < 0.0) {
        return Err(Error::Degenerate(format!("negative degree at vertex {i}")));
    }
    Ok(d)
}

/// `L^rw = I − D⁻¹R`.
pub fn rw_laplacian(g: &SemanticGraph) -> Result<Matrix> {
    let d = stabilized_degrees(g.degree())?;
    let r = g.adjacency();
    let n = g.len();
    let mut l = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= r[(i, j)] / d[i];
        }
    }
    Ok(l)
}

/// `L^sym = I − D^{-1/2} R D^{-1/2}`; requires positive degrees.
pub fn sym_laplacian(g: &SemanticGraph) -> Result<Matrix> {
    let s: Vec<f64> = positive_degrees(g)?
        .iter()
        .map(|d| 1.0 / d.sqrt())
        .collect();
    let r = g.adjacency();
    let n = g.len();
    let mut l = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            l[(i, j)] -= s[i] * r[(i, j)] * s[j];
        }
    }
    Ok(l)
}

/// Ascending eigenvalues of the (generally non-symmetric) `L^rw`, obtained
/// from the matrix itself through `D^{1/2} L^rw D^{-1/2}`, which is
/// symmetric for positive degrees.
pub fn rw_spectrum(g: &SemanticGraph) -> Result<Vec<f64>> {
    let d = positive_degrees(g)?;
    let lrw = rw_laplacian(g)?;
    let n = g.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = d[i].sqrt() * lrw[(i, j)] / d[j].sqrt();
        }
    }
    let sym = s.add(&s.transpose())?.scale(0.5);
    Ok(jacobi_eigen(&sym).eigenvalues)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityCheck {
    /// max |λ_k(L^rw) − λ_k(L^sym)| over sorted spectra.
    pub eigenvalue_deviation: f64,
    /// max |L^rw − D^{-1/2} L^sym D^{1/2}| entry-wise.
    pub similarity_deviation: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
}

impl SimilarityCheck {
    pub fn spectra_match(&self) -> bool {
        self.eigenvalue_deviation < 1e-8 && self.similarity_deviation < 1e-10
    }

    pub fn within_bounds(&self) -> bool {
        self.min_eigenvalue >= -1e-9 && self.max_eigenvalue <= 2.0 + 1e-9
    }

    pub fn holds(&self) -> bool {
        self.spectra_match() && self.within_bounds()
    }

    pub fn max_deviation(&self) -> f64 {
        self.eigenvalue_deviation.max(self.similarity_deviation)
    }
}

pub fn verify_rw_sym_similarity(g: &SemanticGraph) -> Result<SimilarityCheck> {
    let d = positive_degrees(g)?;
    let lrw = rw_laplacian(g)?;
    let lsym = sym_laplacian(g)?;
    let n = g.len();

    let rw = rw_spectrum(g)?;
    let sym = jacobi_eigen(&lsym).eigenvalues;
    let eigenvalue_deviation = rw
        .iter()
        .zip(&sym)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut similarity_deviation = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let transformed = lsym[(i, j)] * d[j].sqrt() / d[i].sqrt();
            similarity_deviation = similarity_deviation.max((lrw[(i, j)] - transformed).abs());
        }
    }

    let min_eigenvalue = rw
        .first()
        .copied()
        .unwrap_or(0.0)
        .min(sym.first().copied().unwrap_or(0.0));
    let max_eigenvalue = rw
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(sym.last().copied().unwrap_or(0.0));
    Ok(SimilarityCheck {
        eigenvalue_deviation,
        similarity_deviation,
        min_eigenvalue,
        max_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::laplacian;
    use crate::numerics::Rng;

    fn random_symmetric(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.uniform(lo, hi);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    #[test]
    fn two_vertex_laplacian_spectrum() {
        let l = Matrix::from_rows(&[[1.0, -1.0], [-1.0, 1.0]]);
        let s = spectral_decompose(&l).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-14);
        assert!((s.eigenvalues[1] - 2.0).abs() < 1e-14);
        assert!((s.lambda_max - 2.0).abs() < 1e-14);
    }

    #[test]
    fn identity_spectrum() {
        let s = spectral_decompose(&Matrix::identity(5)).unwrap();
        assert!(s.eigenvalues.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let mut rng = Rng::stream(8, "jacobi");
        let m = random_symmetric(&mut rng, 8, -2.0, 2.0);
        let s = spectral_decompose(&m).unwrap();
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm();
        assert!(err < 1e-8 * m.frobenius_norm(), "{err}");
        let gram = s.eigenvectors.t_matmul(&s.eigenvectors).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(8)).unwrap() < 1e-12);
        assert!(s.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn non_symmetric_input_is_rejected() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]);
        assert!(matches!(
            spectral_decompose(&m),
            Err(Error::Symmetry { .. })
        ));
    }

    #[test]
    fn hand_case_similarity() {
        let g =
            SemanticGraph::from_adjacency(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        let check = verify_rw_sym_similarity(&g).unwrap();
        assert!(check.holds(), "{check:?}");
        let rw = rw_spectrum(&g).unwrap();
        assert!(rw[0].abs() < 1e-12 && (rw[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vector_is_in_the_kernel() {
        let mut rng = Rng::stream(3, "kernel");
        let g = SemanticGraph::from_adjacency(random_symmetric(&mut rng, 7, 0.1, 1.0)).unwrap();
        let l = rw_laplacian(&g).unwrap();
        for s in l.row_sums() {
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn random_positive_graph_similarity() {
        let mut rng = Rng::stream(10, "similarity");
        let g = SemanticGraph::from_adjacency(random_symmetric(&mut rng, 10, 0.0, 1.0)).unwrap();
        let check = verify_rw_sym_similarity(&g).unwrap();
        assert!(check.holds(), "{check:?}");
    }

    #[test]
    fn combinatorial_laplacian_is_positive_semidefinite() {
        let mut rng = Rng::stream(12, "psd");
        let g = SemanticGraph::from_adjacency(random_symmetric(&mut rng, 9, 0.0, 1.0)).unwrap();
        let s = spectral_decompose(&laplacian(&g)).unwrap();
        assert!(s.eigenvalues[0] > -1e-12);
    }

    #[test]
    fn negative_degree_is_reported() {
        let g =
            SemanticGraph::from_adjacency(Matrix::from_rows(&[[-1.0, 0.0], [0.0, 1.0]])).unwrap();
        assert!(matches!(
            verify_rw_sym_similarity(&g),
            Err(Error::Degenerate(_))
        ));
    }
}
