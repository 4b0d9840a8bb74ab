//! Feature-rectification weights.
//!
//! Row `j` of `W` reconstructs every other feature from feature `j`:
//! `X[i, k] ~ X[i, j] * W[j, k]` for `k != j`. The diagonal is pinned at zero.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CfrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    Zeros,
    UniformSmall,
}

/// Norm applied to each per-(sample, feature) reconstruction residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionNorm {
    #[default]
    SquaredL2,
    L1,
}

const UNIFORM_SMALL_BOUND: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RectifierWeights {
    w: DMatrix<f64>,
}

impl RectifierWeights {
    pub fn zeros(p: usize) -> Self {
        RectifierWeights {
            w: DMatrix::zeros(p, p),
        }
    }

    /// Wraps a square matrix; the diagonal must already be zero.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(CfrError::dim(
                "rectifier weights",
                "square matrix",
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(CfrError::Consistency("rectifier weights contain non-finite entries".into()));
        }
        if (0..w.nrows()).any(|j| w[(j, j)] != 0.0) {
            return Err(CfrError::Consistency("rectifier weights must have a zero diagonal".into()));
        }
        Ok(RectifierWeights { w })
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `I + W`, the map applied to features before the linear head.
    pub fn augmented(&self) -> DMatrix<f64> {
        let mut m = self.w.clone();
        for j in 0..m.nrows() {
            m[(j, j)] += 1.0;
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.w.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(CfrError::dim("rectifier weights row", p, bad.len()));
        }
        let w = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
        Self::from_matrix(w)
    }
}

impl Serialize for RectifierWeights {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RectifierWeights {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        RectifierWeights::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn init_weights(p: usize, scheme: InitScheme, rng: &mut impl Rng) -> Result<RectifierWeights> {
    if p < 2 {
        return Err(CfrError::dim("init_weights", "p >= 2", p));
    }
    let w = match scheme {
        InitScheme::Zeros => DMatrix::zeros(p, p),
        InitScheme::UniformSmall => {
            let mut w = DMatrix::zeros(p, p);
            for j in 0..p {
                for k in 0..p {
                    if j != k {
                        w[(j, k)] = rng.random_range(-UNIFORM_SMALL_BOUND..=UNIFORM_SMALL_BOUND);
                    }
                }
            }
            w
        }
    };
    Ok(RectifierWeights { w })
}

fn check_cols(context: &'static str, x: &DMatrix<f64>, w: &RectifierWeights) -> Result<()> {
    if x.ncols() != w.p() {
        return Err(CfrError::dim(context, w.p(), x.ncols()));
    }
    Ok(())
}

/// Squared-L2 reconstruction loss summed over samples and features.
pub fn reconstruction_loss(x: &DMatrix<f64>, w: &RectifierWeights) -> Result<f64> {
    reconstruction_loss_with(x, w, ReconstructionNorm::SquaredL2)
}

pub fn reconstruction_loss_with(
    x: &DMatrix<f64>,
    w: &RectifierWeights,
    norm: ReconstructionNorm,
) -> Result<f64> {
    check_cols("reconstruction_loss", x, w)?;
    let p = w.p();
    let wm = &w.w;
    let mut total = 0.0;
    for i in 0..x.nrows() {
        for j in 0..p {
            let xij = x[(i, j)];
            for k in (0..p).filter(|&k| k != j) {
                let r = x[(i, k)] - xij * wm[(j, k)];
                total += match norm {
                    ReconstructionNorm::SquaredL2 => r * r,
                    ReconstructionNorm::L1 => r.abs(),
                };
            }
        }
    }
    Ok(total)
}

/// Gradient of [`reconstruction_loss`] with respect to `W`; zero diagonal.
pub fn reconstruction_grad(x: &DMatrix<f64>, w: &RectifierWeights) -> Result<DMatrix<f64>> {
    reconstruction_grad_with(x, w, ReconstructionNorm::SquaredL2)
}

pub fn reconstruction_grad_with(
    x: &DMatrix<f64>,
    w: &RectifierWeights,
    norm: ReconstructionNorm,
) -> Result<DMatrix<f64>> {
    check_cols("reconstruction_grad", x, w)?;
    let p = w.p();
    let wm = &w.w;
    let mut g = DMatrix::zeros(p, p);
    match norm {
        ReconstructionNorm::SquaredL2 => {
            // dL/dW[j,k] = -2 (G[j,k] - W[j,k] G[j,j]) with G = X^T X
            let gram = x.tr_mul(x);
            for j in 0..p {
                for k in (0..p).filter(|&k| k != j) {
                    g[(j, k)] = -2.0 * (gram[(j, k)] - wm[(j, k)] * gram[(j, j)]);
                }
            }
        }
        ReconstructionNorm::L1 => {
            for i in 0..x.nrows() {
                for j in 0..p {
                    let xij = x[(i, j)];
                    for k in (0..p).filter(|&k| k != j) {
                        let r = x[(i, k)] - xij * wm[(j, k)];
                        g[(j, k)] -= xij * sign(r);
                    }
                }
            }
        }
    }
    Ok(g)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `X W`.
pub fn rectify(x: &DMatrix<f64>, w: &RectifierWeights) -> Result<DMatrix<f64>> {
    check_cols("rectify", x, w)?;
    Ok(x * &w.w)
}

/// `W - lr * grad` with the diagonal re-zeroed.
pub fn sgd_step_w(w: &RectifierWeights, grad: &DMatrix<f64>, lr: f64) -> Result<RectifierWeights> {
    if grad.shape() != w.w.shape() {
        return Err(CfrError::dim(
            "sgd_step_w",
            format!("{}x{}", w.p(), w.p()),
            format!("{}x{}", grad.nrows(), grad.ncols()),
        ));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(CfrError::Config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(CfrError::Divergence {
            epoch: 0,
            lr_w: lr,
            lr_model: f64::NAN,
            detail: "non-finite rectifier gradient".into(),
        });
    }
    let mut next = &w.w - grad * lr;
    for j in 0..next.nrows() {
        next[(j, j)] = 0.0;
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(CfrError::Divergence {
            epoch: 0,
            lr_w: lr,
            lr_model: f64::NAN,
            detail: "rectifier weights overflowed".into(),
        });
    }
    Ok(RectifierWeights { w: next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::rng_from_seed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn w_of(rows: &[&[f64]]) -> RectifierWeights {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        RectifierWeights::from_rows(&v).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_weights(p: usize, seed: u64) -> RectifierWeights {
        let mut m = random_matrix(p, p, seed) * 0.5;
        m.fill_diagonal(0.0);
        RectifierWeights::from_matrix(m).unwrap()
    }

    #[test]
    fn init_schemes() {
        let z = init_weights(3, InitScheme::Zeros, &mut rng_from_seed(0)).unwrap();
        assert_eq!(z.matrix(), &DMatrix::zeros(3, 3));
        let u = init_weights(5, InitScheme::UniformSmall, &mut rng_from_seed(1)).unwrap();
        assert!((0..5).all(|j| u.matrix()[(j, j)] == 0.0));
        assert!(u.matrix().iter().all(|v| v.abs() <= 0.01));
        assert!(u.matrix().iter().any(|v| *v != 0.0));
        let again = init_weights(5, InitScheme::UniformSmall, &mut rng_from_seed(1)).unwrap();
        assert_eq!(u, again);
        assert!(init_weights(1, InitScheme::Zeros, &mut rng_from_seed(0)).is_err());
    }

    #[test]
    fn loss_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let w = w_of(&[&[0.0, 2.0], &[0.5, 0.0]]);
        assert_eq!(reconstruction_loss(&x, &w).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&x, &RectifierWeights::zeros(2)).unwrap(), 5.0);
        let l1 = reconstruction_loss_with(&x, &RectifierWeights::zeros(2), ReconstructionNorm::L1).unwrap();
        assert_eq!(l1, 3.0);
    }

    #[test]
    fn loss_matches_triple_loop() {
        let x = random_matrix(5, 3, 11);
        let w = random_weights(3, 12);
        let mut brute = 0.0;
        for i in 0..5 {
            for j in 0..3 {
                for k in 0..3 {
                    if k != j {
                        let r = x[(i, k)] - x[(i, j)] * w.matrix()[(j, k)];
                        brute += r * r;
                    }
                }
            }
        }
        assert_abs_diff_eq!(reconstruction_loss(&x, &w).unwrap(), brute, epsilon = 1e-12);
    }

    #[test]
    fn grad_matches_central_differences() {
        let x = random_matrix(6, 4, 21);
        let w = random_weights(4, 22);
        let g = reconstruction_grad(&x, &w).unwrap();
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for j in 0..4 {
            for k in 0..4 {
                if j == k {
                    assert_eq!(g[(j, k)], 0.0);
                    continue;
                }
                let mut plus = w.matrix().clone();
                plus[(j, k)] += h;
                let mut minus = w.matrix().clone();
                minus[(j, k)] -= h;
                let lp = reconstruction_loss(&x, &RectifierWeights::from_matrix(plus).unwrap()).unwrap();
                let lm = reconstruction_loss(&x, &RectifierWeights::from_matrix(minus).unwrap()).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                max_rel = max_rel.max((fd - g[(j, k)]).abs() / fd.abs().max(g[(j, k)].abs()).max(1e-8));
            }
        }
        assert!(max_rel < 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn grad_vanishes_at_exact_reconstruction() {
        // rank-1 data: every column is a multiple of the first, so exact W exists
        let base = [1.0, -2.0, 0.5];
        let scale = [1.0, 3.0, -0.5];
        let x = DMatrix::from_fn(3, 3, |i, k| base[i] * scale[k]);
        let w = DMatrix::from_fn(3, 3, |j, k| if j == k { 0.0 } else { scale[k] / scale[j] });
        let w = RectifierWeights::from_matrix(w).unwrap();
        assert_abs_diff_eq!(reconstruction_loss(&x, &w).unwrap(), 0.0, epsilon = 1e-24);
        let g = reconstruction_grad(&x, &w).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_column_gives_zero_grad_row() {
        let mut x = random_matrix(6, 4, 31);
        x.column_mut(2).fill(0.0);
        let g = reconstruction_grad(&x, &random_weights(4, 32)).unwrap();
        assert!(g.row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rectify_examples() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let w = w_of(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert_eq!(rectify(&x, &w).unwrap(), DMatrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(rectify(&x, &RectifierWeights::zeros(2)).unwrap(), DMatrix::zeros(1, 2));
        assert!(rectify(&x, &RectifierWeights::zeros(3)).is_err());
    }

    #[test]
    fn step_behaviour() {
        let w = random_weights(3, 41);
        let same = sgd_step_w(&w, &DMatrix::zeros(3, 3), 0.005).unwrap();
        assert_eq!(same, w);
        let mut bad = DMatrix::zeros(3, 3);
        bad[(0, 1)] = f64::NAN;
        assert!(matches!(sgd_step_w(&w, &bad, 0.005), Err(CfrError::Divergence { .. })));

        let x = DMatrix::from_row_slice(1, 3, &[0.3, -1.2, 0.8]);
        let g = reconstruction_grad(&x, &w).unwrap();
        let stepped = sgd_step_w(&w, &g, 0.01).unwrap();
        assert!(reconstruction_loss(&x, &stepped).unwrap() < reconstruction_loss(&x, &w).unwrap());
        assert!((0..3).all(|j| stepped.matrix()[(j, j)] == 0.0));
    }

    #[test]
    fn full_batch_descent_is_monotone() {
        let x = random_matrix(40, 5, 51);
        let mut w = RectifierWeights::zeros(5);
        let mut prev = reconstruction_loss(&x, &w).unwrap();
        for _ in 0..100 {
            let g = reconstruction_grad(&x, &w).unwrap();
            w = sgd_step_w(&w, &g, 0.001).unwrap();
            let cur = reconstruction_loss(&x, &w).unwrap();
            assert!(cur <= prev + 1e-9, "{cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn serde_rejects_nonzero_diagonal() {
        let w = random_weights(3, 61);
        let json = serde_json::to_string(&w).unwrap();
        let back: RectifierWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(back, w);
        assert!(serde_json::from_str::<RectifierWeights>("[[1.0, 0.0], [0.0, 0.0]]").is_err());
        assert!(serde_json::from_str::<RectifierWeights>("[[0.0, 0.0]]").is_err());
    }

    proptest! {
        #[test]
        fn loss_scales_quadratically(seed in 0u64..1000, c in -5.0f64..5.0) {
            let x = random_matrix(4, 3, seed);
            let w = random_weights(3, seed + 1);
            let base = reconstruction_loss(&x, &w).unwrap();
            let scaled = reconstruction_loss(&(&x * c), &w).unwrap();
            prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn step_keeps_zero_diagonal(seed in 0u64..1000, lr in 0.0f64..0.1) {
            let x = random_matrix(5, 4, seed);
            let w = random_weights(4, seed + 7);
            let g = reconstruction_grad(&x, &w).unwrap();
            let next = sgd_step_w(&w, &g, lr).unwrap();
            prop_assert!((0..4).all(|j| next.matrix()[(j, j)] == 0.0));
        }
    }
}
