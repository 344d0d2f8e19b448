//! Built-in test problems with analytically documented constants.
//!
//! Each problem certifies its constants on a bounded region (the iterates of
//! the optimizers stay inside by construction) and documents how `L1`, `L2`,
//! `G` and the objective gap were derived. Data generation is seeded and
//! reproducible.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use super::{Population, ProblemConstants, Region, SampleId, StochasticProblem};
use crate::rngutil::{bounded_symmetric_noise, unit_sphere};

/// Nominal noise scale reported by noiseless problems (the constant must be
/// positive; the estimators bypass the sizing formulas when
/// `is_noiseless()` holds).
const NOISELESS_G: f64 = 1e-9;

// ---------------------------------------------------------------------------
// (a) Saddle quadratic with additive gradient noise
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum QuadraticNoise {
    /// Finite table of pre-generated noise vectors, centered to exact zero
    /// mean; `mean` stores the residual floating-point mean.
    Finite {
        table: Vec<DVector<f64>>,
        mean: DVector<f64>,
    },
    /// Noise regenerated from the sample id used as a generator seed.
    Infinite { radius: f64 },
    Noiseless,
}

/// `f(x; xi) = 1/2 x' diag(spectrum) x + xi' x` with zero-mean noise `xi`.
///
/// The per-sample Hessian is the constant matrix `diag(spectrum)`, so the
/// Hessian estimate is exact for any batch while the gradient carries noise.
/// Documented constants: `L1 = max |spectrum_i|` (exact, global),
/// `L2 = L1` (the true Hessian-Lipschitz constant is zero; any positive
/// bound is valid), `G = max ||xi||` (bounded noise is sub-exponential).
#[derive(Debug)]
pub struct SaddleQuadratic {
    spectrum: DVector<f64>,
    noise: QuadraticNoise,
    population: Population,
    constants: ProblemConstants,
    x0: DVector<f64>,
    box_radius: f64,
}

impl SaddleQuadratic {
    /// Default spectrum: positives descending from 0.5 to 0.1, one mildly
    /// negative direction at -0.04 so the landscape is a shallow saddle.
    pub fn default_spectrum(dim: usize) -> Vec<f64> {
        if dim == 1 {
            return vec![0.5];
        }
        let mut s: Vec<f64> = (0..dim - 1)
            .map(|i| 0.5 - 0.4 * i as f64 / (dim - 1).max(2) as f64)
            .collect();
        s.push(-0.04);
        s
    }

    pub fn new(dim: usize, noise_radius: f64, population: Population, data_seed: u64) -> Self {
        Self::with_spectrum(
            Self::default_spectrum(dim),
            noise_radius,
            population,
            data_seed,
        )
    }

    pub fn with_spectrum(
        spectrum: Vec<f64>,
        noise_radius: f64,
        population: Population,
        data_seed: u64,
    ) -> Self {
        assert!(!spectrum.is_empty(), "spectrum must be non-empty");
        let dim = spectrum.len();
        let spectrum = DVector::from_vec(spectrum);
        let box_radius = 1.5;

        let (noise, g) = if noise_radius == 0.0 {
            (QuadraticNoise::Noiseless, NOISELESS_G)
        } else {
            match population {
                Population::Infinite => (
                    QuadraticNoise::Infinite {
                        radius: noise_radius,
                    },
                    noise_radius,
                ),
                Population::Finite(n) => {
                    assert!(n >= 1, "population must be non-empty");
                    let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
                    let mut table: Vec<DVector<f64>> = (0..n)
                        .map(|_| bounded_symmetric_noise(dim, noise_radius, &mut rng))
                        .collect();
                    let mean = table.iter().sum::<DVector<f64>>() / n as f64;
                    for v in &mut table {
                        *v -= &mean;
                    }
                    let residual = table.iter().sum::<DVector<f64>>() / n as f64;
                    let g = table.iter().map(|v| v.norm()).fold(0.0, f64::max);
                    (
                        QuadraticNoise::Finite {
                            table,
                            mean: residual,
                        },
                        g.max(NOISELESS_G),
                    )
                }
            }
        };

        let l1 = spectrum.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        assert!(l1 > 0.0, "spectrum must contain a nonzero eigenvalue");
        let x0 = DVector::from_element(dim, 0.3);

        let mut p = SaddleQuadratic {
            spectrum,
            noise,
            population,
            constants: ProblemConstants {
                grad_lipschitz: l1,
                hess_lipschitz: l1,
                noise_scale: g,
                f_gap: 1.0, // placeholder, fixed below
            },
            x0,
            box_radius,
        };
        p.constants.f_gap = p.f_gap_from(&p.x0.clone());
        p
    }

    fn noise_vec(&self, id: SampleId) -> DVector<f64> {
        match &self.noise {
            QuadraticNoise::Noiseless => DVector::zeros(self.spectrum.len()),
            QuadraticNoise::Finite { table, .. } => table[id.0 as usize].clone(),
            QuadraticNoise::Infinite { radius } => {
                let mut rng = ChaCha8Rng::seed_from_u64(id.0);
                bounded_symmetric_noise(self.spectrum.len(), *radius, &mut rng)
            }
        }
    }

    fn noise_mean(&self) -> DVector<f64> {
        match &self.noise {
            QuadraticNoise::Finite { mean, .. } => mean.clone(),
            _ => DVector::zeros(self.spectrum.len()),
        }
    }

    /// Minimum of the exact objective over the certified box (separable).
    fn box_min(&self) -> f64 {
        let m = self.noise_mean();
        let r = self.box_radius;
        (0..self.spectrum.len())
            .map(|j| {
                let l = self.spectrum[j];
                let q = |x: f64| 0.5 * l * x * x + m[j] * x;
                // Candidates: box edges and the interior stationary point.
                let mut best = q(-r).min(q(r));
                if l > 0.0 {
                    let xs = (-m[j] / l).clamp(-r, r);
                    best = best.min(q(xs));
                }
                best
            })
            .sum()
    }
}

impl StochasticProblem for SaddleQuadratic {
    fn dim(&self) -> usize {
        self.spectrum.len()
    }

    fn population(&self) -> Population {
        match self.noise {
            QuadraticNoise::Noiseless => Population::Finite(1),
            _ => self.population,
        }
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn is_noiseless(&self) -> bool {
        matches!(self.noise, QuadraticNoise::Noiseless)
    }

    fn certified_region(&self) -> Option<Region> {
        Some(Region::LinfBall(self.box_radius))
    }

    fn default_start(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn f_gap_from(&self, x0: &DVector<f64>) -> f64 {
        (self.exact_value(x0) - self.box_min()).max(1e-9)
    }

    fn sample_value(&self, x: &DVector<f64>, id: SampleId) -> f64 {
        let quad: f64 = (0..x.len()).map(|j| 0.5 * self.spectrum[j] * x[j] * x[j]).sum();
        quad + self.noise_vec(id).dot(x)
    }

    fn sample_grad_acc(&self, x: &DVector<f64>, id: SampleId, acc: &mut DVector<f64>) {
        let noise = self.noise_vec(id);
        for j in 0..x.len() {
            acc[j] += self.spectrum[j] * x[j] + noise[j];
        }
    }

    fn sample_hvp_acc(&self, x: &DVector<f64>, _id: SampleId, v: &DVector<f64>, acc: &mut DVector<f64>) {
        for j in 0..x.len() {
            acc[j] += self.spectrum[j] * v[j];
        }
    }

    fn exact_value(&self, x: &DVector<f64>) -> f64 {
        let quad: f64 = (0..x.len()).map(|j| 0.5 * self.spectrum[j] * x[j] * x[j]).sum();
        quad + self.noise_mean().dot(x)
    }

    fn exact_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = self.noise_mean();
        for j in 0..x.len() {
            g[j] += self.spectrum[j] * x[j];
        }
        g
    }

    fn exact_hessian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.spectrum)
    }
}

// ---------------------------------------------------------------------------
// (b) Separable quartic with per-sample weights
// ---------------------------------------------------------------------------

/// `f(x; i) = w_i * sum_j (x_j^4/4 - x_j^2/2)` with weights of exact mean 1.
///
/// Strict saddle at the origin (Hessian `-I` there), minima at every corner
/// `|x_j| = 1`. Constants on the box `||x||_inf <= R` (default `R = 1.3`):
/// per-coordinate Hessian entries are `w (3x^2 - 1)`, so
/// `L1 = w_max * max(3R^2 - 1, 1)`; the full Hessian's Lipschitz constant is
/// `w_mean * 6R`; the gradient noise is bounded by
/// `max|w_i - 1| * sqrt(d) * max|x^3 - x|`, which serves as `G`.
#[derive(Debug)]
pub struct SeparableQuartic {
    dim: usize,
    weights: Vec<f64>,
    w_mean: f64,
    noiseless: bool,
    constants: ProblemConstants,
    x0: DVector<f64>,
    box_radius: f64,
}

impl SeparableQuartic {
    pub fn new(dim: usize, weight_spread: f64, population: usize, data_seed: u64) -> Self {
        Self::with_box(dim, weight_spread, population, data_seed, 1.3)
    }

    pub fn with_box(
        dim: usize,
        weight_spread: f64,
        population: usize,
        data_seed: u64,
        box_radius: f64,
    ) -> Self {
        assert!(dim >= 1 && population >= 1);
        assert!(
            box_radius >= 1.0,
            "box must contain the minima at |x_j| = 1"
        );
        assert!(
            (0.0..1.0).contains(&weight_spread),
            "weight spread must be in [0, 1) to keep weights positive"
        );
        let noiseless = weight_spread == 0.0;
        let weights = if noiseless {
            vec![1.0; population]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
            let mut w: Vec<f64> = (0..population)
                .map(|_| 1.0 + weight_spread * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let mean = w.iter().sum::<f64>() / population as f64;
            for wi in &mut w {
                *wi += 1.0 - mean;
            }
            w
        };
        let w_mean = weights.iter().sum::<f64>() / population as f64;
        let w_max = weights.iter().fold(0.0f64, |m, &w| m.max(w));
        let w_dev = weights
            .iter()
            .fold(0.0f64, |m, &w| m.max((w - w_mean).abs()));

        let r = box_radius;
        let l1 = w_max * (3.0 * r * r - 1.0).max(1.0);
        let l2 = w_mean * 6.0 * r;
        // max |x^3 - x| on [-R, R]: interior critical value 2/(3*sqrt(3)) and
        // the box edge R^3 - R (R >= 1 here).
        let qmax = (r.powi(3) - r).max(2.0 / (3.0 * 3.0f64.sqrt()));
        let g = if noiseless {
            NOISELESS_G
        } else {
            (w_dev * (dim as f64).sqrt() * qmax).max(NOISELESS_G)
        };
        let x0 = DVector::from_element(dim, 0.3);

        let mut p = SeparableQuartic {
            dim,
            weights,
            w_mean,
            noiseless,
            constants: ProblemConstants {
                grad_lipschitz: l1,
                hess_lipschitz: l2,
                noise_scale: g,
                f_gap: 1.0,
            },
            x0,
            box_radius,
        };
        p.constants.f_gap = p.f_gap_from(&p.x0.clone());
        p
    }
}

impl StochasticProblem for SeparableQuartic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn population(&self) -> Population {
        Population::Finite(self.weights.len())
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn is_noiseless(&self) -> bool {
        self.noiseless
    }

    fn certified_region(&self) -> Option<Region> {
        Some(Region::LinfBall(self.box_radius))
    }

    fn default_start(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn f_gap_from(&self, x0: &DVector<f64>) -> f64 {
        // Global minimum: every coordinate at |x| = 1, value -1/4 each.
        let f_star = self.w_mean * self.dim as f64 * (-0.25);
        (self.exact_value(x0) - f_star).max(1e-9)
    }

    fn sample_value(&self, x: &DVector<f64>, id: SampleId) -> f64 {
        let q: f64 = x.iter().map(|&t| t.powi(4) / 4.0 - t * t / 2.0).sum();
        self.weights[id.0 as usize] * q
    }

    fn sample_grad_acc(&self, x: &DVector<f64>, id: SampleId, acc: &mut DVector<f64>) {
        let w = self.weights[id.0 as usize];
        for j in 0..x.len() {
            acc[j] += w * (x[j].powi(3) - x[j]);
        }
    }

    fn sample_hvp_acc(&self, x: &DVector<f64>, id: SampleId, v: &DVector<f64>, acc: &mut DVector<f64>) {
        let w = self.weights[id.0 as usize];
        for j in 0..x.len() {
            acc[j] += w * (3.0 * x[j] * x[j] - 1.0) * v[j];
        }
    }

    fn exact_value(&self, x: &DVector<f64>) -> f64 {
        let q: f64 = x.iter().map(|&t| t.powi(4) / 4.0 - t * t / 2.0).sum();
        self.w_mean * q
    }

    fn exact_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(x.len(), |j, _| self.w_mean * (x[j].powi(3) - x[j]))
    }

    fn exact_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.len(), x.len(), |i, j| {
            if i == j {
                self.w_mean * (3.0 * x[j] * x[j] - 1.0)
            } else {
                0.0
            }
        })
    }
}

// ---------------------------------------------------------------------------
// (c) PCA-style finite sum, also the backing for user matrix files
// ---------------------------------------------------------------------------

/// `f(x; i) = -(a_i' x)^2 / 2 + ||x||^4 / 4`.
///
/// The population objective is `-x'Ax/2 + ||x||^4/4` with
/// `A = mean_i a_i a_i'`; its global minimum is `-lambda_max(A)^2 / 4`,
/// attained along the top eigenvector at radius `sqrt(lambda_max)`.
/// Constants on the ball `||x|| <= R` with `rho = max_i ||a_i||`:
/// per-sample Hessian eigenvalues lie in `[-rho^2, 3R^2]`, so
/// `L1 = max(rho^2, 3R^2)`; `L2 = 6R`; the gradient noise
/// `(A - a_i a_i') x` is bounded by `(lambda_max + rho^2) R = G`.
#[derive(Debug)]
pub struct PcaFiniteSum {
    rows: Vec<DVector<f64>>,
    gram: DMatrix<f64>,
    dim: usize,
    constants: ProblemConstants,
    x0: DVector<f64>,
    region: Region,
    f_star: Option<f64>,
}

impl PcaFiniteSum {
    pub fn new(dim: usize, population: usize, data_seed: u64) -> Self {
        assert!(dim >= 1 && population >= 1);
        let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
        let rows: Vec<DVector<f64>> = (0..population).map(|_| unit_sphere(dim, &mut rng)).collect();
        let ball_radius = 1.5;
        let gram = Self::gram_of(&rows, dim);
        let lambda_max = gram
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |m, &l| m.max(l));
        let rho: f64 = 1.0; // unit rows
        let l1 = (rho * rho).max(3.0 * ball_radius * ball_radius);
        let l2 = 6.0 * ball_radius;
        let g = if population == 1 {
            NOISELESS_G
        } else {
            (lambda_max + rho * rho) * ball_radius
        };
        let f_star = -lambda_max * lambda_max / 4.0;
        let x0 = DVector::from_element(dim, 0.2 / (dim as f64).sqrt());

        let mut p = PcaFiniteSum {
            rows,
            gram,
            dim,
            constants: ProblemConstants {
                grad_lipschitz: l1,
                hess_lipschitz: l2,
                noise_scale: g,
                f_gap: 1.0,
            },
            x0,
            region: Region::L2Ball(ball_radius),
            f_star: Some(f_star),
        };
        p.constants.f_gap = p.f_gap_from(&p.x0.clone());
        p
    }

    /// Problem (d): user-supplied rows with declared constants.
    pub fn from_rows(
        rows: Vec<DVector<f64>>,
        constants: ProblemConstants,
        x0: DVector<f64>,
        region: Region,
    ) -> Self {
        assert!(!rows.is_empty());
        let dim = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == dim));
        assert_eq!(x0.len(), dim);
        let gram = Self::gram_of(&rows, dim);
        PcaFiniteSum {
            rows,
            gram,
            dim,
            constants,
            x0,
            region,
            f_star: None,
        }
    }

    fn gram_of(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
        let mut gram = DMatrix::zeros(dim, dim);
        for a in rows {
            gram += a * a.transpose();
        }
        gram / rows.len() as f64
    }
}

impl StochasticProblem for PcaFiniteSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn population(&self) -> Population {
        Population::Finite(self.rows.len())
    }

    fn constants(&self) -> ProblemConstants {
        self.constants
    }

    fn is_noiseless(&self) -> bool {
        self.rows.len() == 1
    }

    fn certified_region(&self) -> Option<Region> {
        Some(self.region)
    }

    fn default_start(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn f_gap_from(&self, x0: &DVector<f64>) -> f64 {
        match self.f_star {
            Some(f_star) => (self.exact_value(x0) - f_star).max(1e-9),
            // Declared problems keep their declared gap.
            None => self.constants.f_gap,
        }
    }

    fn sample_value(&self, x: &DVector<f64>, id: SampleId) -> f64 {
        let t = self.rows[id.0 as usize].dot(x);
        let n2 = x.norm_squared();
        -t * t / 2.0 + n2 * n2 / 4.0
    }

    fn sample_grad_acc(&self, x: &DVector<f64>, id: SampleId, acc: &mut DVector<f64>) {
        let a = &self.rows[id.0 as usize];
        let t = a.dot(x);
        let n2 = x.norm_squared();
        for j in 0..x.len() {
            acc[j] += -t * a[j] + n2 * x[j];
        }
    }

    fn sample_hvp_acc(&self, x: &DVector<f64>, id: SampleId, v: &DVector<f64>, acc: &mut DVector<f64>) {
        let a = &self.rows[id.0 as usize];
        let s = a.dot(v);
        let n2 = x.norm_squared();
        let xv = x.dot(v);
        for j in 0..x.len() {
            acc[j] += -s * a[j] + n2 * v[j] + 2.0 * xv * x[j];
        }
    }

    fn exact_value(&self, x: &DVector<f64>) -> f64 {
        let n2 = x.norm_squared();
        -0.5 * x.dot(&(&self.gram * x)) + n2 * n2 / 4.0
    }

    fn exact_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let n2 = x.norm_squared();
        -(&self.gram * x) + x * n2
    }

    fn exact_hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n2 = x.norm_squared();
        let mut h = -self.gram.clone();
        for j in 0..self.dim {
            h[(j, j)] += n2;
        }
        h + 2.0 * x * x.transpose()
    }
}

// ---------------------------------------------------------------------------
// (d) Population-matrix file loader
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: cannot parse '{token}' as a number")]
    Parse {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: row has {got} columns, expected {expected}")]
    Shape {
        path: String,
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("matrix file {path} contains no rows")]
    Empty { path: String },
    #[error("sidecar {path}: {detail}")]
    Sidecar { path: String, detail: String },
}

#[derive(Deserialize)]
struct Sidecar {
    #[serde(default = "default_sidecar_version")]
    schema_version: u32,
    grad_lipschitz: f64,
    hess_lipschitz: f64,
    noise_scale: f64,
    f_gap: f64,
    x0: Vec<f64>,
    #[serde(default)]
    ball_radius: Option<f64>,
}

fn default_sidecar_version() -> u32 {
    1
}

/// Loads problem (d): a dense population matrix (CSV, one sample per row)
/// plus a JSON sidecar at `<path>.json` declaring the constants and start
/// point. Rows become the `a_i` of the PCA-style objective.
pub fn load_matrix_problem(path: &Path) -> Result<PcaFiniteSum, MatrixFileError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| MatrixFileError::Io {
        path: display.clone(),
        source,
    })?;

    let mut rows: Vec<DVector<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::new();
        for token in line.split(',') {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| MatrixFileError::Parse {
                path: display.clone(),
                line: lineno + 1,
                token: token.to_string(),
            })?;
            vals.push(v);
        }
        if let Some(first) = rows.first() {
            if vals.len() != first.len() {
                return Err(MatrixFileError::Shape {
                    path: display.clone(),
                    line: lineno + 1,
                    expected: first.len(),
                    got: vals.len(),
                });
            }
        }
        rows.push(DVector::from_vec(vals));
    }
    if rows.is_empty() {
        return Err(MatrixFileError::Empty { path: display });
    }
    let dim = rows[0].len();

    let sidecar_path = format!("{}.json", display);
    let sidecar_text =
        fs::read_to_string(&sidecar_path).map_err(|source| MatrixFileError::Io {
            path: sidecar_path.clone(),
            source,
        })?;
    let sidecar: Sidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| MatrixFileError::Sidecar {
            path: sidecar_path.clone(),
            detail: e.to_string(),
        })?;
    if sidecar.schema_version != 1 {
        return Err(MatrixFileError::Sidecar {
            path: sidecar_path.clone(),
            detail: format!("unsupported schema_version {}", sidecar.schema_version),
        });
    }
    let constants = ProblemConstants {
        grad_lipschitz: sidecar.grad_lipschitz,
        hess_lipschitz: sidecar.hess_lipschitz,
        noise_scale: sidecar.noise_scale,
        f_gap: sidecar.f_gap,
    };
    constants.validate().map_err(|e| MatrixFileError::Sidecar {
        path: sidecar_path.clone(),
        detail: e.to_string(),
    })?;
    if sidecar.x0.len() != dim {
        return Err(MatrixFileError::Sidecar {
            path: sidecar_path,
            detail: format!("x0 has {} entries, matrix has {} columns", sidecar.x0.len(), dim),
        });
    }
    let region = Region::L2Ball(sidecar.ball_radius.unwrap_or(1.5));
    Ok(PcaFiniteSum::from_rows(
        rows,
        constants,
        DVector::from_vec(sidecar.x0),
        region,
    ))
}
