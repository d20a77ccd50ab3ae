//! Transductive kernel regression with circular outputs.
//!
//! A kernel Gram matrix `K` over the stacked train+test inputs defines a
//! zero-mean mGvM prior in precision-block form, `W^cc = W^ss = K⁻¹`,
//! `W^cs = 0`, κ = 0 — the bivariate construction uses the same kernel for
//! both circle coordinates and no cross-coordinate covariance, which keeps
//! the prior rotation-equivariant. Observations are von Mises noise around
//! the latent angles, so the joint posterior over train and test angles is
//! again mGvM: each training dimension gains a first-harmonic phasor
//! `κ_noise·e^{iψ_d}`. The mGvM is not closed under marginalisation, so
//! prediction is transductive: test inputs enter the joint up front and
//! per-test marginals are read off the chosen approximate inference.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::angle::{phasor, polar, wrap_2pi};
use crate::dist::{MgvmCanonical, MgvmMinimal, VonMisesParams};
use crate::error::{Error, Result};
use crate::sampling::{gibbs_mgvm, GibbsConfig, SampleChain};
use crate::special::{gvm_log_norm, inv_bessel_ratio_r1, log_bessel_i};
use crate::variational::{mf_fit, Family, MfFit, MfInit, MfOptions, Schedule};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Covariance function kinds. `Sum` and `Product` compose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelKind {
    /// `σ² exp(-½ Σ_q (Δ_q/ℓ_q)²)`; a single lengthscale is broadcast.
    SquaredExponential { lengthscales: Vec<f64>, variance: f64 },
    /// `σ² exp(-2 Σ_q sin²(π Δ_q / p) / ℓ²)`.
    Periodic { lengthscale: f64, period: f64, variance: f64 },
    /// `σ² (x·y + offset)`.
    Linear { variance: f64, offset: f64 },
    Sum { terms: Vec<KernelKind> },
    Product { terms: Vec<KernelKind> },
}

impl KernelKind {
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelKind::SquaredExponential { lengthscales, variance } => {
                let mut acc = 0.0;
                for q in 0..x.len() {
                    let l = if lengthscales.len() == 1 { lengthscales[0] } else { lengthscales[q] };
                    let d = (x[q] - y[q]) / l;
                    acc += d * d;
                }
                variance * (-0.5 * acc).exp()
            }
            KernelKind::Periodic { lengthscale, period, variance } => {
                let mut acc = 0.0;
                for q in 0..x.len() {
                    let s = (std::f64::consts::PI * (x[q] - y[q]) / period).sin();
                    acc += s * s;
                }
                variance * (-2.0 * acc / (lengthscale * lengthscale)).exp()
            }
            KernelKind::Linear { variance, offset } => {
                variance * (x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() + offset)
            }
            KernelKind::Sum { terms } => terms.iter().map(|t| t.eval(x, y)).sum(),
            KernelKind::Product { terms } => terms.iter().map(|t| t.eval(x, y)).product(),
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        match self {
            KernelKind::SquaredExponential { lengthscales, variance } => {
                if lengthscales.is_empty()
                    || (lengthscales.len() != 1 && lengthscales.len() != input_dim)
                {
                    return Err(Error::invalid(format!(
                        "lengthscales must have 1 or {input_dim} entries"
                    )));
                }
                if lengthscales.iter().any(|&l| !(l > 0.0)) || !(*variance >= 0.0) {
                    return Err(Error::invalid("SE kernel needs positive lengthscales, variance >= 0"));
                }
            }
            KernelKind::Periodic { lengthscale, period, variance } => {
                if !(*lengthscale > 0.0) || !(*period > 0.0) || !(*variance >= 0.0) {
                    return Err(Error::invalid("periodic kernel needs positive hyperparameters"));
                }
            }
            KernelKind::Linear { variance, offset } => {
                if !(*variance >= 0.0) || !offset.is_finite() {
                    return Err(Error::invalid("linear kernel needs variance >= 0, finite offset"));
                }
            }
            KernelKind::Sum { terms } | KernelKind::Product { terms } => {
                if terms.is_empty() {
                    return Err(Error::invalid("kernel composition needs at least one term"));
                }
                for t in terms {
                    t.validate(input_dim)?;
                }
            }
        }
        Ok(())
    }
}

/// A kernel plus its jitter policy. `jitter = None` starts the escalation at
/// `1e-10·trace/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(flatten)]
    pub kind: KernelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<f64>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind) -> Self {
        Self { kind, jitter: None }
    }

    /// Gram matrix over `inputs` (rows).
    pub fn gram(&self, inputs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = inputs.len();
        DMatrix::from_fn(n, n, |i, j| self.kind.eval(&inputs[i], &inputs[j]))
    }
}

/// Invert a Gram matrix by Cholesky with jitter escalation: start at
/// `jitter₀` (default `1e-10·trace/n`), multiply by 10 up to `1e-4·trace/n`.
fn invert_gram(k: &DMatrix<f64>, jitter0: Option<f64>) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let scale = (k.trace() / n as f64).max(f64::MIN_POSITIVE);
    let mut jitter = jitter0.unwrap_or(1e-10 * scale);
    let cap = 1e-4 * scale;
    loop {
        let mut kj = k.clone();
        for d in 0..n {
            kj[(d, d)] += jitter;
        }
        if let Some(chol) = kj.clone().cholesky() {
            return Ok(chol.inverse());
        }
        jitter *= 10.0;
        if jitter > cap {
            let eig = k.clone().symmetric_eigen().eigenvalues;
            let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            let cond = if min.abs() > 0.0 { (max / min).abs() } else { f64::INFINITY };
            return Err(Error::NotPositiveDefinite { cond });
        }
    }
}

/// Zero-mean mGvM prior over the angles at `inputs_all`:
/// `W^cc = W^ss = K⁻¹`, `W^cs = 0`, κ = 0.
pub fn build_prior(inputs_all: &[Vec<f64>], kernel: &KernelSpec) -> Result<MgvmCanonical> {
    if inputs_all.is_empty() {
        return Err(Error::invalid("prior needs at least one input"));
    }
    let q = inputs_all[0].len();
    if inputs_all.iter().any(|r| r.len() != q) {
        return Err(Error::invalid("inputs must share a dimension"));
    }
    if inputs_all.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("inputs must be finite"));
    }
    kernel.kind.validate(q)?;
    let gram = kernel.gram(inputs_all);
    let w = invert_gram(&gram, kernel.jitter)?;
    let n = inputs_all.len();
    let to_rows = |m: &DMatrix<f64>| (0..n).map(|i| m.row(i).iter().cloned().collect()).collect();
    MgvmCanonical::new(
        vec![0.0; n],
        vec![0.0; n],
        to_rows(&w),
        vec![vec![0.0; n]; n],
        to_rows(&w),
    )
}

// ---------------------------------------------------------------------------
// Task and posterior
// ---------------------------------------------------------------------------

/// A transductive circular regression task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircRegressionTask {
    pub train_inputs: Vec<Vec<f64>>,
    /// Observed angles ψ (radians, reduced to [0, 2π) on construction).
    pub train_angles: Vec<f64>,
    pub test_inputs: Vec<Vec<f64>>,
    /// von Mises observation concentration.
    pub noise_kappa: f64,
    pub kernel: KernelSpec,
}

impl CircRegressionTask {
    pub fn new(
        train_inputs: Vec<Vec<f64>>,
        train_angles: Vec<f64>,
        test_inputs: Vec<Vec<f64>>,
        noise_kappa: f64,
        kernel: KernelSpec,
    ) -> Result<Self> {
        if train_inputs.is_empty() {
            return Err(Error::invalid("need at least one training point"));
        }
        if train_angles.len() != train_inputs.len() {
            return Err(Error::DimensionMismatch {
                expected: train_inputs.len(),
                got: train_angles.len(),
            });
        }
        if !(noise_kappa >= 0.0) || !noise_kappa.is_finite() {
            return Err(Error::invalid("noise_kappa must be finite and >= 0"));
        }
        if train_angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("training angles must be finite"));
        }
        Ok(Self {
            train_angles: train_angles.into_iter().map(wrap_2pi).collect(),
            train_inputs,
            test_inputs,
            noise_kappa,
            kernel,
        })
    }

    pub fn n_train(&self) -> usize {
        self.train_inputs.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_inputs.len()
    }

    fn stacked_inputs(&self) -> Vec<Vec<f64>> {
        self.train_inputs.iter().chain(self.test_inputs.iter()).cloned().collect()
    }
}

/// Joint mGvM posterior over train+test angles (training dimensions first).
///
/// Conjugacy: the prior cross terms are untouched; each training dimension d
/// gains the observation phasor `noise_kappa·e^{iψ_d}` on its first harmonic.
pub fn posterior(task: &CircRegressionTask) -> Result<MgvmMinimal> {
    let prior = build_prior(&task.stacked_inputs(), &task.kernel)?;
    let minimal = prior.to_minimal();
    add_observation_phasors(&minimal, &task.train_angles, task.noise_kappa)
}

/// Phasor-add vM observations at `angles` to the first harmonics of the
/// leading dimensions.
pub fn add_observation_phasors(
    prior: &MgvmMinimal,
    angles: &[f64],
    noise_kappa: f64,
) -> Result<MgvmMinimal> {
    if angles.len() > prior.dim() {
        return Err(Error::DimensionMismatch { expected: prior.dim(), got: angles.len() });
    }
    let mut kappa1 = prior.kappa1().to_vec();
    let mut nu1 = prior.nu1().to_vec();
    for (d, &psi) in angles.iter().enumerate() {
        let z = phasor(kappa1[d], nu1[d]) + phasor(noise_kappa, psi);
        let (k, n) = polar(z);
        kappa1[d] = k;
        nu1[d] = n;
    }
    MgvmMinimal::new(
        kappa1,
        nu1,
        prior.kappa2().to_vec(),
        prior.nu2().to_vec(),
        prior.u().to_vec(),
        prior.alpha().to_vec(),
        prior.v().to_vec(),
        prior.beta().to_vec(),
    )
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

/// Inference backend for [`predict`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Inference {
    ViGvm,
    ViVm,
    Gibbs,
}

/// Prediction options; `seed` drives both the Gibbs chain and the VI
/// initialisation pre-run.
#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub inference: Inference,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
    pub gibbs_samples: usize,
    /// Override the VI initialisation (used by equivariance tests).
    pub init: Option<MfInit>,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            inference: Inference::ViGvm,
            seed: 0,
            tol: 1e-8,
            max_iters: 10_000,
            gibbs_samples: 4000,
            init: None,
        }
    }
}

/// Per-test-point predictive summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointPrediction {
    pub mean_angle: f64,
    /// Circular concentration `|⟨e^{iφ}⟩| ∈ [0, 1]`.
    pub resultant: f64,
}

enum PredictiveDensity {
    /// VI: per-test-dimension factor with cached log-normaliser.
    Factors(Vec<(crate::dist::GvmParams, f64)>),
    /// Gibbs: Rao-Blackwell mixture of exact conditionals, one per kept
    /// (sub-sampled) chain state, with cached log-normalisers.
    Mixture(Vec<Vec<(crate::dist::GvmParams, f64)>>),
}

/// Joint posterior plus per-test-point predictive marginals and a normalised
/// predictive log-density evaluator for held-out angles.
pub struct CircPrediction {
    pub joint: MgvmMinimal,
    pub points: Vec<PointPrediction>,
    /// False when the chosen inference hit its iteration cap.
    pub converged: bool,
    pub inference: Inference,
    density: PredictiveDensity,
}

impl CircPrediction {
    /// Normalised predictive log-density of `angle` at test point `m`.
    pub fn predictive_log_density(&self, m: usize, angle: f64) -> Result<f64> {
        match &self.density {
            PredictiveDensity::Factors(fs) => {
                let (f, log_z) = fs
                    .get(m)
                    .ok_or(Error::IndexOutOfRange { index: m, dim: fs.len() })?;
                Ok(f.log_density_unnorm(angle) - log_z)
            }
            PredictiveDensity::Mixture(per_dim) => {
                let conds = per_dim
                    .get(m)
                    .ok_or(Error::IndexOutOfRange { index: m, dim: per_dim.len() })?;
                let logs: Vec<f64> =
                    conds.iter().map(|(c, lz)| c.log_density_unnorm(angle) - lz).collect();
                Ok(crate::angle::log_sum_exp(&logs) - (logs.len() as f64).ln())
            }
        }
    }

    /// Mean held-out predictive log-likelihood (nats/point).
    pub fn mean_predictive_log_likelihood(&self, held_out: &[f64]) -> Result<f64> {
        if held_out.len() != self.points.len() {
            return Err(Error::DimensionMismatch {
                expected: self.points.len(),
                got: held_out.len(),
            });
        }
        let mut acc = 0.0;
        for (m, &psi) in held_out.iter().enumerate() {
            acc += self.predictive_log_density(m, psi)?;
        }
        Ok(acc / held_out.len().max(1) as f64)
    }
}

/// Run the chosen inference on the joint posterior and extract per-test
/// predictive marginals.
pub fn predict(task: &CircRegressionTask, opts: &PredictOptions) -> Result<CircPrediction> {
    let joint = posterior(task)?;
    let n = task.n_train();
    let m = task.n_test();
    match opts.inference {
        Inference::ViGvm | Inference::ViVm => {
            let family =
                if opts.inference == Inference::ViGvm { Family::GvmField } else { Family::VmField };
            // Uniform factors are the right default here: regression
            // posteriors have κ₂ = 0 (no bimodality to break), the zero
            // resultants let the observation phasors place the factor means
            // before the kernel couplings lock in (near-duplicate inputs
            // create couplings ~1/jitter that would otherwise freeze a
            // chain-derived init), and prediction becomes exactly rotation
            // equivariant.
            let mf_opts = MfOptions {
                tol: opts.tol,
                max_iters: opts.max_iters,
                init: opts
                    .init
                    .clone()
                    .unwrap_or(MfInit::State(crate::variational::MeanFieldState::uniform(
                        family,
                        joint.dim(),
                    ))),
            };
            let fit: MfFit = mf_fit(&joint, family, Schedule::CoordinateAscent, &mf_opts)?;
            let mut points = Vec::with_capacity(m);
            let mut factors = Vec::with_capacity(m);
            for t in 0..m {
                let d = n + t;
                let mom = fit.state.moments(d);
                points.push(PointPrediction {
                    mean_angle: mom.mean_direction(),
                    resultant: mom.resultant1(),
                });
                factors.push((*fit.state.factor(d), fit.state.log_norm(d)));
            }
            Ok(CircPrediction {
                joint,
                points,
                converged: fit.converged,
                inference: opts.inference,
                density: PredictiveDensity::Factors(factors),
            })
        }
        Inference::Gibbs => {
            let cfg = GibbsConfig::new(opts.gibbs_samples, joint.dim(), opts.seed);
            let chain: SampleChain = gibbs_mgvm(&joint, &cfg)?;
            let mut points = Vec::with_capacity(m);
            let mut mixture = Vec::with_capacity(m);
            // Sub-sample the chain for the Rao-Blackwell mixture.
            let stride = (chain.samples.len() / 512).max(1);
            for t in 0..m {
                let d = n + t;
                let (r, a) = polar(chain.mean_resultant(d));
                points.push(PointPrediction { mean_angle: a, resultant: r });
                let mut conds = Vec::new();
                for s in chain.samples.iter().step_by(stride) {
                    let c = joint.conditional_gvm_full(d, s)?;
                    let lz = gvm_log_norm(&c)?;
                    conds.push((c, lz));
                }
                mixture.push(conds);
            }
            Ok(CircPrediction {
                joint,
                points,
                converged: true,
                inference: Inference::Gibbs,
                density: PredictiveDensity::Mixture(mixture),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Independent von Mises baseline
// ---------------------------------------------------------------------------

/// Input-blind baseline: a single von Mises fitted to the training angles by
/// maximum likelihood (mean direction + Bessel-ratio inversion of the
/// resultant length).
pub fn vm_baseline_mle(angles: &[f64]) -> Result<VonMisesParams> {
    if angles.is_empty() {
        return Err(Error::invalid("baseline needs at least one angle"));
    }
    let z: num_complex::Complex64 = angles
        .iter()
        .map(|&a| num_complex::Complex64::from_polar(1.0, a))
        .sum::<num_complex::Complex64>()
        / angles.len() as f64;
    let (r, mu) = polar(z);
    VonMisesParams::new(mu, inv_bessel_ratio_r1(r))
}

/// Normalised von Mises log-density.
pub fn vm_log_pdf(p: &VonMisesParams, angle: f64) -> Result<f64> {
    Ok(p.kappa() * (angle - p.mu()).cos() - crate::angle::TWO_PI.ln() - log_bessel_i(0, p.kappa())?)
}
