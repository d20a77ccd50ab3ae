//! Grid-oracle checks for parametrisation conversions and conditionals: the
//! phasor algebra is never trusted on its own, every map is compared against
//! dense evaluation of the joint density.

use mgvm::angle::TWO_PI;
use mgvm::dist::{GvmParams, MgvmCanonical, MgvmMinimal, MvmParams};
use mgvm::grid::{kl_divergence, TorusGrid};
use mgvm::sampling::rng_from_seed;
use mgvm::special::gvm_log_norm;
use rand::Rng;

fn random_canonical<R: Rng>(dim: usize, rng: &mut R) -> MgvmCanonical {
    let kappa: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..2.0)).collect();
    let nu: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..TWO_PI)).collect();
    let mut sym = || {
        let mut m = vec![vec![0.0; dim]; dim];
        for d in 0..dim {
            for j in d..dim {
                let x = rng.gen_range(-1.0..1.0);
                m[d][j] = x;
                m[j][d] = x;
            }
        }
        m
    };
    let w_cc = sym();
    let w_ss = sym();
    let w_cs: Vec<Vec<f64>> =
        (0..dim).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    MgvmCanonical::new(kappa, nu, w_cc, w_cs, w_ss).unwrap()
}

fn random_angles<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(0.0..TWO_PI)).collect()
}

/// Minimal-form log-density differs from canonical by a φ-independent
/// constant: variance of the difference over random points is at rounding
/// level.
#[test]
fn canonical_and_minimal_differ_by_a_constant() {
    let mut rng = rng_from_seed(2024);
    for dim in 1..=4 {
        for _ in 0..20 {
            let canonical = random_canonical(dim, &mut rng);
            let minimal = canonical.to_minimal();
            let diffs: Vec<f64> = (0..100)
                .map(|_| {
                    let phi = random_angles(dim, &mut rng);
                    canonical.log_density_unnorm(&phi).unwrap()
                        - minimal.log_density_unnorm(&phi).unwrap()
                })
                .collect();
            let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let var =
                diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / diffs.len() as f64;
            assert!(var < 1e-18, "dim {dim}: variance {var:.3e}");
        }
    }
}

/// D = 1 canonical collapses to a univariate GvM: compare on a 512-grid.
#[test]
fn univariate_canonical_reduces_to_gvm() {
    let mut rng = rng_from_seed(7);
    for _ in 0..25 {
        let canonical = random_canonical(1, &mut rng);
        let minimal = canonical.to_minimal();
        let gvm = GvmParams::new(
            minimal.kappa1()[0],
            minimal.kappa2()[0],
            minimal.nu1()[0],
            minimal.nu2()[0],
        )
        .unwrap();
        let shift = canonical.log_density_unnorm(&[0.0]).unwrap() - gvm.log_density_unnorm(0.0);
        for i in 0..512 {
            let phi = TWO_PI * i as f64 / 512.0;
            let lc = canonical.log_density_unnorm(&[phi]).unwrap();
            let lg = gvm.log_density_unnorm(phi);
            assert!((lc - lg - shift).abs() < 1e-10, "phi={phi}: {}", lc - lg - shift);
        }
    }
}

/// Random D = 2 canonical instances: normalised grid densities of the two
/// parametrisations agree to better than 1e-10 in KL.
#[test]
fn canonical_minimal_grid_density_match() {
    let mut rng = rng_from_seed(99);
    for _ in 0..5 {
        let canonical = random_canonical(2, &mut rng);
        let minimal = canonical.to_minimal();
        let gc = TorusGrid::evaluate(2, 128, |a| canonical.log_density_unnorm(a).unwrap()).unwrap();
        let gm = TorusGrid::evaluate(2, 128, |a| minimal.log_density_unnorm(a).unwrap()).unwrap();
        let kl = kl_divergence(&gc.pmf(), &gm.pmf());
        assert!(kl < 1e-10, "KL {kl:.3e}");
    }
}

/// mvM → mGvM embedding: D = 2 with G₁₂ = 0.8 matches on a 256×256 grid.
#[test]
fn mvm_embedding_matches_on_grid() {
    let mut g = vec![vec![0.0; 2]; 2];
    g[0][1] = 0.8;
    g[1][0] = 0.8;
    let mvm = MvmParams::new(vec![1.2, 0.6], vec![0.4, 2.5], g).unwrap();
    let mgvm = mvm.to_mgvm();
    let ga = TorusGrid::evaluate(2, 256, |a| mvm.log_density_unnorm(a).unwrap()).unwrap();
    let gb = TorusGrid::evaluate(2, 256, |a| mgvm.log_density_unnorm(a).unwrap()).unwrap();
    let kl = kl_divergence(&ga.pmf(), &gb.pmf());
    assert!(kl < 1e-12, "KL {kl:.3e}");
}

/// Exact conditionals: exp(conditional log-pdf) equals the renormalised
/// joint slice along dimension d, for every d of a random D = 3 instance.
#[test]
fn conditional_matches_renormalised_joint_slice() {
    let mut rng = rng_from_seed(31337);
    for _ in 0..6 {
        let target = random_canonical(3, &mut rng).to_minimal();
        let phi = random_angles(3, &mut rng);
        for d in 0..3 {
            let rest: Vec<f64> = (0..3).filter(|&j| j != d).map(|j| phi[j]).collect();
            let cond = target.conditional_gvm(d, &rest).unwrap();
            let log_z = gvm_log_norm(&cond).unwrap();
            let n = 1024;
            // Renormalise the joint slice by trapezoid.
            let slice_log: Vec<f64> = (0..n)
                .map(|i| {
                    let mut point = phi.clone();
                    point[d] = TWO_PI * i as f64 / n as f64;
                    target.log_density_unnorm(&point).unwrap()
                })
                .collect();
            let hi = slice_log.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = slice_log.iter().map(|l| (l - hi).exp()).sum();
            let mut kl = 0.0;
            for (i, l) in slice_log.iter().enumerate() {
                let p = (l - hi).exp() / total;
                let theta = TWO_PI * i as f64 / n as f64;
                // Conditional pmf over the same grid cells.
                let q = (cond.log_density_unnorm(theta) - log_z).exp() * TWO_PI / n as f64;
                if p > 0.0 {
                    kl += p * (p / q).ln();
                }
            }
            assert!(kl.abs() < 1e-10, "dim {d}: KL {kl:.3e}");
        }
    }
}

/// The mvM sparsity pattern keeps κ₂ = 0 in every conditional for every
/// conditioning vector.
#[test]
fn sparsity_precision_has_vm_conditionals() {
    let mut rng = rng_from_seed(555);
    for _ in 0..10 {
        let dim = 3;
        let lam: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.2..2.0)).collect();
        let mut a = vec![vec![0.0; dim]; dim];
        for d in 0..dim {
            for j in (d + 1)..dim {
                let x = rng.gen_range(-1.0..1.0);
                a[d][j] = x;
                a[j][d] = -x;
            }
        }
        let w_cc: Vec<Vec<f64>> = (0..dim)
            .map(|d| (0..dim).map(|j| if d == j { lam[d] } else { 0.0 }).collect())
            .collect();
        let kappa: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..2.0)).collect();
        let nu = random_angles(dim, &mut rng);
        let target = MgvmCanonical::new(kappa, nu, w_cc.clone(), a, w_cc).unwrap().to_minimal();
        for _ in 0..10 {
            let rest = random_angles(dim - 1, &mut rng);
            for d in 0..dim {
                let cond = target.conditional_gvm(d, &rest).unwrap();
                assert!(cond.kappa2().abs() < 1e-14, "kappa2 = {}", cond.kappa2());
            }
        }
    }
}

/// Independence from couplings: an MgvmMinimal built from independent GvM
/// factors scores the sum of factor log-densities.
#[test]
fn independent_target_is_sum_of_factors() {
    let factors = [
        GvmParams::new(1.0, 0.7, 0.3, 0.8).unwrap(),
        GvmParams::new(2.0, 0.0, 4.0, 0.0).unwrap(),
        GvmParams::new(0.0, 1.5, 0.0, 1.1).unwrap(),
    ];
    let m = MgvmMinimal::independent(&factors).unwrap();
    let mut rng = rng_from_seed(1);
    for _ in 0..50 {
        let phi = random_angles(3, &mut rng);
        let joint = m.log_density_unnorm(&phi).unwrap();
        let sum: f64 = factors.iter().zip(&phi).map(|(f, &p)| f.log_density_unnorm(p)).sum();
        assert!((joint - sum).abs() < 1e-12);
    }
}
