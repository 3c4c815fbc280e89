//! Random problem families.
//!
//! * [`EnsembleKind::Gaussian`]: `A = G^{-1}` with `G` iid standard normal.
//! * [`EnsembleKind::SvdHaar`]: `A = R diag(s) Q^T` with `R`, `Q` Haar
//!   orthogonal and a prescribed two-level spectrum `s`.
//!
//! Both use `B = I` and sparse `±1` source and overlap vectors.
//!
//! # Seeding
//!
//! Every problem is generated from a single `ChaCha8Rng` seeded with the
//! spec's 64-bit seed. Studies derive per-replica seeds with [`mix`]:
//! `mix(a, b) = splitmix64(a ^ splitmix64(b + 0x9E3779B97F4A7C15))`, applied
//! as `mix(mix(master, n), replica)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{norm2, qr_orthogonal_factor, Lu, Matrix};
use crate::system::{PhysicalSystem, Selection};

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent substream seed.
pub fn mix(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(GOLDEN)))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed of replica `replica` at size `n` in a study with `master` seed.
pub fn replica_seed(master: u64, n: usize, replica: u64) -> u64 {
    mix(mix(master, n as u64), replica)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnsembleKind {
    Gaussian,
    SvdHaar,
}

/// Default number of nonzeros in `b` and `c`.
pub const DEFAULT_SPARSITY: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub n: usize,
    /// Spectrum exponent; only used by [`EnsembleKind::SvdHaar`].
    pub gamma: f64,
    /// Nonzeros in `b` and `c`.
    pub k: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn gaussian(n: usize, seed: u64) -> Self {
        Self {
            kind: EnsembleKind::Gaussian,
            n,
            gamma: 0.5,
            k: DEFAULT_SPARSITY.min(n),
            seed,
        }
    }

    pub fn svd(n: usize, gamma: f64, seed: u64) -> Self {
        Self {
            kind: EnsembleKind::SvdHaar,
            n,
            gamma,
            k: DEFAULT_SPARSITY.min(n),
            seed,
        }
    }

    /// Same family at another size and seed; `k` is capped at `n`.
    pub fn at(&self, n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            k: self.k.min(n),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("ensemble size n must be >= 1".into()));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::InvalidSparsity {
                n: self.n,
                k: self.k,
            });
        }
        if self.kind == EnsembleKind::SvdHaar && !(self.gamma >= 0.5 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(alloc::format!(
                "svd ensemble needs gamma >= 1/2, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Draws the problem determined by this spec.
    pub fn generate(&self) -> Result<ProblemInstance> {
        let mut rng = stream(self.seed);
        match self.kind {
            EnsembleKind::Gaussian => sample_gaussian_problem(self, &mut rng),
            EnsembleKind::SvdHaar => sample_svd_problem(self, &mut rng),
        }
    }
}

/// Exact action of `A^{-1}` kept alongside a generated problem.
#[derive(Debug, Clone, PartialEq)]
pub enum InverseHandle {
    /// `A^{-1} = G`
    Gaussian { g: Matrix },
    /// `A^{-1} = Q diag(1/s) R^T`
    Svd { r: Matrix, q: Matrix, s: Vec<f64> },
    /// No structure; fall back to a dense factorization of `A`.
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub spec: EnsembleSpec,
    pub system: PhysicalSystem,
    pub c: Vec<f64>,
    pub handle: InverseHandle,
}

/// `k` entries equal to `±1` at uniformly random positions, zeros elsewhere.
pub fn sample_sparse_vector<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<f64>> {
    if k == 0 || k > n {
        return Err(Error::InvalidSparsity { n, k });
    }
    let mut v = vec![0.0; n];
    for i in rand::seq::index::sample(rng, n, k).into_iter() {
        v[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    Ok(v)
}

pub fn sample_gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn sample_gaussian_problem<R: Rng + ?Sized>(
    spec: &EnsembleSpec,
    rng: &mut R,
) -> Result<ProblemInstance> {
    spec.validate()?;
    let n = spec.n;
    let g = sample_gaussian_matrix(n, n, rng);
    let lu = Lu::factor(g.clone());
    let rcond = lu.rcond();
    if rcond <= 1e-12 {
        return Err(Error::SingularDraw { rcond });
    }
    let a = lu.inverse();
    let residual = max_deviation_from_identity(&a.matmul(&g));
    if !(residual <= 1e-8 * n as f64) {
        return Err(Error::SingularDraw { rcond });
    }
    let b = sample_sparse_vector(n, spec.k, rng)?;
    let c = sample_sparse_vector(n, spec.k, rng)?;
    Ok(ProblemInstance {
        spec: *spec,
        system: PhysicalSystem::new(a, Selection::Identity, b)?,
        c,
        handle: InverseHandle::Gaussian { g },
    })
}

pub(crate) fn max_deviation_from_identity(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.rows() {
        for (j, v) in m.row(i).iter().enumerate() {
            let e = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - e).abs());
        }
    }
    worst
}

/// Two-level singular value profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile {
    /// Singular values `s`.
    pub s: Vec<f64>,
    pub gamma: f64,
}

impl SpectrumProfile {
    /// `1/s`
    pub fn inverse(&self) -> Vec<f64> {
        self.s.iter().map(|v| 1.0 / v).collect()
    }
}

/// Builds `1/s` with `ceil(n^(1-gamma))` entries at `n^gamma` and the rest at
/// the level `u` that makes `||1/s||_2 = n`, shuffled with `rng`.
///
/// For `gamma = 1/2` every entry equals `sqrt(n)`. `u` is clamped below at
/// `1/n`; profiles whose norm then leaves `[n/2, 2n]` are rejected.
pub fn make_spectrum<R: Rng + ?Sized>(n: usize, gamma: f64, rng: &mut R) -> Result<SpectrumProfile> {
    if n == 0 {
        return Err(Error::InvalidConfig("spectrum size must be >= 1".into()));
    }
    if !(gamma >= 0.5 && gamma.is_finite()) {
        return Err(Error::InfeasibleSpectrum { n, gamma });
    }
    let nf = n as f64;
    let top = libm::pow(nf, gamma);
    let k = (libm::ceil(libm::pow(nf, 1.0 - gamma)) as usize).clamp(1, n);
    let budget = nf * nf - k as f64 * top * top;
    let rest = if k == n {
        top
    } else {
        let u = libm::sqrt(budget.max(0.0) / (n - k) as f64).max(1.0 / nf);
        // gamma = 1/2 puts u exactly on the top level
        if u >= top * (1.0 - 1e-12) {
            top
        } else {
            u
        }
    };
    let mut inv = vec![rest; n];
    inv[..k].iter_mut().for_each(|v| *v = top);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        inv.swap(i, j);
    }
    let profile = SpectrumProfile {
        s: inv.iter().map(|v| 1.0 / v).collect(),
        gamma,
    };
    let l2 = norm2(&profile.inverse());
    if !(0.5 * nf..=2.0 * nf).contains(&l2) {
        return Err(Error::InfeasibleSpectrum { n, gamma });
    }
    Ok(profile)
}

/// Haar-distributed `d x d` orthogonal matrix.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Matrix {
    loop {
        let q = qr_orthogonal_factor(sample_gaussian_matrix(d, d, rng));
        if q.is_finite() {
            return q;
        }
    }
}

pub fn sample_svd_problem<R: Rng + ?Sized>(
    spec: &EnsembleSpec,
    rng: &mut R,
) -> Result<ProblemInstance> {
    spec.validate()?;
    let n = spec.n;
    let profile = make_spectrum(n, spec.gamma, rng)?;
    let r = sample_haar_orthogonal(n, rng);
    let q = sample_haar_orthogonal(n, rng);
    let mut rs = r.clone();
    rs.scale_cols(&profile.s);
    let a = rs.matmul(&q.transpose());
    let b = sample_sparse_vector(n, spec.k, rng)?;
    let c = sample_sparse_vector(n, spec.k, rng)?;
    Ok(ProblemInstance {
        spec: *spec,
        system: PhysicalSystem::new(a, Selection::Identity, b)?,
        c,
        handle: InverseHandle::Svd {
            r,
            q,
            s: profile.s,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{norm_1, norm_inf};

    #[test]
    fn sparse_vector_norms_are_exact() {
        let mut rng = stream(1);
        for n in [1usize, 5, 40] {
            for k in 1..=n.min(4) {
                let v = sample_sparse_vector(n, k, &mut rng).unwrap();
                assert_eq!(norm_1(&v), k as f64);
                assert_eq!(norm_inf(&v), 1.0);
                assert_eq!(v.iter().filter(|x| **x != 0.0).count(), k);
            }
        }
        assert!(matches!(
            sample_sparse_vector(3, 4, &mut rng),
            Err(Error::InvalidSparsity { .. })
        ));
        assert!(sample_sparse_vector(3, 0, &mut rng).is_err());
    }

    #[test]
    fn sparse_vector_positions_uniform() {
        let mut rng = stream(7);
        let mut hits = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let v = sample_sparse_vector(10, 2, &mut rng).unwrap();
            for (h, x) in hits.iter_mut().zip(&v) {
                if *x != 0.0 {
                    *h += 1;
                }
            }
        }
        for h in hits {
            let f = h as f64 / draws as f64;
            assert!((f - 0.2).abs() < 0.02, "frequency {f}");
        }
    }

    #[test]
    fn spectrum_gamma_half_is_flat() {
        let p = make_spectrum(16, 0.5, &mut stream(0)).unwrap();
        assert!(p.inverse().iter().all(|v| *v == 4.0));
        assert_eq!(norm2(&p.inverse()), 16.0);
    }

    #[test]
    fn spectrum_gamma_three_quarters() {
        let p = make_spectrum(16, 0.75, &mut stream(0)).unwrap();
        let inv = p.inverse();
        let top = inv.iter().filter(|v| (**v - 8.0).abs() < 1e-12).count();
        assert_eq!(top, 2);
        let sq: f64 = inv.iter().map(|v| v * v).sum();
        assert!((sq - 256.0).abs() < 1e-9);
    }

    #[test]
    fn spectrum_invariants_hold() {
        let mut rng = stream(3);
        for n in [1usize, 2, 7, 64, 300] {
            for gamma in [0.5, 0.6, 0.7, 0.74] {
                let p = make_spectrum(n, gamma, &mut rng).unwrap();
                let inv = p.inverse();
                let nf = n as f64;
                assert!(norm_inf(&inv) <= 1.000001 * libm::pow(nf, gamma));
                let l2 = norm2(&inv);
                assert!(l2 >= 0.5 * nf && l2 <= 2.0 * nf, "n={n} gamma={gamma} l2={l2}");
            }
        }
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = stream(11);
        for d in [1usize, 2, 5, 64, 256] {
            let q = sample_haar_orthogonal(d, &mut rng);
            let dev = max_deviation_from_identity(&q.transpose().matmul(&q));
            assert!(dev <= 1e-12, "d={d} dev={dev}");
        }
    }

    #[test]
    fn gaussian_scalar_case() {
        let spec = EnsembleSpec::gaussian(1, 5);
        let inst = spec.generate().unwrap();
        let InverseHandle::Gaussian { g } = &inst.handle else {
            panic!("expected gaussian handle")
        };
        let gv = g.get(0, 0);
        assert!((inst.system.physics().get(0, 0) - 1.0 / gv).abs() < 1e-14);
        let x = inst.system.forward_solve(&[0.0]).unwrap();
        assert!((x[0] - gv * inst.system.source()[0]).abs() < 1e-12);
    }

    #[test]
    fn svd_scalar_case() {
        let inst = EnsembleSpec::svd(1, 0.5, 9).generate().unwrap();
        let InverseHandle::Svd { s, .. } = &inst.handle else {
            panic!("expected svd handle")
        };
        assert_eq!(inst.system.physics().get(0, 0).abs(), s[0]);
    }

    #[test]
    fn generation_is_reproducible() {
        for spec in [EnsembleSpec::gaussian(12, 42), EnsembleSpec::svd(12, 0.6, 42)] {
            assert_eq!(spec.generate().unwrap(), spec.generate().unwrap());
        }
        assert_ne!(
            EnsembleSpec::gaussian(12, 1).generate().unwrap(),
            EnsembleSpec::gaussian(12, 2).generate().unwrap()
        );
    }

    #[test]
    fn substreams_differ() {
        assert_ne!(replica_seed(1, 32, 0), replica_seed(1, 32, 1));
        assert_ne!(replica_seed(1, 32, 0), replica_seed(1, 64, 0));
        assert_eq!(replica_seed(9, 32, 3), replica_seed(9, 32, 3));
    }
}
