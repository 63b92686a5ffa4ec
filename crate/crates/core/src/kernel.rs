//! Kernel functions and kernel coordinates.
//!
//! A point is represented by its vector of kernel evaluations against a
//! fixed reference set. With a factor `B` (`M_ref x p`) the distance
//! `|B^T (k_x - k_p)|^2` is the kernelized counterpart of the factored
//! Mahalanobis distance; for the linear kernel and references `X` it equals
//! the input-space distance under the factor `X B`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { sigma: f64 },
}

impl Kernel {
    pub fn rbf(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("rbf sigma {sigma} must be positive")));
        }
        Ok(Kernel::Rbf { sigma })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Rbf { .. } => "rbf",
        }
    }

    pub fn sigma(&self) -> Option<f64> {
        match self {
            Kernel::Linear => None,
            Kernel::Rbf { sigma } => Some(*sigma),
        }
    }

    /// `a^T b` or `exp(-|a - b|^2 / (2 sigma^2))`.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { sigma } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-sq / (2.0 * sigma * sigma)).exp()
            }
        }
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Linear => f.write_str("linear"),
            Kernel::Rbf { sigma } => write!(f, "rbf(sigma={sigma})"),
        }
    }
}

/// Parses `linear` or `rbf`; an rbf kernel parsed this way has `sigma = 1`.
impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Kernel::Linear),
            "rbf" | "gaussian" => Ok(Kernel::Rbf { sigma: 1.0 }),
            other => Err(Error::InvalidConfig(format!("unknown kernel {other:?}"))),
        }
    }
}

pub fn kernel_eval(a: &[f64], b: &[f64], kernel: &Kernel) -> f64 {
    kernel.eval(a, b)
}

/// A kernel together with the reference points defining kernel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDescriptor {
    pub kernel: Kernel,
    /// `d x M_ref`, columns are reference points.
    reference_points: DMatrix<f64>,
}

impl KernelDescriptor {
    pub fn new(kernel: Kernel, reference_points: DMatrix<f64>) -> Result<Self> {
        if let Kernel::Rbf { sigma } = kernel {
            Kernel::rbf(sigma)?;
        }
        if reference_points.is_empty() {
            return Err(Error::InvalidConfig("empty reference set".into()));
        }
        if reference_points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite reference point".into()));
        }
        Ok(Self { kernel, reference_points })
    }

    pub fn reference_points(&self) -> &DMatrix<f64> {
        &self.reference_points
    }

    pub fn input_dim(&self) -> usize {
        self.reference_points.nrows()
    }

    pub fn reference_count(&self) -> usize {
        self.reference_points.ncols()
    }

    /// Kernel coordinates of a single point.
    pub fn coordinates_of(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), found: x.len() });
        }
        Ok(self.reference_points.column_iter().map(|r| self.kernel.eval(r.as_slice(), x)).collect())
    }
}

/// `M_ref x N`; column `j` holds the kernel evaluations of point `j`
/// against every reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelCoordinates {
    pub coords: DMatrix<f64>,
}

pub fn to_kernel_coordinates(points: &DMatrix<f64>, kd: &KernelDescriptor) -> Result<KernelCoordinates> {
    if points.nrows() != kd.input_dim() {
        return Err(Error::DimensionMismatch { expected: kd.input_dim(), found: points.nrows() });
    }
    let m_ref = kd.reference_count();
    let columns: Vec<Vec<f64>> = points
        .column_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|p| kd.coordinates_of(p.as_slice()))
        .collect::<Result<_>>()?;
    let coords = DMatrix::from_iterator(m_ref, points.ncols(), columns.into_iter().flatten());
    Ok(KernelCoordinates { coords })
}

/// `|B^T (k_x - k_p)|^2`.
pub fn kernelized_distance(k_x: &[f64], k_p: &[f64], factor_b: &DMatrix<f64>) -> Result<f64> {
    let m = factor_b.nrows();
    if k_x.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: k_x.len() });
    }
    if k_p.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: k_p.len() });
    }
    Ok(factor_b
        .column_iter()
        .map(|b| {
            let s: f64 = b.iter().zip(k_x.iter().zip(k_p)).map(|(w, (a, c))| w * (a - c)).sum();
            s * s
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    #[test]
    fn eval_examples() {
        let rbf = Kernel::rbf(0.7).unwrap();
        assert_eq!(rbf.eval(&[1.0, 2.0], &[1.0, 2.0]), 1.0);
        assert_eq!(Kernel::Linear.eval(&[1.0, 2.0], &[3.0, 4.0]), 11.0);
        // |a - b|^2 = 2 sigma^2
        let s = 0.7f64;
        let b = [1.0 + (2.0 * s * s).sqrt(), 2.0];
        assert!((rbf.eval(&[1.0, 2.0], &b) - (-1f64).exp()).abs() < 1e-15);
        assert!(Kernel::rbf(0.0).is_err());
    }

    #[test]
    fn eval_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
            for k in [Kernel::Linear, Kernel::Rbf { sigma: 0.3 }] {
                assert_eq!(k.eval(&a, &b), k.eval(&b, &a));
            }
        }
    }

    #[test]
    fn coordinates_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        let kd = KernelDescriptor::new(Kernel::Linear, eye.clone()).unwrap();
        assert_eq!(to_kernel_coordinates(&eye, &kd).unwrap().coords, eye);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random(&mut rng, 3, 7);
        let kd = KernelDescriptor::new(Kernel::Rbf { sigma: 1.0 }, random(&mut rng, 3, 1)).unwrap();
        let kc = to_kernel_coordinates(&pts, &kd).unwrap();
        assert_eq!(kc.coords.shape(), (1, 7));
        assert!(kc.coords.iter().all(|&v| v > 0.0 && v <= 1.0));

        let refs = random(&mut rng, 3, 5);
        let kd = KernelDescriptor::new(Kernel::Linear, refs.clone()).unwrap();
        let kc = to_kernel_coordinates(&pts, &kd).unwrap();
        assert!((kc.coords - refs.transpose() * &pts).amax() < 1e-12);
        assert!(matches!(
            to_kernel_coordinates(&random(&mut rng, 2, 2), &kd),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rbf_self_coordinates_have_unit_diagonal_and_psd_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [5, 20, 50] {
            let pts = random(&mut rng, 3, n);
            let kd = KernelDescriptor::new(Kernel::Rbf { sigma: 0.8 }, pts.clone()).unwrap();
            let gram = to_kernel_coordinates(&pts, &kd).unwrap().coords;
            assert!((0..n).all(|i| gram[(i, i)] == 1.0));
            assert!(gram.symmetric_eigenvalues().min() >= -1e-8);
        }
        let pts = random(&mut rng, 3, 10);
        let kd = KernelDescriptor::new(Kernel::Linear, pts.clone()).unwrap();
        let gram = to_kernel_coordinates(&pts, &kd).unwrap().coords;
        assert_eq!(gram, gram.transpose());
        assert!(gram.symmetric_eigenvalues().min() >= -1e-8);
    }

    #[test]
    fn kernelized_distance_examples() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        assert_eq!(kernelized_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &b).unwrap(), 0.0);
        let eye = DMatrix::identity(3, 3);
        assert_eq!(kernelized_distance(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &eye).unwrap(), 9.0);
        assert!(kernelized_distance(&[1.0], &[1.0, 2.0, 3.0], &b).is_err());
    }

    #[test]
    fn linear_kernel_distance_equals_input_space_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (d, m, p) = (4, 9, 2);
            let x = random(&mut rng, d, m);
            let b = random(&mut rng, m, p);
            let point = random(&mut rng, d, 1);
            let proto = random(&mut rng, d, 1);
            let kd = KernelDescriptor::new(Kernel::Linear, x.clone()).unwrap();
            let k_x = kd.coordinates_of(point.as_slice()).unwrap();
            let k_p = kd.coordinates_of(proto.as_slice()).unwrap();
            let kernel = kernelized_distance(&k_x, &k_p, &b).unwrap();
            let w = &x * &b;
            let u = &point - &proto;
            let linear = (w.transpose() * u).norm_squared();
            assert!((kernel - linear).abs() <= 1e-8 * (1.0 + linear), "{kernel} vs {linear}");
        }
    }
}
