//! Symmetric 3x3 eigen-decomposition, principal diffusion direction and
//! fractional anisotropy.

use nalgebra::{Matrix3, Vector3};

use crate::volume::{ScalarVolume, TensorVolume, VolumeHeader};
use crate::{Error, Result};

/// Symmetric 3x3 tensor stored as its six independent components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymTensor {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymTensor {
    pub fn isotropic(lambda: f64) -> Self {
        Self { xx: lambda, xy: 0.0, xz: 0.0, yy: lambda, yz: 0.0, zz: lambda }
    }

    pub fn diagonal(a: f64, b: f64, c: f64) -> Self {
        Self { xx: a, xy: 0.0, xz: 0.0, yy: b, yz: 0.0, zz: c }
    }

    /// Tensor with the given eigenvalues along an orthonormal triad.
    pub fn from_axes(lambdas: [f64; 3], axes: [Vector3<f64>; 3]) -> Self {
        let mut m = Matrix3::zeros();
        for k in 0..3 {
            m += lambdas[k] * axes[k] * axes[k].transpose();
        }
        Self::from_matrix(&m)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self { xx: m[(0, 0)], xy: m[(0, 1)], xz: m[(0, 2)], yy: m[(1, 1)], yz: m[(1, 2)], zz: m[(2, 2)] }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.xx, self.xy, self.xz,
            self.xy, self.yy, self.yz,
            self.xz, self.yz, self.zz,
        )
    }
}

/// Eigenvalues sorted descending with their orthonormal axes.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// λ1 >= λ2 >= λ3.
    pub lambdas: [f64; 3],
    /// axes[k] belongs to lambdas[k]; pairwise orthogonal unit vectors.
    pub axes: [Vector3<f64>; 3],
}

/// Cyclic Jacobi eigensolver for a symmetric 3x3 tensor.
///
/// Sweeps over the (0,1), (0,2), (1,2) pivots until the off-diagonal norm
/// drops below 1e-12 relative to the tensor magnitude (at most 50 sweeps).
/// Chosen over closed-form roots for robustness on near-degenerate tensors.
pub fn eigen_symmetric3(tensor: &SymTensor) -> EigenSystem {
    let mut a = tensor.to_matrix();
    let mut v = Matrix3::<f64>::identity();

    let scale = a.norm();
    let tol = 1e-12 * scale.max(1.0);

    for _sweep in 0..50 {
        let off = (a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2)).sqrt();
        if off <= tol || scale == 0.0 {
            break;
        }
        for &(p, q) in &[(0usize, 1usize), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            // Rotation angle that zeroes a[p][q].
            let theta = 0.5 * (a[(q, q)] - a[(p, p)]) / apq;
            let t = if theta >= 0.0 {
                1.0 / (theta + (1.0 + theta * theta).sqrt())
            } else {
                -1.0 / (-theta + (1.0 + theta * theta).sqrt())
            };
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = t * c;

            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;

            a = rot.transpose() * a * rot;
            // Keep it exactly symmetric against rounding drift.
            a[(q, p)] = a[(p, q)];
            v *= rot;
        }
    }

    let mut pairs = [
        (a[(0, 0)], Vector3::new(v[(0, 0)], v[(1, 0)], v[(2, 0)])),
        (a[(1, 1)], Vector3::new(v[(0, 1)], v[(1, 1)], v[(2, 1)])),
        (a[(2, 2)], Vector3::new(v[(0, 2)], v[(1, 2)], v[(2, 2)])),
    ];
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).expect("finite eigenvalues"));

    EigenSystem {
        lambdas: [pairs[0].0, pairs[1].0, pairs[2].0],
        axes: [pairs[0].1, pairs[1].1, pairs[2].1],
    }
}

/// Fractional anisotropy of an eigenvalue triple.
///
/// FA = sqrt(((λ1-λ2)² + (λ2-λ3)² + (λ1-λ3)²) / (2(λ1²+λ2²+λ3²))),
/// in [0, 1]. The all-zero triple maps to 0 (the formula's 0/0 limit).
/// Small negative eigenvalues (noise, down to -1e-9 of the magnitude) are
/// clamped to zero; strongly negative ones are rejected.
pub fn fractional_anisotropy(lambdas: [f64; 3]) -> Result<f64> {
    let mag = lambdas.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut l = lambdas;
    for li in &mut l {
        if *li < 0.0 {
            if *li >= -1e-9 * mag {
                *li = 0.0;
            } else {
                return Err(Error::InvalidTensor(*li));
            }
        }
    }
    let [l1, l2, l3] = l;
    let denom = 2.0 * (l1 * l1 + l2 * l2 + l3 * l3);
    if denom == 0.0 {
        return Ok(0.0);
    }
    let num = (l1 - l2).powi(2) + (l2 - l3).powi(2) + (l1 - l3).powi(2);
    Ok((num / denom).sqrt().min(1.0))
}

/// Per-voxel FA of a tensor volume; same grid geometry.
pub fn fa_volume(vol: &TensorVolume) -> Result<ScalarVolume> {
    let header = VolumeHeader::scalar(vol.header.dims, vol.header.spacing_mm, vol.header.origin_mm);
    let mut out = ScalarVolume::zeros(header);
    let [nx, ny, nz] = vol.header.dims;
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                let eig = eigen_symmetric3(&vol.tensor_at(ix, iy, iz));
                let fa = fractional_anisotropy(eig.lambdas).map_err(|e| match e {
                    Error::InvalidTensor(l) => Error::InvalidTensorAt(ix, iy, iz, l),
                    other => other,
                })?;
                let idx = out.header.index(ix, iy, iz);
                out.data[idx] = fa as f32;
            }
        }
    }
    Ok(out)
}

/// Unit axis of the largest eigenvalue, or `None` when λ1 ≈ λ2 (no unique
/// principal direction; tracking treats this as a stopping condition).
/// The sign is arbitrary: a diffusion direction is a line, not a vector.
pub fn principal_direction(tensor: &SymTensor) -> Option<Vector3<f64>> {
    let eig = eigen_symmetric3(tensor);
    let mag = eig.lambdas[0].abs().max(eig.lambdas[2].abs());
    if eig.lambdas[0] - eig.lambdas[1] <= 1e-12 * mag.max(1e-300) {
        return None;
    }
    Some(eig.axes[0])
}
