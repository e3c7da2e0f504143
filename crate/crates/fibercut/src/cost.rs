//! Evaluation-point lattice around the centerline, discrete 3D filter masks,
//! bundle-mean FA estimation and the per-node cost field.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::tracking::Centerline;
use crate::volume::{trilinear_sample, ScalarVolume};
use crate::{Error, Result};

/// Size of the sampling lattice: `planes` cross-sections along the
/// centerline, `rays` per plane, `samples` per ray spaced `delta_mm` apart.
/// The first sample sits at radius `delta_mm`, not on the centerline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LatticeParams {
    pub planes: usize,
    pub rays: usize,
    pub samples: usize,
    pub delta_mm: f64,
}

impl LatticeParams {
    pub fn validate(&self) -> Result<()> {
        if self.planes < 2 {
            return Err(Error::InvalidParams("need at least 2 planes".into()));
        }
        if self.rays < 3 {
            return Err(Error::InvalidParams("need at least 3 rays per plane".into()));
        }
        if self.samples < 2 {
            return Err(Error::InvalidParams("need at least 2 samples per ray".into()));
        }
        if !(self.delta_mm > 0.0) {
            return Err(Error::InvalidParams("delta_mm must be positive".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.planes * self.rays * self.samples
    }

    /// Flat index of lattice node (plane, ray, sample).
    #[inline]
    pub fn index(&self, p: usize, r: usize, i: usize) -> usize {
        (p * self.rays + r) * self.samples + i
    }
}

/// Discrete cubic filter mask with its zero point at the cube center.
#[derive(Debug, Clone)]
pub struct Mask3D {
    pub size: usize,
    /// size^3 non-negative weights summing to 1; x fastest.
    pub weights: Vec<f64>,
}

impl Mask3D {
    pub fn half(&self) -> isize {
        (self.size / 2) as isize
    }

    /// Weight at offsets in [-size/2, size/2].
    #[inline]
    pub fn at(&self, dx: isize, dy: isize, dz: isize) -> f64 {
        let h = self.half();
        let s = self.size as isize;
        let idx = ((dz + h) * s + (dy + h)) * s + (dx + h);
        self.weights[idx as usize]
    }
}

/// Which filter family a mask belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Mean,
    Gauss,
}

pub fn make_mask(kind: MaskKind, size: usize) -> Result<Mask3D> {
    match kind {
        MaskKind::Mean => make_mean_mask(size),
        MaskKind::Gauss => make_gauss_mask(size),
    }
}

fn check_size(size: usize) -> Result<()> {
    if size % 2 == 0 || size == 0 || size > 9 {
        return Err(Error::InvalidParams(format!("mask size {size} must be odd and in 1..=9")));
    }
    Ok(())
}

/// Uniform averaging mask: every weight is 1/size^3.
pub fn make_mean_mask(size: usize) -> Result<Mask3D> {
    check_size(size)?;
    let n = size * size * size;
    Ok(Mask3D { size, weights: vec![1.0 / n as f64; n] })
}

/// Discrete Gaussian mask as the outer product of three binomial rows
/// (C(size-1, k) / 2^(size-1)); for size 5 the 2D marginal is the familiar
/// (1,4,6,4,1) x (1,4,6,4,1) / 256 stencil.
pub fn make_gauss_mask(size: usize) -> Result<Mask3D> {
    check_size(size)?;
    let n = size - 1;
    let mut row = Vec::with_capacity(size);
    let mut binom = 1.0f64;
    let denom = (1u64 << n) as f64;
    for k in 0..size {
        row.push(binom / denom);
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    let mut weights = Vec::with_capacity(size * size * size);
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                weights.push(row[x] * row[y] * row[z]);
            }
        }
    }
    Ok(Mask3D { size, weights })
}

/// Mask-weighted FA mean at the voxel nearest to one point;
/// mask taps outside the grid clamp to the nearest edge voxel.
fn mask_mean_at(fa: &ScalarVolume, point: &Vector3<f64>, mask: &Mask3D) -> f64 {
    let [cx, cy, cz] = fa.header.nearest_voxel(point);
    let [nx, ny, nz] = fa.header.dims;
    let h = mask.half();
    let mut acc = 0.0;
    for dz in -h..=h {
        let iz = (cz as isize + dz).clamp(0, nz as isize - 1) as usize;
        for dy in -h..=h {
            let iy = (cy as isize + dy).clamp(0, ny as isize - 1) as usize;
            for dx in -h..=h {
                let ix = (cx as isize + dx).clamp(0, nx as isize - 1) as usize;
                acc += fa.at(ix, iy, iz) as f64 * mask.at(dx, dy, dz);
            }
        }
    }
    acc
}

/// Bundle-mean FA along the centerline: the mask is applied at the voxel
/// nearest to each centerline point and the per-point means are averaged
/// with equal weight.
pub fn estimate_mean_fa(fa: &ScalarVolume, centerline: &Centerline, mask: &Mask3D) -> f64 {
    let mut acc = 0.0;
    for p in &centerline.points {
        acc += mask_mean_at(fa, p, mask);
    }
    acc / centerline.points.len() as f64
}

/// Per-node cost from a sampled FA value and the bundle-mean FA.
///
/// Zero deep inside the bundle (FA near `fa_mean`) and far outside (FA near
/// 0), maximal where the sampled FA crosses half the bundle mean — i.e. on
/// the bundle wall. The cut selects the surface of maximal summed cost, so
/// this ridge pins it to the FA transition.
#[inline]
pub fn boundary_cost(fa_value: f64, fa_mean: f64) -> f64 {
    fa_value.min(fa_mean - fa_value).max(0.0)
}

/// The sampled evaluation points with their per-node costs.
#[derive(Debug, Clone)]
pub struct CostField {
    pub params: LatticeParams,
    /// Lattice point positions in mm, indexed by `params.index`.
    pub points: Vec<Vector3<f64>>,
    /// Non-negative per-node costs, same indexing.
    pub costs: Vec<f64>,
    pub fa_mean: f64,
}

impl CostField {
    #[inline]
    pub fn point(&self, p: usize, r: usize, i: usize) -> Vector3<f64> {
        self.points[self.params.index(p, r, i)]
    }

    #[inline]
    pub fn cost(&self, p: usize, r: usize, i: usize) -> f64 {
        self.costs[self.params.index(p, r, i)]
    }
}

/// Evaluation-point positions for a centerline and lattice size.
///
/// Point (p, r, i) lies in the plane orthogonal to the centerline at point p,
/// at radius (i+1)*delta_mm, at angle 2*pi*r/rays in the (normal1, normal2)
/// frame.
pub fn lattice_points(
    centerline: &Centerline,
    params: &LatticeParams,
) -> Result<Vec<Vector3<f64>>> {
    params.validate()?;
    if centerline.len() != params.planes {
        return Err(Error::InvalidParams(format!(
            "centerline has {} points but the lattice wants {} planes",
            centerline.len(),
            params.planes
        )));
    }
    let mut points = Vec::with_capacity(params.node_count());
    for p in 0..params.planes {
        let center = centerline.points[p];
        let frame = centerline.frames[p];
        for r in 0..params.rays {
            let theta = 2.0 * std::f64::consts::PI * r as f64 / params.rays as f64;
            let dir = theta.cos() * frame.normal1 + theta.sin() * frame.normal2;
            for i in 0..params.samples {
                points.push(center + (i + 1) as f64 * params.delta_mm * dir);
            }
        }
    }
    Ok(points)
}

/// Sample FA over the lattice and attach costs.
pub fn sample_lattice(
    fa: &ScalarVolume,
    centerline: &Centerline,
    params: &LatticeParams,
    fa_mean: f64,
) -> Result<CostField> {
    if !(0.0..=1.0).contains(&fa_mean) {
        return Err(Error::InvalidParams(format!("fa_mean {fa_mean} outside [0,1]")));
    }
    let points = lattice_points(centerline, params)?;
    let costs: Vec<f64> =
        points.iter().map(|x| boundary_cost(trilinear_sample(fa, x), fa_mean)).collect();
    Ok(CostField { params: *params, points, costs, fa_mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeHeader;

    const ALL_SIZES: [usize; 5] = [1, 3, 5, 7, 9];

    #[test]
    fn mean_mask_weights() {
        let m1 = make_mean_mask(1).unwrap();
        assert_eq!(m1.weights, vec![1.0]);
        let m5 = make_mean_mask(5).unwrap();
        assert_eq!(m5.weights.len(), 125);
        assert!(m5.weights.iter().all(|&w| w == 1.0 / 125.0));
        let m3 = make_mean_mask(3).unwrap();
        assert_eq!(m3.weights.len(), 27);
        assert!(m3.weights.iter().all(|&w| w == 1.0 / 27.0));
    }

    #[test]
    fn invalid_mask_sizes_rejected() {
        for bad in [0usize, 2, 4, 6, 8, 11] {
            assert!(make_mean_mask(bad).is_err());
            assert!(make_gauss_mask(bad).is_err());
        }
    }

    #[test]
    fn gauss_mask_marginal_matches_binomial_stencil() {
        let m = make_gauss_mask(5).unwrap();
        // 2D marginal: sum over one axis leaves the (1,4,6,4,1)^2/256 stencil.
        let stencil = [1.0, 4.0, 6.0, 4.0, 1.0];
        for y in 0..5usize {
            for x in 0..5usize {
                let mut acc = 0.0;
                for z in 0..5usize {
                    acc += m.weights[(z * 5 + y) * 5 + x];
                }
                let expect = stencil[x] * stencil[y] / 256.0;
                assert_eq!(acc, expect, "marginal at ({x},{y})");
            }
        }
        // Exact rational corners of the marginal.
        let mut corner = 0.0;
        for z in 0..5usize {
            corner += m.weights[(z * 5) * 5];
        }
        assert_eq!(corner, 1.0 / 256.0);
        // 3D corner weight is (1/16)^3.
        assert_eq!(m.weights[0], 1.0 / 4096.0);
        assert_eq!(make_gauss_mask(1).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn masks_sum_to_one_and_gauss_is_reflection_symmetric() {
        for size in ALL_SIZES {
            for kind in [MaskKind::Mean, MaskKind::Gauss] {
                let m = make_mask(kind, size).unwrap();
                let sum: f64 = m.weights.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "{kind:?} {size}: sum {sum}");
                assert!(m.weights.iter().all(|&w| w >= 0.0));
            }
            let g = make_gauss_mask(size).unwrap();
            let h = g.half();
            for dz in -h..=h {
                for dy in -h..=h {
                    for dx in -h..=h {
                        let w = g.at(dx, dy, dz);
                        assert_eq!(w, g.at(-dx, dy, dz));
                        assert_eq!(w, g.at(dx, -dy, dz));
                        assert_eq!(w, g.at(dx, dy, -dz));
                    }
                }
            }
        }
    }

    fn straight_centerline(n: usize, span: f64) -> Centerline {
        let pts =
            (0..n).map(|k| Vector3::new(0.0, 0.0, span * k as f64 / (n - 1) as f64)).collect();
        Centerline::from_points(pts).unwrap()
    }

    #[test]
    fn constant_volume_returns_the_constant_for_all_masks() {
        let header = VolumeHeader::scalar([20, 20, 20], [1.0; 3], [-9.5, -9.5, 0.0]);
        let fa = ScalarVolume { header, data: vec![0.7; 8000] };
        let cl = straight_centerline(8, 15.0);
        for size in ALL_SIZES {
            for kind in [MaskKind::Mean, MaskKind::Gauss] {
                let m = make_mask(kind, size).unwrap();
                let est = estimate_mean_fa(&fa, &cl, &m);
                assert!((est - 0.7f32 as f64).abs() < 1e-6, "{kind:?} {size}: {est}");
            }
        }
    }

    #[test]
    fn size_one_mask_is_the_plain_nearest_voxel_average() {
        let header = VolumeHeader::scalar([10, 10, 30], [1.0; 3], [-4.5, -4.5, 0.0]);
        let mut fa = ScalarVolume::zeros(header);
        for (k, v) in fa.data.iter_mut().enumerate() {
            *v = (k % 97) as f32 / 97.0;
        }
        let cl = straight_centerline(12, 25.0);
        let mean_m = estimate_mean_fa(&fa, &cl, &make_mean_mask(1).unwrap());
        let gauss_m = estimate_mean_fa(&fa, &cl, &make_gauss_mask(1).unwrap());
        assert_eq!(mean_m, gauss_m);

        let mut manual = 0.0;
        for p in &cl.points {
            let [ix, iy, iz] = fa.header.nearest_voxel(p);
            manual += fa.at(ix, iy, iz) as f64;
        }
        manual /= cl.points.len() as f64;
        assert!((mean_m - manual).abs() < 1e-12);
    }

    /// FA tube of radius 5 around the z axis on a 1 mm grid.
    fn tube_fa(inner: f32) -> ScalarVolume {
        let header = VolumeHeader::scalar([30, 30, 30], [1.0; 3], [-14.5, -14.5, 0.0]);
        let mut fa = ScalarVolume::zeros(header);
        for iz in 0..30 {
            for iy in 0..30 {
                for ix in 0..30 {
                    let c = fa.header.voxel_center(ix, iy, iz);
                    let r = (c.x * c.x + c.y * c.y).sqrt();
                    let idx = fa.header.index(ix, iy, iz);
                    fa.data[idx] = if r < 5.0 { inner } else { 0.0 };
                }
            }
        }
        fa
    }

    #[test]
    fn tube_interior_mean_fa_within_tolerance() {
        let fa = tube_fa(0.8);
        let cl = straight_centerline(10, 25.0);
        let est = estimate_mean_fa(&fa, &cl, &make_mean_mask(3).unwrap());
        assert!((est - 0.8).abs() < 0.05, "estimate {est}");
    }

    #[test]
    fn lattice_geometry_straight_centerline() {
        let cl = straight_centerline(5, 8.0);
        let params = LatticeParams { planes: 5, rays: 8, samples: 6, delta_mm: 0.5 };
        let pts = lattice_points(&cl, &params).unwrap();
        assert_eq!(pts.len(), params.node_count());

        // Ray 0, sample 0 offsets by delta along normal1 (here +x: the +z
        // seeding falls back to +x for a z-aligned tangent).
        let p0 = pts[params.index(2, 0, 0)];
        let center = cl.points[2];
        assert!((p0 - (center + Vector3::new(0.5, 0.0, 0.0))).norm() < 1e-9);

        // Fixed (p, i): points lie on a circle of radius (i+1)*delta in the
        // plane orthogonal to the tangent.
        for p in 0..params.planes {
            let center = cl.points[p];
            let tangent = cl.frames[p].tangent;
            for i in 0..params.samples {
                let radius = (i + 1) as f64 * params.delta_mm;
                for r in 0..params.rays {
                    let x = pts[params.index(p, r, i)];
                    assert!(((x - center).norm() - radius).abs() < 1e-9);
                    assert!((x - center).dot(&tangent).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn lattice_wants_matching_centerline_length() {
        let cl = straight_centerline(5, 8.0);
        let params = LatticeParams { planes: 6, rays: 8, samples: 6, delta_mm: 0.5 };
        assert!(matches!(lattice_points(&cl, &params), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn cost_is_zero_where_fa_matches_the_mean_or_background() {
        assert_eq!(boundary_cost(0.8, 0.8), 0.0);
        assert_eq!(boundary_cost(0.0, 0.8), 0.0);
        assert_eq!(boundary_cost(0.9, 0.8), 0.0);
        // Peak value fa_mean/2 at the halfway crossing.
        assert!((boundary_cost(0.4, 0.8) - 0.4).abs() < 1e-15);
        assert!(boundary_cost(0.3, 0.8) > 0.0);
    }

    #[test]
    fn uniform_fa_field_gives_all_zero_costs() {
        let header = VolumeHeader::scalar([20, 20, 20], [1.0; 3], [-9.5, -9.5, 0.0]);
        let fa = ScalarVolume { header, data: vec![0.75; 8000] };
        let cl = straight_centerline(6, 15.0);
        let params = LatticeParams { planes: 6, rays: 8, samples: 10, delta_mm: 0.5 };
        let cf = sample_lattice(&fa, &cl, &params, 0.75f32 as f64).unwrap();
        assert!(cf.costs.iter().all(|&c| c.abs() < 1e-6));
    }

    #[test]
    fn tube_costs_peak_at_the_wall() {
        let fa = tube_fa(0.8);
        let cl = straight_centerline(10, 25.0);
        let params = LatticeParams { planes: 10, rays: 12, samples: 20, delta_mm: 0.5 };
        let cf = sample_lattice(&fa, &cl, &params, 0.8).unwrap();
        assert!(cf.costs.iter().all(|&c| c >= 0.0));
        for p in 2..8 {
            for r in 0..params.rays {
                let best = (0..params.samples)
                    .max_by(|&a, &b| cf.cost(p, r, a).partial_cmp(&cf.cost(p, r, b)).unwrap())
                    .unwrap();
                // Peak radius (best+1)*delta within one voxel of the wall.
                let radius = (best + 1) as f64 * params.delta_mm;
                assert!((radius - 5.0).abs() <= 1.0, "peak at {radius} mm on ray {r}");
            }
        }
    }
}
