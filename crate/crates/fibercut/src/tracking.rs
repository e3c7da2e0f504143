//! Deterministic streamline tracking between two seed regions and the
//! centerline (with twist-free frames) that anchors the sampling lattice.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::tensor::principal_direction;
use crate::volume::{ScalarVolume, TensorVolume};
use crate::{Error, Result};

/// Spherical seed region in world coordinates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SeedRegion {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
}

impl SeedRegion {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::new(self.center_mm[0], self.center_mm[1], self.center_mm[2])
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - self.center()).norm() <= self.radius_mm
    }
}

/// Stopping criteria for streamline integration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrackingParams {
    /// Streamlines stop where FA drops below this threshold.
    pub fa_min: f64,
    /// Maximum turning angle between consecutive steps, degrees.
    pub angle_max_deg: f64,
    /// Fixed step length; 0 selects one voxel diagonal of the input grid.
    pub step_mm: f64,
    pub min_len_mm: f64,
    pub max_len_mm: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self { fa_min: 0.2, angle_max_deg: 45.0, step_mm: 0.0, min_len_mm: 20.0, max_len_mm: 300.0 }
    }
}

impl TrackingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fa_min > 0.0 && self.fa_min < 1.0) {
            return Err(Error::InvalidParams(format!("fa_min {} outside (0,1)", self.fa_min)));
        }
        if !(self.angle_max_deg > 0.0 && self.angle_max_deg <= 90.0) {
            return Err(Error::InvalidParams(format!(
                "angle_max_deg {} outside (0,90]",
                self.angle_max_deg
            )));
        }
        if self.step_mm < 0.0 {
            return Err(Error::InvalidParams("step_mm must be >= 0".into()));
        }
        if !(self.min_len_mm > 0.0 && self.min_len_mm < self.max_len_mm) {
            return Err(Error::InvalidParams(format!(
                "length window [{}, {}] is invalid",
                self.min_len_mm, self.max_len_mm
            )));
        }
        Ok(())
    }
}

/// One tracked fiber line; consecutive points are one step apart.
#[derive(Debug, Clone)]
pub struct Streamline {
    pub points: Vec<Vector3<f64>>,
}

impl Streamline {
    pub fn length_mm(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

/// Orthonormal triad attached to a centerline point.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub tangent: Vector3<f64>,
    pub normal1: Vector3<f64>,
    pub normal2: Vector3<f64>,
}

/// Arc-length-uniform polyline with rotation-minimizing frames.
#[derive(Debug, Clone)]
pub struct Centerline {
    pub points: Vec<Vector3<f64>>,
    pub frames: Vec<Frame>,
}

impl Centerline {
    /// Build from points alone; frames come from the double-reflection
    /// propagation.
    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        let frames = rmf_frames(&points)?;
        Ok(Self { points, frames })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn save_points_json(&self, path: &Path) -> Result<()> {
        let pts: Vec<[f64; 3]> = self.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let json = serde_json::to_string_pretty(&pts).expect("points serialize");
        std::fs::write(path, json).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn load_points_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let pts: Vec<[f64; 3]> = serde_json::from_str(&text)
            .map_err(|source| Error::Header { path: path.to_path_buf(), source })?;
        Self::from_points(pts.into_iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect())
    }
}

fn inside_grid(vol: &ScalarVolume, p: &Vector3<f64>) -> bool {
    let g = vol.header.grid_coords(p);
    let n = vol.header.dims;
    g.x >= 0.0
        && g.y >= 0.0
        && g.z >= 0.0
        && g.x <= (n[0] - 1) as f64
        && g.y <= (n[1] - 1) as f64
        && g.z <= (n[2] - 1) as f64
}

/// March one streamline half from a start point along an initial direction.
///
/// The direction field is voxel-wise constant: at each step the principal
/// diffusion direction of the voxel containing the current point is taken,
/// sign-aligned with the previous step. Integration stops on low FA, a sharp
/// turn, a missing principal direction, leaving the grid, or exceeding the
/// length cap.
fn march(
    fa: &ScalarVolume,
    dirs: &TensorVolume,
    start: Vector3<f64>,
    initial: Vector3<f64>,
    params: &TrackingParams,
    step: f64,
) -> Vec<Vector3<f64>> {
    let cos_max = params.angle_max_deg.to_radians().cos();
    let mut points = vec![start];
    let mut pos = start;
    let mut prev = initial;
    let mut length = 0.0;

    loop {
        let [ix, iy, iz] = fa.header.nearest_voxel(&pos);
        let dir = match principal_direction(&dirs.tensor_at(ix, iy, iz)) {
            Some(d) => {
                if d.dot(&prev) < 0.0 {
                    -d
                } else {
                    d
                }
            }
            None => break,
        };
        if dir.dot(&prev) < cos_max {
            break;
        }
        let next = pos + step * dir;
        if !inside_grid(fa, &next) {
            break;
        }
        let [jx, jy, jz] = fa.header.nearest_voxel(&next);
        if (fa.at(jx, jy, jz) as f64) < params.fa_min {
            break;
        }
        length += step;
        if length > params.max_len_mm {
            break;
        }
        points.push(next);
        pos = next;
        prev = dir;
    }
    points
}

/// Truncate a streamline at its closest pass through the target region.
/// Returns `None` when the line never enters the region.
fn truncate_at_region(points: &[Vector3<f64>], region: &SeedRegion) -> Option<usize> {
    let center = region.center();
    let mut best: Option<(usize, f64)> = None;
    for (k, p) in points.iter().enumerate() {
        let d = (p - center).norm();
        if d <= region.radius_mm && best.map_or(true, |(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|(k, _)| k)
}

/// Track streamlines from every voxel of `seed_a` and keep those that reach
/// `seed_b` with an acceptable length.
///
/// Each seed voxel is marched in both signs of its principal direction (two
/// candidates). A candidate is accepted if it enters `seed_b`; it is then
/// truncated at its closest pass through `seed_b` so every returned line runs
/// seed_a → seed_b. An empty result is not an error.
pub fn track_streamlines(
    fa: &ScalarVolume,
    dirs: &TensorVolume,
    seed_a: &SeedRegion,
    seed_b: &SeedRegion,
    params: &TrackingParams,
) -> Result<Vec<Streamline>> {
    params.validate()?;
    if seed_a.radius_mm <= 0.0 || seed_b.radius_mm <= 0.0 {
        return Err(Error::InvalidParams("seed radius must be positive".into()));
    }
    if fa.header.dims != dirs.header.dims
        || fa.header.spacing_mm != dirs.header.spacing_mm
        || fa.header.origin_mm != dirs.header.origin_mm
    {
        return Err(Error::InvalidParams("FA and tensor volumes must share a grid".into()));
    }
    if !inside_grid(fa, &seed_a.center()) || !inside_grid(fa, &seed_b.center()) {
        return Err(Error::InvalidParams("seed region center outside the volume".into()));
    }

    let spacing = fa.header.spacing_mm;
    let step = if params.step_mm > 0.0 {
        params.step_mm
    } else {
        (spacing[0].powi(2) + spacing[1].powi(2) + spacing[2].powi(2)).sqrt()
    };

    // Voxel index window covering the seed sphere.
    let h = &fa.header;
    let lo = h.nearest_voxel(&(seed_a.center() - Vector3::repeat(seed_a.radius_mm)));
    let hi = h.nearest_voxel(&(seed_a.center() + Vector3::repeat(seed_a.radius_mm)));

    let mut out = Vec::new();
    for iz in lo[2]..=hi[2] {
        for iy in lo[1]..=hi[1] {
            for ix in lo[0]..=hi[0] {
                let c = h.voxel_center(ix, iy, iz);
                if !seed_a.contains(&c) || (fa.at(ix, iy, iz) as f64) < params.fa_min {
                    continue;
                }
                let d0 = match principal_direction(&dirs.tensor_at(ix, iy, iz)) {
                    Some(d) => d,
                    None => continue,
                };
                for dir in [d0, -d0] {
                    let pts = march(fa, dirs, c, dir, params, step);
                    if let Some(cut) = truncate_at_region(&pts, seed_b) {
                        let len = cut as f64 * step;
                        if len >= params.min_len_mm {
                            out.push(Streamline { points: pts[..=cut].to_vec() });
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Resample a polyline to `n` arc-length-uniform points.
fn resample_uniform(points: &[Vector3<f64>], n: usize) -> Vec<Vector3<f64>> {
    assert!(points.len() >= 2 && n >= 2);
    let mut cum = Vec::with_capacity(points.len());
    cum.push(0.0);
    for w in points.windows(2) {
        let last = *cum.last().unwrap();
        cum.push(last + (w[1] - w[0]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < target {
            seg += 1;
        }
        let span = cum[seg + 1] - cum[seg];
        let t = if span > 0.0 { (target - cum[seg]) / span } else { 0.0 };
        out.push(points[seg] + t.clamp(0.0, 1.0) * (points[seg + 1] - points[seg]));
    }
    out
}

/// Average the tracked bundle into a single centerline with `num_points`
/// arc-length-uniform points and rotation-minimizing frames.
///
/// Every streamline is resampled to `num_points` and the centerline point k
/// is the mean of the k-th points across streamlines (all lines already run
/// seed_a → seed_b).
pub fn derive_centerline(streamlines: &[Streamline], num_points: usize) -> Result<Centerline> {
    if streamlines.is_empty() {
        return Err(Error::NoCenterline);
    }
    if num_points < 2 {
        return Err(Error::InvalidParams("centerline needs at least 2 points".into()));
    }
    let mut mean = vec![Vector3::zeros(); num_points];
    for s in streamlines {
        if s.points.len() < 2 {
            return Err(Error::DegenerateCenterline("streamline with fewer than 2 points".into()));
        }
        for (m, p) in mean.iter_mut().zip(resample_uniform(&s.points, num_points)) {
            *m += p;
        }
    }
    let inv = 1.0 / streamlines.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    // The mean of arc-length-uniform lines is not exactly uniform; one more
    // resampling pass restores the spacing invariant.
    let mean = resample_uniform(&mean, num_points);
    Centerline::from_points(mean)
}

/// Rotation-minimizing frames along a polyline (double-reflection method).
///
/// Tangents are normalized central differences (one-sided at the ends). The
/// first normal is the projection of world +z onto the first tangent's
/// orthogonal plane, falling back to +x when they are parallel, so ray
/// indices are deterministic.
pub fn rmf_frames(points: &[Vector3<f64>]) -> Result<Vec<Frame>> {
    if points.len() < 2 {
        return Err(Error::DegenerateCenterline("need at least 2 points for frames".into()));
    }
    for (k, w) in points.windows(2).enumerate() {
        if (w[1] - w[0]).norm() < 1e-12 {
            return Err(Error::DegenerateCenterline(format!(
                "coincident consecutive points at index {k}"
            )));
        }
    }

    let n = points.len();
    let mut tangents = Vec::with_capacity(n);
    for k in 0..n {
        let d = if k == 0 {
            points[1] - points[0]
        } else if k == n - 1 {
            points[n - 1] - points[n - 2]
        } else {
            points[k + 1] - points[k - 1]
        };
        let norm = d.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateCenterline(format!("zero tangent at index {k}")));
        }
        tangents.push(d / norm);
    }

    let t0 = tangents[0];
    let mut n1 = Vector3::z() - t0.dot(&Vector3::z()) * t0;
    if n1.norm() < 1e-6 {
        n1 = Vector3::x() - t0.dot(&Vector3::x()) * t0;
    }
    let n1 = n1.normalize();

    let mut frames = Vec::with_capacity(n);
    frames.push(Frame { tangent: t0, normal1: n1, normal2: t0.cross(&n1) });

    for k in 0..n - 1 {
        let prev = frames[k];
        // First reflection: across the chord midplane.
        let v1 = points[k + 1] - points[k];
        let c1 = v1.dot(&v1);
        let r_l = prev.normal1 - (2.0 / c1) * v1.dot(&prev.normal1) * v1;
        let t_l = prev.tangent - (2.0 / c1) * v1.dot(&prev.tangent) * v1;
        // Second reflection: maps the reflected tangent onto the next one.
        let v2 = tangents[k + 1] - t_l;
        let c2 = v2.dot(&v2);
        let mut next_n1 = if c2 > 1e-24 { r_l - (2.0 / c2) * v2.dot(&r_l) * v2 } else { r_l };
        // Guard against rounding drift off the orthogonal plane.
        let t = tangents[k + 1];
        next_n1 -= t.dot(&next_n1) * t;
        let next_n1 = next_n1.normalize();
        frames.push(Frame { tangent: t, normal1: next_n1, normal2: t.cross(&next_n1) });
    }
    Ok(frames)
}
