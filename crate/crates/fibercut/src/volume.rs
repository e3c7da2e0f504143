//! Volume I/O and sampling.
//!
//! Volumes live in a simple two-file format: `<base>.json` holds the header,
//! `<base>.raw` holds the little-endian payload, x-fastest and
//! component-interleaved. Tensor components are stored per voxel in the order
//! (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz). NaN/Inf payloads are rejected on both save
//! and load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::tensor::SymTensor;
use crate::{Error, Result};

/// Element type of the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32")]
    F32,
    #[serde(rename = "u8")]
    U8,
}

/// Grid geometry and payload layout of a volume.
///
/// `origin_mm` is the world position of the *center* of voxel (0,0,0);
/// all sampling in this crate uses the voxel-center convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub components: u32,
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn scalar(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Self {
        Self { dims, spacing_mm, origin_mm, components: 1, dtype: Dtype::F32 }
    }

    pub fn tensor(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Self {
        Self { dims, spacing_mm, origin_mm, components: 6, dtype: Dtype::F32 }
    }

    pub fn label(dims: [usize; 3], spacing_mm: [f64; 3], origin_mm: [f64; 3]) -> Self {
        Self { dims, spacing_mm, origin_mm, components: 1, dtype: Dtype::U8 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 1) {
            return Err(Error::InvalidHeader(format!("dims {:?} must all be >= 1", self.dims)));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidHeader(format!(
                "spacing {:?} must be positive and finite",
                self.spacing_mm
            )));
        }
        match (self.components, self.dtype) {
            (1, Dtype::F32) | (1, Dtype::U8) | (6, Dtype::F32) => Ok(()),
            (c, d) => Err(Error::InvalidHeader(format!(
                "unsupported components/dtype combination: {c} / {d:?}"
            ))),
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Flat index of voxel (ix, iy, iz); x is the fastest axis.
    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    /// World position (mm) of a voxel center.
    #[inline]
    pub fn voxel_center(&self, ix: usize, iy: usize, iz: usize) -> Vector3<f64> {
        Vector3::new(
            self.origin_mm[0] + ix as f64 * self.spacing_mm[0],
            self.origin_mm[1] + iy as f64 * self.spacing_mm[1],
            self.origin_mm[2] + iz as f64 * self.spacing_mm[2],
        )
    }

    /// Continuous grid coordinates of a world point (voxel-center convention).
    #[inline]
    pub fn grid_coords(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            (p.x - self.origin_mm[0]) / self.spacing_mm[0],
            (p.y - self.origin_mm[1]) / self.spacing_mm[1],
            (p.z - self.origin_mm[2]) / self.spacing_mm[2],
        )
    }

    /// Index of the voxel whose center is nearest to a world point, clamped
    /// to the grid.
    pub fn nearest_voxel(&self, p: &Vector3<f64>) -> [usize; 3] {
        let g = self.grid_coords(p);
        let clamp = |v: f64, n: usize| -> usize {
            let r = v.round();
            if r <= 0.0 {
                0
            } else if r >= (n - 1) as f64 {
                n - 1
            } else {
                r as usize
            }
        };
        [clamp(g.x, self.dims[0]), clamp(g.y, self.dims[1]), clamp(g.z, self.dims[2])]
    }

    fn payload_len(&self) -> usize {
        self.voxel_count() * self.components as usize
    }

    fn element_size(&self) -> usize {
        match self.dtype {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// Regular grid of symmetric 3x3 diffusion tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorVolume {
    pub header: VolumeHeader,
    /// 6 components per voxel: (Dxx, Dxy, Dxz, Dyy, Dyz, Dzz).
    pub data: Vec<f32>,
}

impl TensorVolume {
    pub fn zeros(header: VolumeHeader) -> Self {
        let n = header.payload_len();
        Self { header, data: vec![0.0; n] }
    }

    #[inline]
    pub fn tensor_at(&self, ix: usize, iy: usize, iz: usize) -> SymTensor {
        let base = self.header.index(ix, iy, iz) * 6;
        let d = &self.data[base..base + 6];
        SymTensor {
            xx: d[0] as f64,
            xy: d[1] as f64,
            xz: d[2] as f64,
            yy: d[3] as f64,
            yz: d[4] as f64,
            zz: d[5] as f64,
        }
    }

    pub fn set_tensor(&mut self, ix: usize, iy: usize, iz: usize, t: &SymTensor) {
        let base = self.header.index(ix, iy, iz) * 6;
        let d = &mut self.data[base..base + 6];
        d[0] = t.xx as f32;
        d[1] = t.xy as f32;
        d[2] = t.xz as f32;
        d[3] = t.yy as f32;
        d[4] = t.yz as f32;
        d[5] = t.zz as f32;
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        save_f32(&self.header, &self.data, base)
    }
}

/// Scalar f32 volume (FA maps and other per-voxel intensities).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    pub header: VolumeHeader,
    pub data: Vec<f32>,
}

impl ScalarVolume {
    pub fn zeros(header: VolumeHeader) -> Self {
        let n = header.voxel_count();
        Self { header, data: vec![0.0; n] }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.header.index(ix, iy, iz)]
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        save_f32(&self.header, &self.data, base)
    }
}

/// Binary u8 volume: 0 = background, 1 = bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub header: VolumeHeader,
    pub data: Vec<u8>,
}

impl LabelVolume {
    pub fn zeros(header: VolumeHeader) -> Self {
        let n = header.voxel_count();
        Self { header, data: vec![0; n] }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> u8 {
        self.data[self.header.index(ix, iy, iz)]
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        self.header.validate()?;
        write_files(&self.header, base, &self.data)
    }
}

/// Any of the three volume kinds, as returned by [`load_volume`].
#[derive(Debug, Clone)]
pub enum AnyVolume {
    Tensor(TensorVolume),
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl AnyVolume {
    pub fn into_tensor(self) -> Result<TensorVolume> {
        match self {
            AnyVolume::Tensor(v) => Ok(v),
            _ => Err(Error::InvalidHeader("expected a 6-component tensor volume".into())),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            _ => Err(Error::InvalidHeader("expected a 1-component f32 volume".into())),
        }
    }

    pub fn into_label(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            _ => Err(Error::InvalidHeader("expected a 1-component u8 volume".into())),
        }
    }
}

fn header_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

fn raw_path(base: &Path) -> PathBuf {
    let mut p = base.as_os_str().to_owned();
    p.push(".raw");
    PathBuf::from(p)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn check_finite(data: &[f32]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(i));
        }
    }
    Ok(())
}

fn write_files(header: &VolumeHeader, base: &Path, payload: &[u8]) -> Result<()> {
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    let hp = header_path(base);
    let json = serde_json::to_string_pretty(header).expect("header serialization");
    fs::write(&hp, json).map_err(io_err(&hp))?;
    let rp = raw_path(base);
    let file = fs::File::create(&rp).map_err(io_err(&rp))?;
    let mut w = BufWriter::new(file);
    w.write_all(payload).map_err(io_err(&rp))?;
    w.flush().map_err(io_err(&rp))?;
    Ok(())
}

fn save_f32(header: &VolumeHeader, data: &[f32], base: &Path) -> Result<()> {
    header.validate()?;
    assert_eq!(data.len(), header.payload_len(), "payload length disagrees with header");
    check_finite(data)?;
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_files(header, base, &bytes)
}

/// Save any volume to `<base>.json` + `<base>.raw`.
pub fn save_volume(volume: &AnyVolume, base: &Path) -> Result<()> {
    match volume {
        AnyVolume::Tensor(v) => v.save(base),
        AnyVolume::Scalar(v) => v.save(base),
        AnyVolume::Label(v) => v.save(base),
    }
}

/// Load a volume from `<base>.json` + `<base>.raw`.
///
/// The payload must match the header size exactly; f32 payloads must be
/// finite everywhere.
pub fn load_volume(base: &Path) -> Result<AnyVolume> {
    let hp = header_path(base);
    let text = fs::read_to_string(&hp).map_err(io_err(&hp))?;
    let header: VolumeHeader =
        serde_json::from_str(&text).map_err(|source| Error::Header { path: hp, source })?;
    header.validate()?;

    let rp = raw_path(base);
    let bytes = fs::read(&rp).map_err(io_err(&rp))?;
    let expected = header.payload_len() * header.element_size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { path: rp, expected, actual: bytes.len() });
    }

    match header.dtype {
        Dtype::U8 => Ok(AnyVolume::Label(LabelVolume { header, data: bytes })),
        Dtype::F32 => {
            let mut data = Vec::with_capacity(header.payload_len());
            for chunk in bytes.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            check_finite(&data)?;
            if header.components == 6 {
                Ok(AnyVolume::Tensor(TensorVolume { header, data }))
            } else {
                Ok(AnyVolume::Scalar(ScalarVolume { header, data }))
            }
        }
    }
}

/// Trilinear interpolation of a scalar volume at a world point (mm).
///
/// Uses the voxel-center convention; points outside the grid clamp to the
/// nearest edge value rather than erroring, so rays that exit the volume
/// read border values.
pub fn trilinear_sample(vol: &ScalarVolume, point_mm: &Vector3<f64>) -> f64 {
    let g = vol.header.grid_coords(point_mm);
    let [nx, ny, nz] = vol.header.dims;

    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        // Clamp to [0, n-1]; outside the grid the fractional part collapses
        // so the edge value is returned.
        if v <= 0.0 || n == 1 {
            (0, 0, 0.0)
        } else if v >= (n - 1) as f64 {
            (n - 1, n - 1, 0.0)
        } else {
            let i0 = v.floor() as usize;
            (i0, i0 + 1, v - i0 as f64)
        }
    };

    let (x0, x1, fx) = axis(g.x, nx);
    let (y0, y1, fy) = axis(g.y, ny);
    let (z0, z1, fz) = axis(g.z, nz);

    let v = |ix: usize, iy: usize, iz: usize| vol.at(ix, iy, iz) as f64;

    let c00 = v(x0, y0, z0) * (1.0 - fx) + v(x1, y0, z0) * fx;
    let c10 = v(x0, y1, z0) * (1.0 - fx) + v(x1, y1, z0) * fx;
    let c01 = v(x0, y0, z1) * (1.0 - fx) + v(x1, y0, z1) * fx;
    let c11 = v(x0, y1, z1) * (1.0 - fx) + v(x1, y1, z1) * fx;

    let c0 = c00 * (1.0 - fy) + c10 * fy;
    let c1 = c01 * (1.0 - fy) + c11 * fy;

    c0 * (1.0 - fz) + c1 * fz
}
