//! Voxelized signed distance field and the sphere-robot hinge collision cost.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, point_jacobian, JointConfig, KinematicChain, Pose};

/// Signed distances sampled at nodes `origin + (i, j, k) · cell_size`,
/// x-index fastest. Negative inside obstacles.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    origin: Vector3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    /// Cube of edge `size` centered at `center`.
    pub fn cube(center: [f64; 3], size: f64, cell_size: f64) -> Self {
        let count = (size / cell_size).round() as usize + 1;
        Self {
            origin: [
                center[0] - size / 2.0,
                center[1] - size / 2.0,
                center[2] - size / 2.0,
            ],
            cell_size,
            dims: [count; 3],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(Error::Input("cell_size must be positive".into()));
        }
        if self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Input(
                "grid needs at least two nodes per axis".into(),
            ));
        }
        if !self.origin.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("grid origin must be finite".into()));
        }
        Ok(())
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::cube([0.0; 3], 2.4, 0.02)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfQuery {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// The query point was clamped to the grid border.
    pub out_of_bounds: bool,
}

impl SdfGrid {
    pub fn new(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected: usize = spec.dims.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: data.len(),
                context: "sdf data length",
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Input("sdf contains non-finite distances".into()));
        }
        Ok(Self {
            origin: Vector3::from(spec.origin),
            cell_size: spec.cell_size,
            dims: spec.dims,
            data,
        })
    }

    /// Samples `f` at every grid node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&Vector3<f64>) -> f64) -> Result<Self> {
        spec.validate()?;
        let [nx, ny, nz] = spec.dims;
        let origin = Vector3::from(spec.origin);
        let mut data = Vec::with_capacity(nx * ny * nz);
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let p = origin + Vector3::new(i as f64, j as f64, k as f64) * spec.cell_size;
                    data.push(f(&p));
                }
            }
        }
        Self::new(spec, data)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            origin: self.origin.into(),
            cell_size: self.cell_size,
            dims: self.dims,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.cell_size
    }

    pub fn node_value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    fn upper(&self) -> Vector3<f64> {
        self.node_position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    fn clamp(&self, p: &Vector3<f64>) -> (Vector3<f64>, bool) {
        let hi = self.upper();
        let c = Vector3::from_fn(|r, _| p[r].clamp(self.origin[r], hi[r]));
        let clamped = c != *p;
        (c, clamped)
    }

    /// Trilinear interpolation at a point already inside the grid.
    fn trilinear(&self, p: &Vector3<f64>) -> f64 {
        let g = (p - self.origin) / self.cell_size;
        let mut idx = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            // Snap round-off so node queries return the stored sample exactly.
            let g_a = if (g[a] - g[a].round()).abs() < 1e-9 {
                g[a].round()
            } else {
                g[a]
            };
            let cell = (g_a.floor().max(0.0) as usize).min(self.dims[a] - 2);
            idx[a] = cell;
            frac[a] = (g_a - cell as f64).clamp(0.0, 1.0);
        }
        let mut value = 0.0;
        for corner in 0..8 {
            let (di, dj, dk) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = if di == 1 { frac[0] } else { 1.0 - frac[0] }
                * if dj == 1 { frac[1] } else { 1.0 - frac[1] }
                * if dk == 1 { frac[2] } else { 1.0 - frac[2] };
            if w != 0.0 {
                value += w * self.node_value(idx[0] + di, idx[1] + dj, idx[2] + dk);
            }
        }
        value
    }

    /// Interpolated distance with a central-difference gradient of the
    /// interpolant. Points outside the grid are clamped to its border.
    pub fn query(&self, point: &Vector3<f64>) -> SdfQuery {
        let (p, out_of_bounds) = self.clamp(point);
        let distance = self.trilinear(&p);
        let h = 1e-4 * self.cell_size;
        let gradient = Vector3::from_fn(|a, _| {
            let mut plus = p;
            let mut minus = p;
            plus[a] += h;
            minus[a] -= h;
            let (plus, _) = self.clamp(&plus);
            let (minus, _) = self.clamp(&minus);
            let span = plus[a] - minus[a];
            if span > 0.0 {
                (self.trilinear(&plus) - self.trilinear(&minus)) / span
            } else {
                0.0
            }
        });
        SdfQuery {
            distance,
            gradient,
            out_of_bounds,
        }
    }

    /// Flat binary form: one JSON header line `{origin, cell_size, dims}`
    /// followed by little-endian f64 distances.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_string(&self.spec()).map_err(std::io::Error::other)?;
        w.write_all(header.as_bytes())?;
        w.write_all(b"\n")?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::io("<sdf stream>", e))?;
        let spec: GridSpec =
            serde_json::from_str(header.trim_end()).map_err(|e| Error::json("<sdf header>", e))?;
        spec.validate()?;
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<sdf stream>", e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Input(
                "sdf payload is not a whole number of f64".into(),
            ));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::new(spec, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Axis-aligned box obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
}

impl BoxObstacle {
    /// Exact signed distance from `p` to the box surface.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let q = Vector3::from_fn(|r, _| (p[r] - self.center[r]).abs() - self.half_extents[r]);
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.max().min(0.0);
        outside + inside
    }
}

pub fn build_box_sdf(center: [f64; 3], half_extents: [f64; 3], spec: GridSpec) -> Result<SdfGrid> {
    build_union_sdf(
        &[BoxObstacle {
            center,
            half_extents,
        }],
        spec,
    )
}

/// Minimum over the boxes of their exact signed distances.
pub fn build_union_sdf(boxes: &[BoxObstacle], spec: GridSpec) -> Result<SdfGrid> {
    if boxes.is_empty() {
        return Err(Error::Input("no obstacles to rasterize".into()));
    }
    for b in boxes {
        if b.half_extents.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Input("box half extents must be positive".into()));
        }
    }
    SdfGrid::from_fn(spec, |p| {
        boxes
            .iter()
            .map(|b| b.signed_distance(p))
            .fold(f64::INFINITY, f64::min)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionParams {
    /// Safety margin ε (meters).
    pub epsilon: f64,
    /// Isotropic covariance Σ_obs of the per-sphere residuals.
    pub sigma_obs: f64,
}

impl CollisionParams {
    pub fn new(epsilon: f64, sigma_obs: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !(sigma_obs > 0.0) {
            return Err(Error::Input("need epsilon >= 0 and sigma_obs > 0".into()));
        }
        Ok(Self { epsilon, sigma_obs })
    }
}

/// `max(ε − d, 0)` and its slope in `d`.
pub fn hinge_cost(distance: f64, epsilon: f64) -> (f64, f64) {
    if distance <= epsilon {
        (epsilon - distance, -1.0)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct CollisionResidual {
    /// One hinge value per body sphere (unwhitened).
    pub residual: DVector<f64>,
    /// |spheres| × n.
    pub jacobian: DMatrix<f64>,
    /// Signed clearance `sdf(center) − radius` per sphere.
    pub clearances: Vec<f64>,
}

pub fn collision_residual(
    chain: &KinematicChain,
    q: &JointConfig,
    grid: &SdfGrid,
    params: &CollisionParams,
) -> Result<CollisionResidual> {
    let frames = forward_kinematics(chain, q)?;
    Ok(collision_residual_from_frames(chain, &frames, grid, params))
}

pub(crate) fn collision_residual_from_frames(
    chain: &KinematicChain,
    frames: &[Pose],
    grid: &SdfGrid,
    params: &CollisionParams,
) -> CollisionResidual {
    let count = chain.body_spheres.len();
    let mut residual = DVector::zeros(count);
    let mut jacobian = DMatrix::zeros(count, chain.dof());
    let mut clearances = Vec::with_capacity(count);
    for (s, (sphere, center)) in chain
        .body_spheres
        .iter()
        .zip(chain.sphere_centers(frames))
        .enumerate()
    {
        let query = grid.query(&center);
        let clearance = query.distance - sphere.radius;
        let (c, slope) = hinge_cost(clearance, params.epsilon);
        residual[s] = c;
        clearances.push(clearance);
        if slope != 0.0 {
            let pj = point_jacobian(frames, sphere.link, &center);
            let row = (query.gradient.transpose() * pj) * slope;
            jacobian.row_mut(s).copy_from(&row);
        }
    }
    CollisionResidual {
        residual,
        jacobian,
        clearances,
    }
}

/// Signed clearance of every body sphere at `q`.
pub fn sphere_clearances(
    chain: &KinematicChain,
    q: &JointConfig,
    grid: &SdfGrid,
) -> Result<Vec<f64>> {
    let frames = forward_kinematics(chain, q)?;
    Ok(chain
        .body_spheres
        .iter()
        .zip(chain.sphere_centers(&frames))
        .map(|(s, c)| grid.query(&c).distance - s.radius)
        .collect())
}
