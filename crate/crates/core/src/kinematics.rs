//! Serial-chain model with standard (distal) Denavit–Hartenberg links.
//!
//! Frame `k` (for `k = 1..=n`) is reached from frame `k - 1` by
//! `Rz(theta_k + offset_k) · Tz(d_k) · Tx(a_k) · Rx(alpha_k)`. Frame 0 is the
//! base pose. Joint `j` (0-based) rotates about the z axis of frame `j`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Rotation3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    #[default]
    Revolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhLink {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
    pub joint_kind: JointKind,
}

impl DhLink {
    pub fn revolute(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset,
            joint_kind: JointKind::Revolute,
        }
    }

    /// Transform from the previous frame to this link's frame at joint angle `q`.
    pub fn transform(&self, q: f64) -> Pose {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        let rotation = Matrix3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca);
        Pose {
            rotation,
            position: Vector3::new(self.a * ct, self.a * st, self.d),
        }
    }
}

/// Rigid transform. `rotation` is kept orthonormal by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    /// Roll-pitch-yaw (`Rz(yaw) · Ry(pitch) · Rx(roll)`) plus translation.
    pub fn from_rpy_xyz(rpy: [f64; 3], xyz: [f64; 3]) -> Self {
        let rotation = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]).into_inner();
        Self {
            rotation,
            position: Vector3::from(xyz),
        }
    }

    pub fn rpy(&self) -> [f64; 3] {
        let (r, p, y) = Rotation3::from_matrix_unchecked(self.rotation).euler_angles();
        [r, p, y]
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.rotation * other.position + self.position,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.position
    }

    /// z axis of this frame expressed in the parent frame.
    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Largest deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }
}

/// A collision sphere rigidly attached to the distal frame of `link`
/// (frame `link + 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodySphere {
    pub link: usize,
    pub offset: Vector3<f64>,
    pub radius: f64,
}

/// Cached manipulability maxima per task space, estimated by sampling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaMaxCache {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub twist: Option<f64>,
}

impl LambdaMaxCache {
    pub fn get(&self, task: TaskSpace) -> Option<f64> {
        if task == TaskSpace::planar() {
            self.planar
        } else if task == TaskSpace::position() {
            self.position
        } else if task == TaskSpace::twist() {
            self.twist
        } else {
            None
        }
    }

    pub fn set(&mut self, task: TaskSpace, value: f64) {
        if task == TaskSpace::planar() {
            self.planar = Some(value);
        } else if task == TaskSpace::position() {
            self.position = Some(value);
        } else if task == TaskSpace::twist() {
            self.twist = Some(value);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub links: Vec<DhLink>,
    pub base_pose: Pose,
    pub body_spheres: Vec<BodySphere>,
    pub lambda_max: LambdaMaxCache,
}

impl KinematicChain {
    pub fn new(
        name: impl Into<String>,
        links: Vec<DhLink>,
        base_pose: Pose,
        body_spheres: Vec<BodySphere>,
    ) -> Result<Self> {
        let chain = Self {
            name: name.into(),
            links,
            base_pose,
            body_spheres,
            lambda_max: LambdaMaxCache::default(),
        };
        chain.validate()?;
        Ok(chain)
    }

    /// Planar arm in the base xy plane with the given link lengths.
    pub fn planar(lengths: &[f64]) -> Result<Self> {
        let links = lengths
            .iter()
            .map(|&a| DhLink::revolute(a, 0.0, 0.0, 0.0))
            .collect();
        Self::new(
            format!("planar{}r", lengths.len()),
            links,
            Pose::identity(),
            Vec::new(),
        )
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::Model("chain needs at least one link".into()));
        }
        for (i, l) in self.links.iter().enumerate() {
            if ![l.a, l.alpha, l.d, l.theta_offset]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::Model(format!(
                    "link {i} has non-finite DH parameters"
                )));
            }
        }
        if self.base_pose.orthonormality_error() > 1e-9
            || (self.base_pose.rotation.determinant() - 1.0).abs() > 1e-9
        {
            return Err(Error::Model(
                "base rotation is not a proper rotation".into(),
            ));
        }
        for (i, s) in self.body_spheres.iter().enumerate() {
            if s.link >= self.dof() {
                return Err(Error::Model(format!(
                    "body sphere {i} references link {} but chain has {} links",
                    s.link,
                    self.dof()
                )));
            }
            if !(s.radius > 0.0) || !s.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::Model(format!("body sphere {i} is malformed")));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, String> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        file.into_chain().map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        file.into_chain()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&ModelFile::from_chain(self))
            .map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks `q` against this chain and wraps it.
    pub fn config(&self, values: &[f64]) -> Result<JointConfig> {
        let q = JointConfig::new(values.to_vec())?;
        q.check_len(self.dof())?;
        Ok(q)
    }

    /// World positions of all body-sphere centers.
    pub fn sphere_centers(&self, frames: &[Pose]) -> Vec<Vector3<f64>> {
        self.body_spheres
            .iter()
            .map(|s| frames[s.link + 1].transform_point(&s.offset))
            .collect()
    }
}

/// Joint angles in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig(DVector<f64>);

impl JointConfig {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Model(
                "joint configuration has non-finite entries".into(),
            ));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        Self::new(values.as_slice().to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if self.len() != n {
            return Err(Error::Dimension {
                expected: n,
                actual: self.len(),
                context: "joint configuration",
            });
        }
        Ok(())
    }
}

/// Rows of the 6-D twist `[vx, vy, vz, wx, wy, wz]` kept in the task Jacobian.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskSpace {
    mask: [bool; 6],
}

const AXIS_NAMES: [&str; 6] = ["vx", "vy", "vz", "wx", "wy", "wz"];

impl TaskSpace {
    pub fn twist() -> Self {
        Self { mask: [true; 6] }
    }

    pub fn position() -> Self {
        Self {
            mask: [true, true, true, false, false, false],
        }
    }

    /// Linear velocity in the base xy plane.
    pub fn planar() -> Self {
        Self {
            mask: [true, true, false, false, false, false],
        }
    }

    pub fn from_rows(rows: &[usize]) -> Result<Self> {
        let mut mask = [false; 6];
        for &r in rows {
            if r >= 6 {
                return Err(Error::Input(format!("task row {r} out of range 0..6")));
            }
            mask[r] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::Input("task space selects no rows".into()));
        }
        Ok(Self { mask })
    }

    /// Presets by dimension: 2 → planar, 3 → position, 6 → twist.
    pub fn from_dim(dim: usize) -> Result<Self> {
        match dim {
            2 => Ok(Self::planar()),
            3 => Ok(Self::position()),
            6 => Ok(Self::twist()),
            _ => Err(Error::Input(format!("unsupported task dimension {dim}"))),
        }
    }

    pub fn dim(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        (0..6).filter(move |&r| self.mask[r])
    }

    pub fn select(&self, full: &DMatrix<f64>) -> DMatrix<f64> {
        let rows: Vec<usize> = self.rows().collect();
        full.select_rows(rows.iter())
    }
}

impl fmt::Debug for TaskSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.rows().map(|r| AXIS_NAMES[r]).collect();
        write!(f, "TaskSpace{names:?}")
    }
}

impl Default for TaskSpace {
    fn default() -> Self {
        Self::twist()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TaskSpaceRepr {
    Dim(usize),
    Axes(Vec<String>),
}

impl Serialize for TaskSpace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = if [Self::planar(), Self::position(), Self::twist()].contains(self) {
            TaskSpaceRepr::Dim(self.dim())
        } else {
            TaskSpaceRepr::Axes(self.rows().map(|r| AXIS_NAMES[r].to_string()).collect())
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TaskSpace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        match TaskSpaceRepr::deserialize(d)? {
            TaskSpaceRepr::Dim(n) => Self::from_dim(n).map_err(D::Error::custom),
            TaskSpaceRepr::Axes(names) => {
                let rows = names
                    .iter()
                    .map(|n| {
                        AXIS_NAMES
                            .iter()
                            .position(|a| a == n)
                            .ok_or_else(|| D::Error::custom(format!("unknown task axis {n:?}")))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Self::from_rows(&rows).map_err(D::Error::custom)
            }
        }
    }
}

/// Jacobian together with its analytic partial derivatives, one per joint.
#[derive(Debug, Clone)]
pub struct JacobianSet {
    pub jacobian: DMatrix<f64>,
    pub partials: Vec<DMatrix<f64>>,
}

/// Frames `0..=n`: the base pose followed by every link frame. The last entry
/// is the end-effector.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointConfig) -> Result<Vec<Pose>> {
    q.check_len(chain.dof())?;
    let mut frames = Vec::with_capacity(chain.dof() + 1);
    let mut current = chain.base_pose;
    frames.push(current);
    for (link, &angle) in chain.links.iter().zip(q.as_slice()) {
        current = current.compose(&link.transform(angle));
        frames.push(current);
    }
    Ok(frames)
}

pub fn end_effector_position(chain: &KinematicChain, q: &JointConfig) -> Result<Vector3<f64>> {
    let frames = forward_kinematics(chain, q)?;
    Ok(frames[chain.dof()].position)
}

/// Full 6×n geometric Jacobian (`[linear; angular]`) at the end-effector.
fn full_jacobian(frames: &[Pose]) -> DMatrix<f64> {
    let n = frames.len() - 1;
    let pe = frames[n].position;
    let mut jac = DMatrix::zeros(6, n);
    for (j, frame) in frames[..n].iter().enumerate() {
        let z = frame.z_axis();
        let lin = z.cross(&(pe - frame.position));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
    }
    jac
}

pub fn geometric_jacobian(
    chain: &KinematicChain,
    q: &JointConfig,
    task: TaskSpace,
) -> Result<DMatrix<f64>> {
    let frames = forward_kinematics(chain, q)?;
    Ok(task.select(&full_jacobian(&frames)))
}

/// Analytic `∂J/∂θ_k` for every joint, from the revolute-chain identities
/// `∂z_i/∂θ_k = z_k × z_i` (k < i) and `∂p/∂θ_k = z_k × (p − p_k)`.
pub fn jacobian_partials(
    chain: &KinematicChain,
    q: &JointConfig,
    task: TaskSpace,
) -> Result<JacobianSet> {
    let frames = forward_kinematics(chain, q)?;
    let (jacobian, partials) = jacobian_and_partials_from_frames(&frames);
    Ok(JacobianSet {
        jacobian: task.select(&jacobian),
        partials: partials.iter().map(|p| task.select(p)).collect(),
    })
}

pub(crate) fn jacobian_and_partials_from_frames(
    frames: &[Pose],
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = frames.len() - 1;
    let pe = frames[n].position;
    let z: Vec<Vector3<f64>> = frames[..n].iter().map(Pose::z_axis).collect();
    let p: Vec<Vector3<f64>> = frames[..n].iter().map(|f| f.position).collect();

    let jacobian = full_jacobian(frames);
    let mut partials = vec![DMatrix::zeros(6, n); n];
    for (k, partial) in partials.iter_mut().enumerate() {
        for i in 0..n {
            let (lin, ang) = if k < i {
                // Joint k moves both axis i and the lever arm pe − p_i rigidly.
                (z[k].cross(&z[i].cross(&(pe - p[i]))), z[k].cross(&z[i]))
            } else {
                (z[i].cross(&z[k].cross(&(pe - p[k]))), Vector3::zeros())
            };
            partial.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            partial.fixed_view_mut::<3, 1>(3, i).copy_from(&ang);
        }
    }
    (jacobian, partials)
}

/// 3×n position Jacobian of a world point rigidly attached to frame `link + 1`.
pub fn point_jacobian(frames: &[Pose], link: usize, point: &Vector3<f64>) -> Matrix3xX<f64> {
    let n = frames.len() - 1;
    let mut jac = Matrix3xX::zeros(n);
    for (j, frame) in frames[..=link.min(n - 1)].iter().enumerate() {
        jac.set_column(j, &frame.z_axis().cross(&(point - frame.position)));
    }
    jac
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Serialize, Deserialize)]
struct ModelFile {
    name: String,
    dh: Vec<DhEntry>,
    #[serde(default)]
    base_pose: BasePoseEntry,
    #[serde(default)]
    body_spheres: Vec<SphereEntry>,
    #[serde(default, skip_serializing_if = "is_default_cache")]
    lambda_max: LambdaMaxCache,
}

fn is_default_cache(c: &LambdaMaxCache) -> bool {
    *c == LambdaMaxCache::default()
}

#[derive(Serialize, Deserialize)]
struct DhEntry {
    a: f64,
    alpha: f64,
    d: f64,
    #[serde(default)]
    theta_offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    joint: Option<String>,
}

#[derive(Serialize, Deserialize, Default)]
struct BasePoseEntry {
    #[serde(default)]
    rpy: [f64; 3],
    #[serde(default)]
    xyz: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SphereEntry {
    link: usize,
    offset: [f64; 3],
    radius: f64,
}

impl ModelFile {
    fn into_chain(self) -> Result<KinematicChain> {
        let links = self
            .dh
            .into_iter()
            .enumerate()
            .map(|(i, e)| match e.joint.as_deref() {
                None | Some("revolute") => Ok(DhLink::revolute(e.a, e.alpha, e.d, e.theta_offset)),
                Some(other) => Err(Error::Model(format!(
                    "link {i}: joint kind {other:?} is not supported (revolute only)"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let spheres = self
            .body_spheres
            .into_iter()
            .map(|s| BodySphere {
                link: s.link,
                offset: Vector3::from(s.offset),
                radius: s.radius,
            })
            .collect();
        let mut chain = KinematicChain::new(
            self.name,
            links,
            Pose::from_rpy_xyz(self.base_pose.rpy, self.base_pose.xyz),
            spheres,
        )?;
        chain.lambda_max = self.lambda_max;
        Ok(chain)
    }

    fn from_chain(chain: &KinematicChain) -> Self {
        Self {
            name: chain.name.clone(),
            dh: chain
                .links
                .iter()
                .map(|l| DhEntry {
                    a: l.a,
                    alpha: l.alpha,
                    d: l.d,
                    theta_offset: l.theta_offset,
                    joint: None,
                })
                .collect(),
            base_pose: BasePoseEntry {
                rpy: chain.base_pose.rpy(),
                xyz: chain.base_pose.position.into(),
            },
            body_spheres: chain
                .body_spheres
                .iter()
                .map(|s| SphereEntry {
                    link: s.link,
                    offset: s.offset.into(),
                    radius: s.radius,
                })
                .collect(),
            lambda_max: chain.lambda_max,
        }
    }
}
