//! The dodecahedral 12-module drone: face geometry and the default tree of
//! shell, shafts, hooks and flagella.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::assembly::{Assembly, AssemblyError, JointKind, LinkBody, LinkSpec, RigidBody, RodSpec, StrainBasis};
use super::sweep::{sweep, Site};
use crate::real::Real;
use crate::se3::{exp_vector, AffineStrain, Pose};

/// Ratio of the inradius of a regular dodecahedron to its edge length.
pub const INRADIUS_RATIO: f64 = 1.113_516_364_411_606_7;

/// Opposite-face motor pairs, 1-based.
pub const PAIRS: [(usize, usize); 6] = [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12)];

/// Azimuth (degrees) and upper/lower ring of each motor's face normal, in
/// motor order. `None` azimuth marks the top or bottom face.
const LAYOUT: [(Option<f64>, i8); 12] = [
    (None, 1),
    (None, -1),
    (Some(288.0), 1),
    (Some(108.0), -1),
    (Some(216.0), 1),
    (Some(36.0), -1),
    (Some(144.0), 1),
    (Some(324.0), -1),
    (Some(0.0), 1),
    (Some(180.0), -1),
    (Some(72.0), 1),
    (Some(252.0), -1),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Face {
    pub motor: usize,
    /// Face centre relative to the geometric centre.
    pub center: [f64; 3],
    pub normal: [f64; 3],
}

impl Face {
    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.center)
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.normal)
    }

    /// Face frame: x along the outward normal, origin at the face centre.
    pub fn frame(&self) -> Pose<f64> {
        let x = self.normal();
        let y = if x.z.abs() > 0.999 { Vector3::y() } else { Vector3::z().cross(&x).normalize() };
        let z = x.cross(&y);
        Pose::new(Matrix3::from_columns(&[x, y, z]), self.center())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceTable {
    pub edge_length: f64,
    pub inradius: f64,
    pub faces: Vec<Face>,
    pub pairs: Vec<(usize, usize)>,
}

impl FaceTable {
    pub fn face(&self, motor: usize) -> &Face {
        &self.faces[motor - 1]
    }
}

/// The twenty vertices of the dodecahedron with edge `a`, oriented with a
/// face on top and one face normal of the upper ring at azimuth 0.
pub fn dodecahedron_vertices(a: f64) -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let ip = 1.0 / phi;
    let mut v = Vec::with_capacity(20);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                v.push(Vector3::new(sx, sy, sz));
            }
        }
    }
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            v.push(Vector3::new(0.0, s1 * ip, s2 * phi));
            v.push(Vector3::new(s1 * ip, s2 * phi, 0.0));
            v.push(Vector3::new(s1 * phi, 0.0, s2 * ip));
        }
    }
    // face normals are the cyclic permutations of (0, ±φ, ±1); bring (0, φ, 1) to +z
    let top = Vector3::new(0.0, phi, 1.0).normalize();
    let r1 = rotation_between(&top, &Vector3::z());
    // then spin about z so the upper-ring normal nearest azimuth 0 sits at 0
    let ring: Vec<Vector3<f64>> = face_directions().iter().map(|n| r1 * n).filter(|n| (n.z - 1.0 / 5f64.sqrt()).abs() < 1e-9).collect();
    let az = ring.iter().map(|n| n.y.atan2(n.x)).min_by(|a, b| a.abs().total_cmp(&b.abs())).expect("upper ring");
    let r2 = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), -az).into_inner();
    let scale = a / (2.0 * ip);
    v.iter().map(|p| r2 * r1 * p * scale).collect()
}

fn face_directions() -> Vec<Vector3<f64>> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut out = Vec::new();
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            out.push(Vector3::new(0.0, s1 * phi, s2).normalize());
            out.push(Vector3::new(s1, 0.0, s2 * phi).normalize());
            out.push(Vector3::new(s1 * phi, s2, 0.0).normalize());
        }
    }
    out
}

fn rotation_between(a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
    nalgebra::Rotation3::rotation_between(a, b).expect("non-antiparallel").into_inner()
}

/// Face table generated from the vertex coordinates: each face normal is
/// the direction whose supporting plane touches exactly five vertices.
pub fn face_table(edge_length: f64) -> FaceTable {
    let verts = dodecahedron_vertices(edge_length);
    let faces = LAYOUT
        .iter()
        .enumerate()
        .map(|(i, &(az, ring))| {
            let target = match az {
                None => Vector3::new(0.0, 0.0, ring as f64),
                Some(d) => {
                    let (s, c) = d.to_radians().sin_cos();
                    let h = 2.0 / 5f64.sqrt();
                    Vector3::new(h * c, h * s, ring as f64 / 5f64.sqrt())
                }
            };
            let support: Vec<&Vector3<f64>> = {
                let top = verts.iter().map(|v| v.dot(&target)).fold(f64::MIN, f64::max);
                verts.iter().filter(|v| (v.dot(&target) - top).abs() < 1e-9 * edge_length.max(1.0)).collect()
            };
            assert_eq!(support.len(), 5, "face {} not found in vertex set", i + 1);
            let center = support.iter().fold(Vector3::zeros(), |acc, v| acc + *v) / 5.0;
            let normal = center.normalize();
            Face { motor: i + 1, center: center.into(), normal: normal.into() }
        })
        .collect::<Vec<_>>();
    let inradius = Vector3::from(faces[0].center).norm();
    FaceTable { edge_length, inradius, faces, pairs: PAIRS.to_vec() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlagellumParams {
    pub length: f64,
    pub radius: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub density: f64,
}

impl Default for FlagellumParams {
    fn default() -> Self {
        Self { length: 0.15, radius: 0.005, youngs_modulus: 0.8e6, poisson_ratio: 0.5, density: 1100.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZodiaqParams {
    pub edge_length: f64,
    pub shell_mass: f64,
    pub total_mass: f64,
    /// Vertical distance of the centre of gravity below the centre of buoyancy.
    pub cg_drop: f64,
    /// Water density the ballast and displaced volume are trimmed for.
    pub trim_density: f64,
    pub shaft_length: f64,
    pub shaft_radius: f64,
    pub hook_mass: f64,
    pub hook_length: f64,
    /// Angle between the shaft axis and the flagellum base tangent.
    pub hook_angle_deg: f64,
    pub flagellum: FlagellumParams,
    pub quadrature_points: usize,
    pub magnus_substeps: usize,
    /// Motors whose flagellum is detached; shaft and hook stay.
    pub removed_flagella: Vec<usize>,
    /// Motors whose whole module is removed.
    pub removed_modules: Vec<usize>,
}

impl Default for ZodiaqParams {
    fn default() -> Self {
        Self {
            edge_length: 0.10,
            shell_mass: 8.57,
            total_mass: 10.75,
            cg_drop: 0.035,
            trim_density: 1000.0,
            shaft_length: 0.02,
            shaft_radius: 0.012,
            hook_mass: 0.01,
            hook_length: 0.02,
            hook_angle_deg: 60.0,
            flagellum: FlagellumParams::default(),
            quadrature_points: 10,
            magnus_substeps: 1,
            removed_flagella: Vec::new(),
            removed_modules: Vec::new(),
        }
    }
}

impl ZodiaqParams {
    pub fn module_mass(&self) -> f64 {
        (self.total_mass - self.shell_mass) / 12.0
    }

    pub fn flagellum_mass(&self) -> f64 {
        let f = &self.flagellum;
        f.density * std::f64::consts::PI * f.radius * f.radius * f.length
    }

    pub fn shaft_mass(&self) -> f64 {
        self.module_mass() - self.hook_mass - self.flagellum_mass()
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let fields = [
            ("edge_length", self.edge_length),
            ("shell_mass", self.shell_mass),
            ("total_mass", self.total_mass),
            ("trim_density", self.trim_density),
            ("shaft_length", self.shaft_length),
            ("shaft_radius", self.shaft_radius),
            ("hook_mass", self.hook_mass),
            ("hook_length", self.hook_length),
            ("flagellum.length", self.flagellum.length),
            ("flagellum.radius", self.flagellum.radius),
            ("flagellum.youngs_modulus", self.flagellum.youngs_modulus),
            ("flagellum.density", self.flagellum.density),
            ("shaft_mass", self.shaft_mass()),
        ];
        for (field, value) in fields {
            if !(value > 0.0 && value.is_finite()) {
                return Err(AssemblyError::NonPositive { link: 0, name: "zodiaq".into(), field, value });
            }
        }
        if !(self.cg_drop >= 0.0) {
            return Err(AssemblyError::NonPositive { link: 0, name: "zodiaq".into(), field: "cg_drop", value: self.cg_drop });
        }
        let nu = self.flagellum.poisson_ratio;
        if !(nu > -1.0 && nu <= 0.5) {
            return Err(AssemblyError::InvalidLink { link: 0, name: "zodiaq".into(), message: format!("flagellum.poisson_ratio {nu} outside (-1, 0.5]") });
        }
        for &m in self.removed_flagella.iter().chain(&self.removed_modules) {
            if !(1..=12).contains(&m) {
                return Err(AssemblyError::InvalidLink { link: 0, name: "zodiaq".into(), message: format!("removed motor M{m} does not exist") });
            }
        }
        if self.quadrature_points == 0 || self.magnus_substeps == 0 {
            return Err(AssemblyError::InvalidLink {
                link: 0,
                name: "zodiaq".into(),
                message: "quadrature_points and magnus_substeps must be at least 1".into(),
            });
        }
        Ok(())
    }
}

/// Hook centreline strain: a circular arc bending the tangent away from
/// the shaft axis by `hook_angle_deg` over `hook_length`.
pub fn hook_strain(p: &ZodiaqParams) -> Vector6<f64> {
    Vector6::new(0.0, p.hook_angle_deg.to_radians() / p.hook_length, 0.0, 1.0, 0.0, 0.0)
}

fn dodecahedron_inertia(mass: f64, a: f64) -> f64 {
    mass * a * a * (95.0 + 39.0 * 5f64.sqrt()) / 300.0
}

fn lift3<T: Real>(v: &Vector3<f64>) -> Vector3<T> {
    v.map(T::of)
}

fn lift_pose<T: Real>(p: &Pose<f64>) -> Pose<T> {
    Pose::new(p.rotation.map(T::of), p.position.map(T::of))
}

/// Builds the drone. Links are ordered shell, then per module shaft, hook
/// and flagellum, so module `i` owns coordinate `6 + 7(i−1)` for the motor
/// and the next six for the flagellum strains.
pub fn assemble_zodiaq<T: Real>(p: &ZodiaqParams) -> Result<Assembly<T>, AssemblyError> {
    p.validate()?;
    let full = links_for(p, &[], &[], Vector3::zeros(), 0.0)?;
    // trim: place the shell's centre of mass so the whole build's CG sits
    // `cg_drop` below its centre of buoyancy, and size the displaced volume
    // for neutral buoyancy
    let asm0: Assembly<f64> = Assembly::new(full)?;
    let (mut moment_m, mut moment_v, mut vol_others) = (Vector3::zeros(), Vector3::zeros(), 0.0);
    let zero = vec![0.0; asm0.dof()];
    sweep(&asm0, &zero, (), |l, site, g, _| {
        let spec = &asm0.links()[l];
        match (&spec.body, site) {
            (LinkBody::Rigid(b), Site::Body) if l != 0 => {
                moment_m += g.transform_point(&b.com) * b.mass;
                moment_v += g.transform_point(&b.buoyancy_center) * b.volume;
                vol_others += b.volume;
            }
            (LinkBody::Soft(r), Site::Point(i)) => {
                let w = asm0.plan(l).expect("plan").points[i].weight;
                let a = r.area();
                moment_m += g.position * (r.density * a * w);
                moment_v += g.position * (a * w);
                vol_others += a * w;
            }
            _ => {}
        }
    });
    let volume_total = p.total_mass / p.trim_density;
    let shell_volume = volume_total - vol_others;
    if shell_volume <= 0.0 {
        return Err(AssemblyError::InvalidLink { link: 0, name: "shell".into(), message: "appendages displace more than the trimmed volume".into() });
    }
    let cb_total = moment_v / volume_total;
    let cg_target = cb_total - Vector3::new(0.0, 0.0, p.cg_drop);
    let shell_com = (cg_target * p.total_mass - moment_m) / p.shell_mass;
    let links = links_for(p, &p.removed_flagella, &p.removed_modules, shell_com, shell_volume)?;
    let ids: Vec<usize> = (1..=12).filter(|m| !p.removed_modules.contains(m)).collect();
    let links = links
        .into_iter()
        .map(|l| LinkSpec { name: l.name, parent: l.parent, joint: lift_joint(&l.joint), attach: lift_pose(&l.attach), body: lift_body(&l.body) })
        .collect();
    Ok(Assembly::new(links)?.with_motors(&ids))
}

fn lift_joint<T: Real>(j: &JointKind<f64>) -> JointKind<T> {
    match j {
        JointKind::Free => JointKind::Free,
        JointKind::Fixed => JointKind::Fixed,
        JointKind::Revolute { axis, actuated } => JointKind::Revolute { axis: lift3(axis), actuated: *actuated },
    }
}

fn lift_body<T: Real>(b: &LinkBody<f64>) -> LinkBody<T> {
    match b {
        LinkBody::Rigid(r) => LinkBody::Rigid(RigidBody {
            mass: T::of(r.mass),
            com: lift3(&r.com),
            inertia: r.inertia.map(T::of),
            volume: T::of(r.volume),
            buoyancy_center: lift3(&r.buoyancy_center),
            tip: lift_pose(&r.tip),
        }),
        LinkBody::Soft(r) => LinkBody::Soft(RodSpec {
            length: T::of(r.length),
            radius: T::of(r.radius),
            youngs_modulus: T::of(r.youngs_modulus),
            shear_modulus: T::of(r.shear_modulus),
            density: T::of(r.density),
            basis: r.basis,
            reference_strain: AffineStrain { constant: r.reference_strain.constant.map(T::of), slope: r.reference_strain.slope.map(T::of) },
            quadrature_points: r.quadrature_points,
            substeps: r.substeps,
        }),
    }
}

fn links_for(
    p: &ZodiaqParams,
    no_flagellum: &[usize],
    no_module: &[usize],
    shell_com: Vector3<f64>,
    shell_volume: f64,
) -> Result<Vec<LinkSpec<f64>>, AssemblyError> {
    let faces = face_table(p.edge_length);
    let i_shell = dodecahedron_inertia(p.shell_mass, p.edge_length);
    let mut links = vec![LinkSpec {
        name: "shell".into(),
        parent: None,
        joint: JointKind::Free,
        attach: Pose::identity(),
        body: LinkBody::Rigid(RigidBody {
            mass: p.shell_mass,
            com: shell_com,
            inertia: Matrix3::identity() * i_shell,
            volume: shell_volume,
            buoyancy_center: Vector3::zeros(),
            tip: Pose::identity(),
        }),
    }];
    let (ms, rs, ls) = (p.shaft_mass(), p.shaft_radius, p.shaft_length);
    let shaft_inertia = Matrix3::from_diagonal(&Vector3::new(0.5 * ms * rs * rs, ms * (3.0 * rs * rs + ls * ls) / 12.0, ms * (3.0 * rs * rs + ls * ls) / 12.0));
    let hook_xi = hook_strain(p);
    let hook_tip = exp_vector(&(hook_xi * p.hook_length));
    let hook_mid = exp_vector(&(hook_xi * (0.5 * p.hook_length))).position;
    let ih = p.hook_mass * p.hook_length * p.hook_length / 12.0;
    let f = &p.flagellum;
    for face in &faces.faces {
        let m = face.motor;
        if no_module.contains(&m) {
            continue;
        }
        let shaft = links.len();
        links.push(LinkSpec {
            name: format!("shaft{m}"),
            parent: Some(0),
            joint: JointKind::Revolute { axis: Vector3::x(), actuated: true },
            attach: face.frame(),
            body: LinkBody::Rigid(RigidBody {
                mass: ms,
                com: Vector3::new(0.5 * ls, 0.0, 0.0),
                inertia: shaft_inertia,
                volume: 0.0,
                buoyancy_center: Vector3::zeros(),
                tip: Pose::from_translation(Vector3::new(ls, 0.0, 0.0)),
            }),
        });
        let hook = links.len();
        links.push(LinkSpec {
            name: format!("hook{m}"),
            parent: Some(shaft),
            joint: JointKind::Fixed,
            attach: Pose::identity(),
            body: LinkBody::Rigid(RigidBody {
                mass: p.hook_mass,
                com: hook_mid,
                inertia: Matrix3::identity() * ih,
                volume: 0.0,
                buoyancy_center: hook_mid,
                tip: hook_tip,
            }),
        });
        if no_flagellum.contains(&m) {
            continue;
        }
        links.push(LinkSpec {
            name: format!("flagellum{m}"),
            parent: Some(hook),
            joint: JointKind::Fixed,
            attach: Pose::identity(),
            body: LinkBody::Soft(RodSpec {
                length: f.length,
                radius: f.radius,
                youngs_modulus: f.youngs_modulus,
                shear_modulus: f.youngs_modulus / (2.0 * (1.0 + f.poisson_ratio)),
                density: f.density,
                basis: StrainBasis::kirchhoff_affine(),
                reference_strain: AffineStrain::straight(),
                quadrature_points: p.quadrature_points,
                substeps: p.magnus_substeps,
            }),
        });
    }
    Ok(links)
}

/// The build with its shell welded to the world frame, for bench tests of
/// the flagella.
pub fn clamped_zodiaq<T: Real>(p: &ZodiaqParams) -> Result<Assembly<T>, AssemblyError> {
    let asm: Assembly<T> = assemble_zodiaq(p)?;
    let ids: Vec<usize> = asm.motors().iter().map(|m| m.id).collect();
    let mut links = asm.links().to_vec();
    links[0].joint = JointKind::Fixed;
    Ok(Assembly::new(links)?.with_motors(&ids))
}
