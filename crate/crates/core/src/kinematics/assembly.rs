use std::ops::Range;

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{gauss_legendre, legendre, ArrowPartition};
use crate::real::Real;
use crate::se3::{magnus_nodes, skew, AffineStrain, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("link {link} ({name}): {field} must be positive, got {value}")]
    NonPositive { link: usize, name: String, field: &'static str, value: f64 },
    #[error("link {link} ({name}): {message}")]
    InvalidLink { link: usize, name: String, message: String },
    #[error("link {link} references parent {parent} which does not precede it")]
    ParentOrder { link: usize, parent: usize },
    #[error("assembly must have exactly one root link, found {0}")]
    Roots(usize),
    #[error("assembly is empty")]
    Empty,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("unknown link id {0}")]
    UnknownLink(usize),
    #[error("arclength {x} outside [0, {length}] on link {link}")]
    ArclengthOutOfRange { link: usize, x: f64, length: f64 },
    #[error("state has {got} coordinates, assembly has {expected}")]
    StateLength { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum JointKind<T: Real> {
    /// Six coordinates `[φ, θ, ψ, x, y, z]`, pose `(Rz(ψ)Ry(θ)Rx(φ), p)`.
    Free,
    Revolute {
        axis: Vector3<T>,
        actuated: bool,
    },
    Fixed,
}

impl<T: Real> JointKind<T> {
    pub fn dof(&self) -> usize {
        match self {
            JointKind::Free => 6,
            JointKind::Revolute { .. } => 1,
            JointKind::Fixed => 0,
        }
    }
}

/// Rigid body with mass properties and the data the hydrostatics need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidBody<T: Real> {
    pub mass: T,
    /// Centre of mass in the body frame.
    pub com: Vector3<T>,
    /// Rotational inertia about the centre of mass, body axes.
    pub inertia: Matrix3<T>,
    /// Displaced volume.
    pub volume: T,
    pub buoyancy_center: Vector3<T>,
    /// Frame where children attach, relative to the body frame.
    pub tip: Pose<T>,
}

impl<T: Real> RigidBody<T> {
    /// 6×6 spatial inertia about the body origin in `(angular; linear)` order.
    pub fn spatial_inertia(&self) -> Matrix6<T> {
        let c = skew(&self.com);
        let m = self.mass;
        let mut out = Matrix6::zeros();
        out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(self.inertia - c * c * m));
        out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * m));
        out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-c * m));
        out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
        out
    }
}

/// Polynomial order per strain component; `None` freezes the component at
/// its reference value. Order `k` contributes `k + 1` Legendre modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrainBasis {
    pub orders: [Option<usize>; 6],
}

impl StrainBasis {
    /// Torsion and both bendings, each affine in arclength.
    pub fn kirchhoff_affine() -> Self {
        Self { orders: [Some(1), Some(1), Some(1), None, None, None] }
    }

    pub fn dof(&self) -> usize {
        self.orders.iter().flatten().map(|k| k + 1).sum()
    }

    /// `(component, order)` of every mode, in coordinate order.
    pub fn modes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (c, o) in self.orders.iter().enumerate() {
            if let Some(o) = o {
                for k in 0..=*o {
                    out.push((c, k));
                }
            }
        }
        out
    }

    /// Mode values at arclength `x` of a rod of length `length`.
    pub fn values(&self, x: f64, length: f64) -> Vec<f64> {
        let s = 2.0 * x / length - 1.0;
        self.modes().iter().map(|&(_, k)| legendre(k, s)).collect()
    }
}

/// Soft Cosserat link. Unconstrained strain components stay at the
/// reference, so a Kirchhoff basis keeps the rod inextensible and unsheared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RodSpec<T: Real> {
    pub length: T,
    pub radius: T,
    pub youngs_modulus: T,
    pub shear_modulus: T,
    pub density: T,
    pub basis: StrainBasis,
    pub reference_strain: AffineStrain<T>,
    pub quadrature_points: usize,
    /// Magnus steps between consecutive quadrature points.
    pub substeps: usize,
}

impl<T: Real> RodSpec<T> {
    pub fn area(&self) -> T {
        T::of(std::f64::consts::PI) * self.radius * self.radius
    }

    /// Second moment of area of the circular section.
    pub fn second_moment(&self) -> T {
        T::of(std::f64::consts::PI) * self.radius.powi(4) / T::of(4.0)
    }

    /// Section stiffness `diag(GJ, EI, EI, EA, GA, GA)`.
    pub fn section_stiffness(&self) -> Vector6<T> {
        let (a, i) = (self.area(), self.second_moment());
        let (e, g) = (self.youngs_modulus, self.shear_modulus);
        Vector6::new(g * i * T::of(2.0), e * i, e * i, e * a, g * a, g * a)
    }

    /// Section inertia per unit length `ρ·diag(J, I, I, A, A, A)`.
    pub fn section_inertia(&self) -> Matrix6<T> {
        let (a, i, r) = (self.area(), self.second_moment(), self.density);
        Matrix6::from_diagonal(&Vector6::new(r * i * T::of(2.0), r * i, r * i, r * a, r * a, r * a))
    }

    pub fn mass(&self) -> T {
        self.density * self.area() * self.length
    }

    pub fn volume(&self) -> T {
        self.area() * self.length
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LinkBody<T: Real> {
    Rigid(RigidBody<T>),
    Soft(RodSpec<T>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec<T: Real> {
    pub name: String,
    pub parent: Option<usize>,
    pub joint: JointKind<T>,
    /// Joint base relative to the parent's distal frame.
    pub attach: Pose<T>,
    pub body: LinkBody<T>,
}

impl<T: Real> LinkSpec<T> {
    pub fn rod(&self) -> Option<&RodSpec<T>> {
        match &self.body {
            LinkBody::Soft(r) => Some(r),
            LinkBody::Rigid(_) => None,
        }
    }

    pub fn rigid(&self) -> Option<&RigidBody<T>> {
        match &self.body {
            LinkBody::Rigid(b) => Some(b),
            LinkBody::Soft(_) => None,
        }
    }
}

/// One Magnus step of a rod plan.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnusStep<T: Real> {
    pub h: T,
    /// Reference strain at the two Gauss nodes.
    pub reference: [Vector6<T>; 2],
    /// Mode values at the two Gauss nodes.
    pub modes: Vec<[T; 2]>,
    /// Quadrature point reached at the end of this step.
    pub output: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraturePoint<T: Real> {
    pub x: T,
    pub weight: T,
    pub modes: Vec<T>,
}

/// Precomputed marching schedule of a rod: Magnus steps from the base to
/// the tip passing through every quadrature point.
#[derive(Clone, Debug, PartialEq)]
pub struct RodPlan<T: Real> {
    pub steps: Vec<MagnusStep<T>>,
    pub points: Vec<QuadraturePoint<T>>,
    /// Mode components, one per rod coordinate.
    pub components: Vec<usize>,
}

impl<T: Real> RodPlan<T> {
    pub fn new(rod: &RodSpec<T>) -> Self {
        let l = rod.length.value();
        let (xs, ws) = gauss_legendre(rod.quadrature_points.max(1));
        let points: Vec<QuadraturePoint<T>> = xs
            .iter()
            .zip(&ws)
            .map(|(&s, &w)| {
                let x = 0.5 * l * (s + 1.0);
                QuadraturePoint { x: T::of(x), weight: T::of(0.5 * l * w), modes: to_t(&rod.basis.values(x, l)) }
            })
            .collect();
        let mut breaks: Vec<(f64, Option<usize>)> = vec![(0.0, None)];
        breaks.extend(xs.iter().enumerate().map(|(i, &s)| (0.5 * l * (s + 1.0), Some(i))));
        breaks.push((l, None));
        Self { steps: march(rod, &breaks), points, components: rod.basis.modes().iter().map(|m| m.0).collect() }
    }

    /// Steps from the base to arclength `x`, sharing breakpoints with the
    /// full plan so results at quadrature points are identical.
    pub fn partial(rod: &RodSpec<T>, x: f64) -> Vec<MagnusStep<T>> {
        let l = rod.length.value();
        let (xs, _) = gauss_legendre(rod.quadrature_points.max(1));
        let mut breaks: Vec<(f64, Option<usize>)> = vec![(0.0, None)];
        breaks.extend(xs.iter().map(|&s| (0.5 * l * (s + 1.0), None)).filter(|b| b.0 < x));
        breaks.push((x, None));
        march(rod, &breaks)
    }
}

fn to_t<T: Real>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn march<T: Real>(rod: &RodSpec<T>, breaks: &[(f64, Option<usize>)]) -> Vec<MagnusStep<T>> {
    let l = rod.length.value();
    let n = rod.substeps.max(1);
    let (c1, c2) = magnus_nodes::<f64>();
    let mut steps = Vec::new();
    for w in breaks.windows(2) {
        let (a, b) = (w[0].0, w[1].0);
        if b <= a {
            continue;
        }
        let h = (b - a) / n as f64;
        for k in 0..n {
            let x0 = a + h * k as f64;
            let (x1, x2) = (x0 + c1 * h, x0 + c2 * h);
            let v1 = rod.basis.values(x1, l);
            let v2 = rod.basis.values(x2, l);
            steps.push(MagnusStep {
                h: T::of(h),
                reference: [rod.reference_strain.at(T::of(x1)), rod.reference_strain.at(T::of(x2))],
                modes: v1.iter().zip(&v2).map(|(&p, &q)| [T::of(p), T::of(q)]).collect(),
                output: if k + 1 == n { w[1].1 } else { None },
            });
        }
    }
    steps
}

/// Actuated revolute joint driving module `id` (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotorSlot {
    pub id: usize,
    pub link: usize,
    pub dof: usize,
}

/// Generalized coordinates and velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedState<T: Real> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
}

impl<T: Real> GeneralizedState<T> {
    pub fn zeros(n: usize) -> Self {
        Self { q: DVector::zeros(n), qdot: DVector::zeros(n) }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Immutable kinematic tree. Links are stored parents first.
#[derive(Clone, Debug)]
pub struct Assembly<T: Real> {
    links: Vec<LinkSpec<T>>,
    joint_dofs: Vec<Range<usize>>,
    rod_dofs: Vec<Range<usize>>,
    plans: Vec<Option<RodPlan<T>>>,
    children: Vec<Vec<usize>>,
    ndof: usize,
    prescribed: Vec<usize>,
    free: Vec<usize>,
    partition: ArrowPartition,
    motors: Vec<MotorSlot>,
}

impl<T: Real> Assembly<T> {
    pub fn new(links: Vec<LinkSpec<T>>) -> Result<Self, AssemblyError> {
        if links.is_empty() {
            return Err(AssemblyError::Empty);
        }
        let roots = links.iter().filter(|l| l.parent.is_none()).count();
        if roots != 1 || links[0].parent.is_some() {
            return Err(AssemblyError::Roots(roots));
        }
        let mut children = vec![Vec::new(); links.len()];
        for (i, l) in links.iter().enumerate() {
            if let Some(p) = l.parent {
                if p >= i {
                    return Err(AssemblyError::ParentOrder { link: i, parent: p });
                }
                children[p].push(i);
            }
            validate_link(i, l)?;
        }
        let mut ndof = 0;
        let mut joint_dofs = Vec::with_capacity(links.len());
        let mut rod_dofs = Vec::with_capacity(links.len());
        let mut plans = Vec::with_capacity(links.len());
        let mut prescribed = Vec::new();
        for l in &links {
            let j = l.joint.dof();
            joint_dofs.push(ndof..ndof + j);
            if let JointKind::Revolute { actuated: true, .. } = l.joint {
                prescribed.push(ndof);
            }
            ndof += j;
            let r = l.rod().map_or(0, |r| r.basis.dof());
            rod_dofs.push(ndof..ndof + r);
            ndof += r;
            plans.push(l.rod().map(RodPlan::new));
        }
        let free: Vec<usize> = (0..ndof).filter(|k| !prescribed.contains(k)).collect();
        let mut asm = Self { links, joint_dofs, rod_dofs, plans, children, ndof, prescribed, free, partition: ArrowPartition::default(), motors: Vec::new() };
        asm.partition = asm.arrow_partition();
        Ok(asm)
    }

    /// Registers motor ids for actuated joints, in link order.
    pub fn with_motors(mut self, ids: &[usize]) -> Self {
        let slots: Vec<(usize, usize)> = self
            .links
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.joint, JointKind::Revolute { actuated: true, .. }))
            .map(|(i, _)| (i, self.joint_dofs[i].start))
            .collect();
        self.motors = ids.iter().zip(slots).map(|(&id, (link, dof))| MotorSlot { id, link, dof }).collect();
        self
    }

    fn arrow_partition(&self) -> ArrowPartition {
        let pos = |k: usize| self.free.binary_search(&k).ok();
        let mut root: Vec<usize> = self.link_dofs(0).filter_map(pos).collect();
        let mut branches = Vec::new();
        for &c in &self.children[0] {
            let mut b = Vec::new();
            let mut stack = vec![c];
            while let Some(l) = stack.pop() {
                b.extend(self.link_dofs(l).filter_map(pos));
                stack.extend(self.children[l].iter().copied());
            }
            b.sort_unstable();
            if !b.is_empty() {
                branches.push(b);
            }
        }
        root.sort_unstable();
        ArrowPartition { root, branches }
    }

    pub fn links(&self) -> &[LinkSpec<T>] {
        &self.links
    }

    pub fn link(&self, id: usize) -> Result<&LinkSpec<T>, KinematicsError> {
        self.links.get(id).ok_or(KinematicsError::UnknownLink(id))
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn dof(&self) -> usize {
        self.ndof
    }

    pub fn joint_dofs(&self, link: usize) -> Range<usize> {
        self.joint_dofs[link].clone()
    }

    pub fn rod_dofs(&self, link: usize) -> Range<usize> {
        self.rod_dofs[link].clone()
    }

    /// Joint and rod coordinates of a link.
    pub fn link_dofs(&self, link: usize) -> Range<usize> {
        self.joint_dofs[link].start..self.rod_dofs[link].end
    }

    pub fn plan(&self, link: usize) -> Option<&RodPlan<T>> {
        self.plans[link].as_ref()
    }

    pub fn children(&self, link: usize) -> &[usize] {
        &self.children[link]
    }

    pub fn prescribed(&self) -> &[usize] {
        &self.prescribed
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    /// Block structure of the free-coordinate mass matrix.
    pub fn partition(&self) -> &ArrowPartition {
        &self.partition
    }

    pub fn motors(&self) -> &[MotorSlot] {
        &self.motors
    }

    pub fn motor(&self, id: usize) -> Option<&MotorSlot> {
        self.motors.iter().find(|m| m.id == id)
    }

    /// Links from the root down to `link`, inclusive.
    pub fn path(&self, link: usize) -> Vec<usize> {
        let mut out = vec![link];
        let mut l = link;
        while let Some(p) = self.links[l].parent {
            out.push(p);
            l = p;
        }
        out.reverse();
        out
    }

    /// Coordinates that can move the given link.
    pub fn path_dofs(&self, link: usize) -> Vec<usize> {
        self.path(link).into_iter().flat_map(|l| self.link_dofs(l)).collect()
    }

    /// Stiffness block of a rod: `∫ Φᵀ Σ Φ dX` by the rod's quadrature,
    /// exact for polynomial bases up to the quadrature's degree.
    pub fn rod_stiffness(&self, link: usize) -> Option<nalgebra::DMatrix<T>> {
        let rod = self.links[link].rod()?;
        let plan = self.plans[link].as_ref()?;
        let sigma = rod.section_stiffness();
        let n = plan.components.len();
        let mut k = nalgebra::DMatrix::zeros(n, n);
        for p in &plan.points {
            for i in 0..n {
                for j in 0..n {
                    if plan.components[i] == plan.components[j] {
                        k[(i, j)] += p.weight * sigma[plan.components[i]] * p.modes[i] * p.modes[j];
                    }
                }
            }
        }
        Some(k)
    }

    pub fn check_state(&self, state: &GeneralizedState<T>) -> Result<(), KinematicsError> {
        for len in [state.q.len(), state.qdot.len()] {
            if len != self.ndof {
                return Err(KinematicsError::StateLength { expected: self.ndof, got: len });
            }
        }
        Ok(())
    }

    pub fn total_mass(&self) -> T {
        self.links
            .iter()
            .map(|l| match &l.body {
                LinkBody::Rigid(b) => b.mass,
                LinkBody::Soft(r) => r.mass(),
            })
            .fold(T::zero(), |a, b| a + b)
    }
}

fn validate_link<T: Real>(i: usize, l: &LinkSpec<T>) -> Result<(), AssemblyError> {
    let positive = |field: &'static str, v: T| {
        if v > T::zero() && v.is_finite() {
            Ok(())
        } else {
            Err(AssemblyError::NonPositive { link: i, name: l.name.clone(), field, value: v.value() })
        }
    };
    let invalid = |message: &str| AssemblyError::InvalidLink { link: i, name: l.name.clone(), message: message.into() };
    if let JointKind::Revolute { axis, .. } = &l.joint {
        let n = axis.dot(axis).sqrt();
        if (n - T::one()).abs() > T::of(1e-9) {
            return Err(invalid("revolute axis must be a unit vector"));
        }
    }
    match &l.body {
        LinkBody::Rigid(b) => {
            positive("mass", b.mass)?;
            if b.volume < T::zero() {
                return Err(invalid("volume must be non-negative"));
            }
            let m = b.spatial_inertia();
            let sym = (m - m.transpose()).iter().all(|x| x.abs() < T::of(1e-12));
            if !sym || crate::linalg::Cholesky::new(&nalgebra::DMatrix::from_iterator(6, 6, m.iter().copied())).is_err() {
                return Err(invalid("inertia must be symmetric positive definite"));
            }
        }
        LinkBody::Soft(r) => {
            positive("length", r.length)?;
            positive("radius", r.radius)?;
            positive("youngs_modulus", r.youngs_modulus)?;
            positive("shear_modulus", r.shear_modulus)?;
            positive("density", r.density)?;
            if r.basis.dof() == 0 {
                return Err(invalid("strain basis has no modes"));
            }
            if r.quadrature_points == 0 {
                return Err(invalid("rod needs at least one quadrature point"));
            }
        }
    }
    Ok(())
}
