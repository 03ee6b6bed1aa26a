use nalgebra::{DMatrix, Matrix6, Vector3, Vector6};

use super::assembly::{Assembly, GeneralizedState, JointKind, KinematicsError, LinkBody, MagnusStep, RodPlan};
use crate::real::{Dual, Real};
use crate::se3::{ad, euler_rate_matrix, exp_vector, magnus4, rotation_zyx, stack, tangent_operator, Pose, Twist};

/// Quantity carried along the tree together with the frame pose.
///
/// Every kinematic step either changes frame (`transport` by `Ad⁻¹` of the
/// relative pose) or adds the body twist generated by one coordinate rate.
pub trait Payload<S: Real>: Clone {
    fn transport(&mut self, ad_inv: &Matrix6<S>);

    /// Adds the twist produced by a unit rate of coordinate `dof`.
    fn inject(&mut self, dof: usize, column: &Vector6<S>);

    /// Adds `t·cols[k]` for coordinate `start + k`.
    fn inject_mapped(&mut self, start: usize, t: &Matrix6<S>, cols: &[Vector6<S>]) {
        for (k, c) in cols.iter().enumerate() {
            self.inject(start + k, &(t * c));
        }
    }
}

/// Geometric Jacobian stored by its nonzero columns.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseJacobian<S: Real> {
    pub dofs: Vec<usize>,
    pub columns: Vec<Vector6<S>>,
}

impl<S: Real> Default for SparseJacobian<S> {
    fn default() -> Self {
        Self { dofs: Vec::new(), columns: Vec::new() }
    }
}

impl<S: Real> SparseJacobian<S> {
    pub fn to_dense(&self, n: usize) -> DMatrix<S> {
        let mut j = DMatrix::zeros(6, n);
        for (d, c) in self.dofs.iter().zip(&self.columns) {
            j.fixed_view_mut::<6, 1>(0, *d).copy_from(c);
        }
        j
    }

    pub fn apply(&self, qdot: &[S]) -> Vector6<S> {
        self.dofs.iter().zip(&self.columns).fold(Vector6::zeros(), |acc, (d, c)| acc + c * qdot[*d])
    }
}

impl<S: Real> Payload<S> for SparseJacobian<S> {
    fn transport(&mut self, ad_inv: &Matrix6<S>) {
        for c in &mut self.columns {
            *c = ad_inv * *c;
        }
    }

    fn inject(&mut self, dof: usize, column: &Vector6<S>) {
        match self.dofs.iter().rposition(|&d| d == dof) {
            Some(i) => self.columns[i] += column,
            None => {
                self.dofs.push(dof);
                self.columns.push(*column);
            }
        }
    }
}

/// Body twist accumulated from the coordinate rates.
#[derive(Clone, Debug)]
pub struct BodyTwist<'a, S: Real> {
    pub twist: Vector6<S>,
    pub qdot: &'a [S],
}

impl<'a, S: Real> BodyTwist<'a, S> {
    pub fn new(qdot: &'a [S]) -> Self {
        Self { twist: Vector6::zeros(), qdot }
    }
}

impl<S: Real> Payload<S> for BodyTwist<'_, S> {
    fn transport(&mut self, ad_inv: &Matrix6<S>) {
        self.twist = ad_inv * self.twist;
    }

    fn inject(&mut self, dof: usize, column: &Vector6<S>) {
        self.twist += column * self.qdot[dof];
    }

    fn inject_mapped(&mut self, start: usize, t: &Matrix6<S>, cols: &[Vector6<S>]) {
        let mut rate = Vector6::zeros();
        for (k, c) in cols.iter().enumerate() {
            rate += c * self.qdot[start + k];
        }
        self.twist += t * rate;
    }
}

impl<S: Real> Payload<S> for () {
    fn transport(&mut self, _: &Matrix6<S>) {}
    fn inject(&mut self, _: usize, _: &Vector6<S>) {}
    fn inject_mapped(&mut self, _: usize, _: &Matrix6<S>, _: &[Vector6<S>]) {}
}

/// Where a visited frame sits on its link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    /// Body frame of a rigid link.
    Body,
    /// Quadrature point of a soft link.
    Point(usize),
}

fn lift_pose<T: Real, S: Real + From<T>>(p: &Pose<T>) -> Pose<S> {
    Pose::new(p.rotation.map(<S as From<T>>::from), p.position.map(<S as From<T>>::from))
}

fn lift6<T: Real, S: Real + From<T>>(v: &Vector6<T>) -> Vector6<S> {
    v.map(<S as From<T>>::from)
}

/// Attach transform and joint motion of `link`.
fn enter_link<T, S, P>(asm: &Assembly<T>, link: usize, q: &[S], pose: &mut Pose<S>, pay: &mut P)
where
    T: Real,
    S: Real + From<T>,
    P: Payload<S>,
{
    let spec = &asm.links()[link];
    if spec.attach != Pose::identity() {
        let a: Pose<S> = lift_pose(&spec.attach);
        *pose = pose.compose(&a);
        pay.transport(&a.adjoint_inverse());
    }
    let k = asm.joint_dofs(link).start;
    match &spec.joint {
        JointKind::Fixed => {}
        JointKind::Revolute { axis, .. } => {
            let axis: Vector3<S> = axis.map(<S as From<T>>::from);
            let g = exp_vector(&stack(&(axis * q[k]), &Vector3::zeros()));
            *pose = pose.compose(&g);
            pay.transport(&g.adjoint_inverse());
            pay.inject(k, &stack(&axis, &Vector3::zeros()));
        }
        JointKind::Free => {
            let (roll, pitch, yaw) = (q[k], q[k + 1], q[k + 2]);
            let r = rotation_zyx(roll, pitch, yaw);
            let g = Pose::new(r, Vector3::new(q[k + 3], q[k + 4], q[k + 5]));
            *pose = pose.compose(&g);
            pay.transport(&g.adjoint_inverse());
            let e = euler_rate_matrix(roll, pitch);
            let rt = r.transpose();
            for i in 0..3 {
                pay.inject(k + i, &stack(&e.column(i).into_owned(), &Vector3::zeros()));
            }
            for i in 0..3 {
                pay.inject(k + 3 + i, &stack(&Vector3::zeros(), &rt.column(i).into_owned()));
            }
        }
    }
}

/// Marches a rod through `steps`, calling `out` at quadrature points.
fn march_rod<T, S, P>(
    steps: &[MagnusStep<T>],
    components: &[usize],
    q: &[S],
    start: usize,
    pose: &mut Pose<S>,
    pay: &mut P,
    mut out: impl FnMut(usize, &Pose<S>, &P),
) where
    T: Real,
    S: Real + From<T>,
    P: Payload<S>,
{
    let n = components.len();
    let mut cols = vec![Vector6::<S>::zeros(); n];
    let c = S::of(3.0f64.sqrt() / 12.0);
    for st in steps {
        let h = <S as From<T>>::from(st.h);
        let mut xi1: Vector6<S> = lift6(&st.reference[0]);
        let mut xi2: Vector6<S> = lift6(&st.reference[1]);
        for (k, &comp) in components.iter().enumerate() {
            xi1[comp] += <S as From<T>>::from(st.modes[k][0]) * q[start + k];
            xi2[comp] += <S as From<T>>::from(st.modes[k][1]) * q[start + k];
        }
        let omega = magnus4(&xi1, &xi2, h);
        let e = exp_vector(&omega);
        let t = tangent_operator(&omega);
        *pose = pose.compose(&e);
        pay.transport(&e.adjoint_inverse());
        let (a1, a2) = (ad(&xi1), ad(&xi2));
        let hh = c * h * h;
        for (k, &comp) in components.iter().enumerate() {
            let (m1, m2) = (<S as From<T>>::from(st.modes[k][0]), <S as From<T>>::from(st.modes[k][1]));
            let mut col = (a1.column(comp) * m2 - a2.column(comp) * m1) * hh;
            col[comp] += h * S::of(0.5) * (m1 + m2);
            cols[k] = col;
        }
        pay.inject_mapped(start, &t, &cols);
        if let Some(i) = st.output {
            out(i, pose, pay);
        }
    }
}

/// Visits every rigid body frame and rod quadrature point of the tree, in
/// link order, with its inertial pose and payload.
pub fn sweep<T, S, P>(asm: &Assembly<T>, q: &[S], seed: P, mut visit: impl FnMut(usize, Site, &Pose<S>, &P))
where
    T: Real,
    S: Real + From<T>,
    P: Payload<S>,
{
    let n = asm.link_count();
    let mut distal: Vec<Option<(Pose<S>, P)>> = vec![None; n];
    for l in 0..n {
        let spec = &asm.links()[l];
        let (mut pose, mut pay) = match spec.parent {
            None => (Pose::identity(), seed.clone()),
            Some(p) => {
                let last_child = asm.children(p).last() == Some(&l);
                if last_child {
                    distal[p].take().expect("parent visited first")
                } else {
                    distal[p].clone().expect("parent visited first")
                }
            }
        };
        enter_link(asm, l, q, &mut pose, &mut pay);
        match &spec.body {
            LinkBody::Rigid(b) => {
                visit(l, Site::Body, &pose, &pay);
                if !asm.children(l).is_empty() && b.tip != Pose::identity() {
                    let tip: Pose<S> = lift_pose(&b.tip);
                    pose = pose.compose(&tip);
                    pay.transport(&tip.adjoint_inverse());
                }
            }
            LinkBody::Soft(_) => {
                let plan = asm.plan(l).expect("soft link has a plan");
                let start = asm.rod_dofs(l).start;
                march_rod(&plan.steps, &plan.components, q, start, &mut pose, &mut pay, |i, g, p| visit(l, Site::Point(i), g, p));
            }
        }
        if !asm.children(l).is_empty() {
            distal[l] = Some((pose, pay));
        }
    }
}

/// Walks only the root path to the section at arclength `x` of `link`
/// (ignored for rigid links, which report their body frame).
pub fn sweep_to<T, S, P>(asm: &Assembly<T>, q: &[S], link: usize, x: f64, seed: P) -> Result<(Pose<S>, P), KinematicsError>
where
    T: Real,
    S: Real + From<T>,
    P: Payload<S>,
{
    let spec = asm.link(link)?;
    if let Some(rod) = spec.rod() {
        let length = rod.length.value();
        if !(0.0..=length).contains(&x) {
            return Err(KinematicsError::ArclengthOutOfRange { link, x, length });
        }
    }
    if q.len() != asm.dof() {
        return Err(KinematicsError::StateLength { expected: asm.dof(), got: q.len() });
    }
    let mut pose = Pose::identity();
    let mut pay = seed;
    let path = asm.path(link);
    for (i, &l) in path.iter().enumerate() {
        let last = i + 1 == path.len();
        enter_link(asm, l, q, &mut pose, &mut pay);
        match &asm.links()[l].body {
            LinkBody::Rigid(b) => {
                if !last {
                    let tip: Pose<S> = lift_pose(&b.tip);
                    pose = pose.compose(&tip);
                    pay.transport(&tip.adjoint_inverse());
                }
            }
            LinkBody::Soft(rod) => {
                let plan = asm.plan(l).expect("soft link has a plan");
                let start = asm.rod_dofs(l).start;
                if last {
                    let steps = RodPlan::partial(rod, x);
                    march_rod(&steps, &plan.components, q, start, &mut pose, &mut pay, |_, _, _| {});
                } else {
                    march_rod(&plan.steps, &plan.components, q, start, &mut pose, &mut pay, |_, _, _| {});
                }
            }
        }
    }
    Ok((pose, pay))
}

/// Inertial pose and body twist of a cross-section.
pub fn forward_kinematics<T: Real>(asm: &Assembly<T>, state: &GeneralizedState<T>, link: usize, x: f64) -> Result<(Pose<T>, Twist<T>), KinematicsError> {
    asm.check_state(state)?;
    let (pose, pay) = sweep_to(asm, state.q.as_slice(), link, x, BodyTwist::new(state.qdot.as_slice()))?;
    Ok((pose, Twist::from_vector(&pay.twist)))
}

/// Body-frame geometric Jacobian of a cross-section and its time
/// derivative along `q̇`.
pub fn jacobian<T: Real>(asm: &Assembly<T>, state: &GeneralizedState<T>, link: usize, x: f64) -> Result<(DMatrix<T>, DMatrix<T>), KinematicsError> {
    asm.check_state(state)?;
    let n = asm.dof();
    let (_, j) = sweep_to(asm, state.q.as_slice(), link, x, SparseJacobian::<T>::default())?;
    let qd: Vec<Dual<T>> = state.q.iter().zip(state.qdot.iter()).map(|(&a, &b)| Dual::new(a, b)).collect();
    let (_, jd) = sweep_to(asm, &qd, link, x, SparseJacobian::<Dual<T>>::default())?;
    let jdot = jd.to_dense(n).map(|d| d.eps);
    Ok((j.to_dense(n), jdot))
}

/// Strain `ξ(X) = Φ(X)q + ξ*(X)` of a soft link.
pub fn strain_at<T: Real>(asm: &Assembly<T>, q: &[T], link: usize, x: f64) -> Result<Vector6<T>, KinematicsError> {
    let rod = asm.link(link)?.rod().ok_or(KinematicsError::UnknownLink(link))?;
    let length = rod.length.value();
    if !(0.0..=length).contains(&x) {
        return Err(KinematicsError::ArclengthOutOfRange { link, x, length });
    }
    let start = asm.rod_dofs(link).start;
    let mut xi = rod.reference_strain.at(T::of(x));
    for (k, ((comp, _), v)) in rod.basis.modes().into_iter().zip(rod.basis.values(x, length)).enumerate() {
        xi[comp] += T::of(v) * q[start + k];
    }
    Ok(xi)
}
