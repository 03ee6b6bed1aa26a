//! SE(3) kernel: twists, wrenches, poses, exponentials and adjoints.
//!
//! Six-vectors are ordered `(angular; linear)` throughout, both for twists
//! and for wrenches `(moment; force)`. Poses act on body-frame quantities:
//! a body twist `η` of frame `B` expressed in frame `A` is `Ad_{g_AB} η`.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Below this rotation angle the Rodrigues coefficients use their Taylor series.
pub const SMALL_ROTATION: f64 = 1e-6;
/// Below this angle the tangent-operator coefficients use their Taylor series.
/// They involve higher-order cancellations than the plain exponential.
const SMALL_TANGENT: f64 = 0.05;
/// Rotation drift `‖RᵀR − I‖_F` above which [`Pose::renormalized`] projects.
pub const DRIFT_TOLERANCE: f64 = 1e-9;

/// Screw velocity or strain: angular part first, linear part second.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist<T: Real> {
    pub angular: Vector3<T>,
    pub linear: Vector3<T>,
}

impl<T: Real> Twist<T> {
    pub fn new(angular: Vector3<T>, linear: Vector3<T>) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<T> {
        stack(&self.angular, &self.linear)
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }
}

/// Moment and force pair acting at a frame origin, expressed in that frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench<T: Real> {
    pub moment: Vector3<T>,
    pub force: Vector3<T>,
}

impl<T: Real> Wrench<T> {
    pub fn new(moment: Vector3<T>, force: Vector3<T>) -> Self {
        Self { moment, force }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<T>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned())
    }

    pub fn to_vector(&self) -> Vector6<T> {
        stack(&self.moment, &self.force)
    }

    /// Force applied at `point` (frame coordinates) moved to the frame origin.
    pub fn from_force_at(force: Vector3<T>, point: &Vector3<T>) -> Self {
        Self::new(point.cross(&force), force)
    }

    pub fn is_finite(&self) -> bool {
        self.moment.iter().chain(self.force.iter()).all(|x| x.is_finite())
    }
}

impl<T: Real> std::ops::Add for Wrench<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.moment + o.moment, self.force + o.force)
    }
}

impl<T: Real> std::ops::AddAssign for Wrench<T> {
    fn add_assign(&mut self, o: Self) {
        self.moment += o.moment;
        self.force += o.force;
    }
}

/// Rigid transformation `g = (R, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub position: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Matrix3<T>, position: Vector3<T>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_translation(p: Vector3<T>) -> Self {
        Self::new(Matrix3::identity(), p)
    }

    pub fn from_rotation(r: Matrix3<T>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    /// `self · other`
    #[inline]
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.rotation * other.rotation, self.rotation * other.position + self.position)
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::new(rt, -(rt * self.position))
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.position
    }

    /// `Ad_g = [[R, 0], [p̂R, R]]`.
    pub fn adjoint(&self) -> Matrix6<T> {
        let r = &self.rotation;
        let pr = skew(&self.position) * r;
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&pr);
        ad
    }

    /// `Ad_{g⁻¹}` without forming the inverse pose first.
    pub fn adjoint_inverse(&self) -> Matrix6<T> {
        let rt = self.rotation.transpose();
        let mut ad = Matrix6::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&rt);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(rt * skew(&self.position))));
        ad
    }

    /// `‖RᵀR − I‖_F`
    pub fn rotation_drift(&self) -> T {
        let e = self.rotation.transpose() * self.rotation - Matrix3::identity();
        e.iter().fold(T::zero(), |acc, x| acc + *x * *x).sqrt()
    }

    /// Projects the rotation back onto SO(3) when its drift exceeds
    /// [`DRIFT_TOLERANCE`]. Uses the Newton iteration for the polar factor,
    /// which converges quadratically for nearly orthogonal matrices.
    pub fn renormalized(&self) -> Self {
        if self.rotation_drift() <= T::of(DRIFT_TOLERANCE) {
            return *self;
        }
        let mut r = self.rotation;
        for _ in 0..8 {
            let e = r.transpose() * r - Matrix3::identity();
            r = r * (Matrix3::identity() * T::of(1.5) - (r.transpose() * r) * T::of(0.5));
            if e.iter().all(|x| x.abs() < T::epsilon()) {
                break;
            }
        }
        Self::new(r, self.position)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.position.iter()).all(|x| x.is_finite())
    }
}

impl<T: Real> std::ops::Mul for Pose<T> {
    type Output = Pose<T>;
    fn mul(self, rhs: Pose<T>) -> Pose<T> {
        self.compose(&rhs)
    }
}

#[inline]
pub fn stack<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> Vector6<T> {
    Vector6::new(a[0], a[1], a[2], b[0], b[1], b[2])
}

#[inline]
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z)
}

/// Small adjoint `ad_ξ = [[ω̂, 0], [v̂, ω̂]]`; `ad_ξ η` is the Lie bracket `[ξ, η]`.
pub fn ad<T: Real>(xi: &Vector6<T>) -> Matrix6<T> {
    let w = skew(&xi.fixed_rows::<3>(0).into_owned());
    let v = skew(&xi.fixed_rows::<3>(3).into_owned());
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&v);
    m
}

/// `ad_a b` without forming the matrix.
#[inline]
pub fn bracket<T: Real>(a: &Vector6<T>, b: &Vector6<T>) -> Vector6<T> {
    let (wa, va) = (a.fixed_rows::<3>(0), a.fixed_rows::<3>(3));
    let (wb, vb) = (b.fixed_rows::<3>(0), b.fixed_rows::<3>(3));
    let w = wa.cross(&wb);
    let v = wa.cross(&vb) + va.cross(&wb);
    stack(&w, &v)
}

/// `ad_ξᵀ F`, the coadjoint action appearing in the Euler–Poincaré equations.
#[inline]
pub fn coad<T: Real>(xi: &Vector6<T>, f: &Vector6<T>) -> Vector6<T> {
    let (w, v) = (xi.fixed_rows::<3>(0), xi.fixed_rows::<3>(3));
    let (m, n) = (f.fixed_rows::<3>(0), f.fixed_rows::<3>(3));
    // [[ω̂ᵀ, v̂ᵀ], [0, ω̂ᵀ]] (m; n) = (m×ω + n×v; n×ω)
    let a = m.cross(&w) + n.cross(&v);
    let b = n.cross(&w);
    stack(&a, &b)
}

struct Rodrigues<T> {
    a: T,
    b: T,
    c: T,
}

fn rodrigues<T: Real>(theta_sq: T) -> Rodrigues<T> {
    if theta_sq < T::of(SMALL_ROTATION * SMALL_ROTATION) {
        let t2 = theta_sq;
        Rodrigues {
            a: T::one() - t2 / T::of(6.0) + t2 * t2 / T::of(120.0),
            b: T::of(0.5) - t2 / T::of(24.0) + t2 * t2 / T::of(720.0),
            c: T::of(1.0 / 6.0) - t2 / T::of(120.0) + t2 * t2 / T::of(5040.0),
        }
    } else {
        let t = theta_sq.sqrt();
        let s = t.sin();
        let half = (t * T::of(0.5)).sin();
        Rodrigues { a: s / t, b: T::of(2.0) * half * half / theta_sq, c: (t - s) / (theta_sq * t) }
    }
}

/// Exponential of the screw `scale·ξ`.
pub fn exp_twist<T: Real>(xi: &Twist<T>, scale: T) -> Pose<T> {
    exp_vector(&(xi.to_vector() * scale))
}

/// Exponential of a six-vector `(φ; ρ)`.
pub fn exp_vector<T: Real>(x: &Vector6<T>) -> Pose<T> {
    let phi = x.fixed_rows::<3>(0).into_owned();
    let rho = x.fixed_rows::<3>(3).into_owned();
    let k = rodrigues(phi.dot(&phi));
    let w = skew(&phi);
    let w2 = w * w;
    let i = Matrix3::identity();
    let r = i + w * k.a + w2 * k.b;
    let v = i + w * k.b + w2 * k.c;
    Pose::new(r, v * rho)
}

/// Logarithm of a pose whose rotation angle is below π.
pub fn log_pose<T: Real>(g: &Pose<T>) -> Twist<T> {
    let r = &g.rotation;
    let tr = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let cos_t = ((tr - T::one()) * T::of(0.5)).max(-T::one()).min(T::one());
    let theta = cos_t.acos();
    let vee = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let phi = if theta < T::of(1e-5) { vee * (T::of(0.5) + theta * theta / T::of(12.0)) } else { vee * (theta / (T::of(2.0) * theta.sin())) };
    let w = skew(&phi);
    let t2 = phi.dot(&phi);
    let coef = if t2 < T::of(1e-8) {
        T::of(1.0 / 12.0) + t2 / T::of(720.0)
    } else {
        let t = t2.sqrt();
        {
            let half = (t * T::of(0.5)).sin();
            (T::one() - t * t.sin() / (T::of(4.0) * half * half)) / t2
        }
    };
    let vinv = Matrix3::identity() - w * T::of(0.5) + w * w * coef;
    Twist::new(phi, vinv * g.position)
}

/// Tangent operator `T(Ω) = Σ (−ad_Ω)ᵏ/(k+1)!` so that
/// `exp(Ω)⁻¹ · d/dt exp(Ω) = T(Ω) Ω̇` (body-side derivative of the exponential).
pub fn tangent_operator<T: Real>(omega: &Vector6<T>) -> Matrix6<T> {
    let adm = ad(omega);
    let w = omega.fixed_rows::<3>(0);
    let t2 = w.dot(&w);
    let (f1, f2, f3, f4) = if t2 < T::of(SMALL_TANGENT * SMALL_TANGENT) {
        let t4 = t2 * t2;
        (
            T::of(0.5) - t4 / T::of(720.0) + t4 * t2 / T::of(20160.0),
            T::of(1.0 / 6.0) - t4 / T::of(5040.0) + t4 * t2 / T::of(181440.0),
            T::of(1.0 / 24.0) - t2 / T::of(360.0) + t4 / T::of(13440.0),
            T::of(1.0 / 120.0) - t2 / T::of(2520.0) + t4 / T::of(120960.0),
        )
    } else {
        let t = t2.sqrt();
        let (s, c) = t.sin_cos();
        let two = T::of(2.0);
        let four = T::of(4.0);
        (
            (four - four * c - t * s) / (two * t2),
            (four * t - T::of(5.0) * s + t * c) / (two * t2 * t),
            (two - two * c - t * s) / (two * t2 * t2),
            (two * t - T::of(3.0) * s + t * c) / (two * t2 * t2 * t),
        )
    };
    let ad2 = adm * adm;
    let ad3 = ad2 * adm;
    let ad4 = ad2 * ad2;
    Matrix6::identity() - adm * f1 + ad2 * f2 - ad3 * f3 + ad4 * f4
}

/// Strain field affine in arclength: `ξ(X) = constant + slope·X`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineStrain<T: Real> {
    pub constant: Vector6<T>,
    pub slope: Vector6<T>,
}

impl<T: Real> AffineStrain<T> {
    pub fn constant(xi: Vector6<T>) -> Self {
        Self { constant: xi, slope: Vector6::zeros() }
    }

    /// Straight unstretched rod along the local x axis.
    pub fn straight() -> Self {
        Self::constant(Vector6::new(T::zero(), T::zero(), T::zero(), T::one(), T::zero(), T::zero()))
    }

    #[inline]
    pub fn at(&self, x: T) -> Vector6<T> {
        self.constant + self.slope * x
    }
}

/// Gauss–Legendre abscissae of the two-point rule on the unit interval.
pub fn magnus_nodes<T: Real>() -> (T, T) {
    let d = T::of(3.0f64.sqrt() / 6.0);
    (T::of(0.5) - d, T::of(0.5) + d)
}

/// Fourth-order Magnus generator of one step of length `h` from the strains
/// sampled at the two Gauss nodes.
#[inline]
pub fn magnus4<T: Real>(xi1: &Vector6<T>, xi2: &Vector6<T>, h: T) -> Vector6<T> {
    (xi1 + xi2) * (h * T::of(0.5)) + bracket(xi1, xi2) * (h * h * T::of(3.0f64.sqrt() / 12.0))
}

/// Pose of cross-section `x1` relative to `x0` for `g' = g·ξ̂(X)`.
pub fn exp_varying_strain<T: Real>(field: &AffineStrain<T>, x0: T, x1: T, segments: usize) -> Pose<T> {
    exp_strain_with(|x| field.at(x), x0, x1, segments)
}

/// Same as [`exp_varying_strain`] for an arbitrary strain sampler.
pub fn exp_strain_with<T: Real>(strain: impl Fn(T) -> Vector6<T>, x0: T, x1: T, segments: usize) -> Pose<T> {
    let n = segments.max(1);
    let h = (x1 - x0) / T::of(n as f64);
    let (c1, c2) = magnus_nodes::<T>();
    let mut g = Pose::identity();
    for k in 0..n {
        let a = x0 + h * T::of(k as f64);
        let omega = magnus4(&strain(a + c1 * h), &strain(a + c2 * h), h);
        g = g.compose(&exp_vector(&omega));
    }
    g
}

/// `R = Rz(ψ)·Ry(θ)·Rx(φ)`.
pub fn rotation_zyx<T: Real>(roll: T, pitch: T, yaw: T) -> Matrix3<T> {
    let (sf, cf) = roll.sin_cos();
    let (st, ct) = pitch.sin_cos();
    let (sp, cp) = yaw.sin_cos();
    Matrix3::new(cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf, sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf, -st, ct * sf, ct * cf)
}

/// Maps Euler rates `(φ̇, θ̇, ψ̇)` to body angular velocity.
pub fn euler_rate_matrix<T: Real>(roll: T, pitch: T) -> Matrix3<T> {
    let (sf, cf) = roll.sin_cos();
    let (st, ct) = pitch.sin_cos();
    let z = T::zero();
    Matrix3::new(T::one(), z, -st, z, cf, sf * ct, z, -sf, cf * ct)
}

/// Roll, pitch, yaw of `R = Rz(ψ)·Ry(θ)·Rx(φ)`.
pub fn euler_zyx<T: Real>(r: &Matrix3<T>) -> (T, T, T) {
    let pitch = (-r[(2, 0)]).max(-T::one()).min(T::one()).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = (a + std::f64::consts::PI) % two_pi;
    if x < 0.0 {
        x += two_pi;
    }
    x - std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::Dual;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn max_abs_pose_diff(a: &Pose<f64>, b: &Pose<f64>) -> f64 {
        (a.rotation - b.rotation).abs().max().max((a.position - b.position).abs().max())
    }

    fn random_vec6(rng: &mut ChaCha8Rng, scale: f64) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.random_range(-scale..scale))
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose<f64> {
        exp_vector(&random_vec6(rng, 2.0))
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let g = exp_twist(&Twist::<f64>::zero(), 1.0);
        assert_eq!(g, Pose::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let xi = Twist::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::zeros());
        let g = exp_twist(&xi, 1.0);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(g.rotation, expected, epsilon = 1e-15);
        assert_relative_eq!(g.position, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn screw_exp_matches_fine_step_composition() {
        let xi = Twist::new(Vector3::new(0.0, 0.0, PI / 2.0), Vector3::new(1.0, 0.0, 0.0));
        let step = exp_twist(&xi, 1e-4);
        let mut composed = Pose::identity();
        for _ in 0..10_000 {
            composed = composed.compose(&step);
        }
        let closed = exp_twist(&xi, 1.0);
        assert!(max_abs_pose_diff(&composed, &closed) < 1e-8);
    }

    #[test]
    fn exp_is_one_parameter_subgroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let xi = Twist::from_vector(&random_vec6(&mut rng, 3.0));
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let lhs = exp_twist(&xi, a).compose(&exp_twist(&xi, b));
            assert!(max_abs_pose_diff(&lhs, &exp_twist(&xi, a + b)) < 1e-12);
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        for t in [1e-9, 5e-7, 9.99e-7, 1.01e-6, 1e-5] {
            let x = Vector6::new(t, -0.5 * t, 0.25 * t, 0.3, -0.2, 1.0);
            let g = exp_vector(&x);
            // against the unconditionally closed form evaluated in extended steps
            let mut ref_pose = Pose::identity();
            let step = exp_vector(&(x / 1000.0));
            for _ in 0..1000 {
                ref_pose = ref_pose.compose(&step);
            }
            assert!(max_abs_pose_diff(&g, &ref_pose) < 1e-12, "t={t} {}", max_abs_pose_diff(&g, &ref_pose));
        }
    }

    #[test]
    fn translation_adjoint_maps_x_rotation_to_y_velocity() {
        let g = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let ad = g.adjoint();
        let twist = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let out = ad * twist;
        assert_relative_eq!(out, Vector6::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!(Pose::<f64>::identity().adjoint(), Matrix6::identity());
    }

    #[test]
    fn adjoint_is_a_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (g1, g2) = (random_pose(&mut rng), random_pose(&mut rng));
            let lhs = g1.compose(&g2).adjoint();
            let rhs = g1.adjoint() * g2.adjoint();
            assert!((lhs - rhs).abs().max() < 1e-12);
            assert!((g1.adjoint_inverse() - g1.inverse().adjoint()).abs().max() < 1e-13);
        }
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut x = random_vec6(&mut rng, 2.0);
            let w = x.fixed_rows::<3>(0).norm();
            if w >= PI - 0.1 {
                let s = (PI - 0.1) * rng.random_range(0.0..1.0) / w;
                x.fixed_rows_mut::<3>(0).scale_mut(s);
            }
            let back = log_pose(&exp_vector(&x)).to_vector();
            assert!((back - x).abs().max() < 1e-10, "{x:?} -> {back:?}");
        }
        let tiny = Vector6::new(1e-9, 0.0, -2e-9, 0.1, 0.2, 0.3);
        assert!((log_pose(&exp_vector(&tiny)).to_vector() - tiny).abs().max() < 1e-14);
    }

    #[test]
    fn long_composition_chain_keeps_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Pose::identity();
        for _ in 0..10_000 {
            g = g.compose(&exp_vector(&random_vec6(&mut rng, 0.3))).renormalized();
        }
        assert!(g.rotation_drift() < 1e-8);
        assert!((g.rotation.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn renormalization_projects_perturbed_rotation() {
        let mut g = exp_vector(&Vector6::new(0.3, -0.2, 0.9, 0.0, 0.0, 0.0));
        g.rotation[(0, 1)] += 1e-6;
        g.rotation[(2, 0)] -= 2e-6;
        let r = g.renormalized();
        assert!(r.rotation_drift() < 1e-14);
        assert!((r.rotation - g.rotation).abs().max() < 1e-5);
    }

    #[test]
    fn tangent_operator_matches_derivative_of_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cases = [
            random_vec6(&mut rng, 1.5),
            random_vec6(&mut rng, 0.01),
            Vector6::new(0.0, 0.0, 0.0, 1.0, 0.5, 0.0),
            Vector6::new(0.04, -0.03, 0.0, 0.2, 0.1, -0.7),
            Vector6::new(0.06, -0.03, 0.0, 0.2, 0.1, -0.7),
        ];
        for omega in cases {
            let dir = random_vec6(&mut rng, 1.0);
            // exact directional derivative through dual numbers
            let od: Vector6<Dual<f64>> = Vector6::from_fn(|i, _| Dual::new(omega[i], dir[i]));
            let gd = exp_vector(&od);
            let g = exp_vector(&omega);
            let rdot = gd.rotation.map(|x| x.eps);
            let pdot = gd.position.map(|x| x.eps);
            // body velocity g⁻¹ ġ
            let rt = g.rotation.transpose();
            let wb = rt * rdot;
            let body = Vector6::new(wb[(2, 1)], wb[(0, 2)], wb[(1, 0)], 0.0, 0.0, 0.0);
            let vb = rt * pdot;
            let body = Vector6::new(body[0], body[1], body[2], vb[0], vb[1], vb[2]);
            let predicted = tangent_operator(&omega) * dir;
            assert!((body - predicted).abs().max() < 1e-12, "{omega:?}: {body:?} vs {predicted:?}");
        }
    }

    #[test]
    fn varying_strain_reduces_to_exp_for_constant_field() {
        let xi = Vector6::new(0.3, -1.2, 2.0, 1.0, 0.1, -0.05);
        let g = exp_varying_strain(&AffineStrain::constant(xi), 0.2, 0.9, 7);
        let e = exp_vector(&(xi * 0.7));
        assert!(max_abs_pose_diff(&g, &e) < 1e-14);
    }

    #[test]
    fn zero_strain_with_axial_direction_translates_along_x() {
        let g = exp_varying_strain(&AffineStrain::<f64>::straight(), 0.1, 0.35, 3);
        assert_relative_eq!(g.rotation, Matrix3::identity(), epsilon = 1e-15);
        assert_relative_eq!(g.position, Vector3::new(0.25, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn varying_strain_matches_fine_piecewise_composition() {
        // κ_y(X) = X on [0, 1]
        let field = AffineStrain { constant: Vector6::new(0.0, 0.0, 0.0, 1.0, 0.0, 0.0), slope: Vector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 0.0) };
        let n = 100_000;
        let h = 1.0 / n as f64;
        let mut oracle = Pose::identity();
        for k in 0..n {
            let mid = (k as f64 + 0.5) * h;
            oracle = oracle.compose(&exp_vector(&(field.at(mid) * h)));
        }
        let g = exp_varying_strain(&field, 0.0, 1.0, 16);
        assert!(max_abs_pose_diff(&g, &oracle) < 1e-7, "{}", max_abs_pose_diff(&g, &oracle));
        // fourth-order convergence: halving the step divides the error by ~16
        let coarse = exp_varying_strain(&field, 0.0, 1.0, 8);
        let ratio = max_abs_pose_diff(&coarse, &oracle) / max_abs_pose_diff(&g, &oracle);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn euler_round_trip_and_rates() {
        let (f, t, p) = (0.2, -0.4, 2.5);
        let r = rotation_zyx(f, t, p);
        let (f2, t2, p2) = euler_zyx(&r);
        assert_relative_eq!(f, f2, epsilon = 1e-14);
        assert_relative_eq!(t, t2, epsilon = 1e-14);
        assert_relative_eq!(p, p2, epsilon = 1e-14);
        // body angular velocity from finite differences of R
        let rates = Vector3::new(0.3, -0.7, 1.1);
        let h = 1e-6;
        let rp = rotation_zyx(f + h * rates[0], t + h * rates[1], p + h * rates[2]);
        let rm = rotation_zyx(f - h * rates[0], t - h * rates[1], p - h * rates[2]);
        let wb = r.transpose() * (rp - rm) / (2.0 * h);
        let w = Vector3::new(wb[(2, 1)], wb[(0, 2)], wb[(1, 0)]);
        assert!((w - euler_rate_matrix(f, t) * rates).abs().max() < 1e-8);
    }

    #[test]
    fn coad_matches_transpose_of_ad() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xi = random_vec6(&mut rng, 1.0);
        let f = random_vec6(&mut rng, 1.0);
        assert!((coad(&xi, &f) - ad(&xi).transpose() * f).abs().max() < 1e-15);
        assert!((bracket(&xi, &f) - ad(&xi) * f).abs().max() < 1e-15);
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(-3.0 * PI / 2.0), PI / 2.0, epsilon = 1e-15);
        assert_relative_eq!(wrap_angle(0.1), 0.1);
    }
}
