use nalgebra::{DMatrix, DVector};

use super::{Drive, DynamicsError, Model};
use crate::kinematics::{GeneralizedState, JointKind};

impl Model<f64> {
    /// Static generalized force on the free coordinates at rest.
    pub fn static_residual(&self, q: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        let zero = vec![0.0; q.len()];
        let e = self.evaluate(q.as_slice(), &zero, &Drive::idle(&self.asm), 0.0)?;
        Ok(DVector::from_iterator(self.asm.free().len(), self.asm.free().iter().map(|&k| e.force[k])))
    }

    /// Rest configuration near `guess` by damped Newton iteration with a
    /// finite-difference Jacobian. Root yaw and horizontal position are
    /// neutral directions in uniform water and stay at their guessed values,
    /// as does depth, which is neutral for a trimmed build.
    pub fn equilibrium(&self, guess: &GeneralizedState<f64>, tolerance: f64) -> Result<GeneralizedState<f64>, DynamicsError> {
        self.check(guess)?;
        let neutral: &[usize] = match self.asm.links()[0].joint {
            JointKind::Free => &[2, 3, 4, 5],
            _ => &[],
        };
        let unknowns: Vec<usize> = self.asm.free().iter().copied().filter(|k| !neutral.contains(k)).collect();
        let rows: Vec<usize> = self.asm.free().iter().enumerate().filter(|(_, k)| !neutral.contains(k)).map(|(i, _)| i).collect();
        let pick = |r: &DVector<f64>| DVector::from_iterator(rows.len(), rows.iter().map(|&i| r[i]));
        let mut q = guess.q.clone();
        let mut r = pick(&self.static_residual(&q)?);
        for _ in 0..50 {
            if r.amax() <= tolerance {
                return Ok(GeneralizedState { q, qdot: DVector::zeros(guess.q.len()) });
            }
            let mut jac = DMatrix::zeros(rows.len(), unknowns.len());
            for (c, &k) in unknowns.iter().enumerate() {
                let h = 1e-6 * (1.0 + q[k].abs());
                let mut qp = q.clone();
                qp[k] += h;
                let mut qm = q.clone();
                qm[k] -= h;
                let d = (pick(&self.static_residual(&qp)?) - pick(&self.static_residual(&qm)?)) / (2.0 * h);
                jac.set_column(c, &d);
            }
            let step = jac.lu().solve(&(-&r)).ok_or_else(|| DynamicsError::Diverged {
                t: 0.0,
                reason: "singular static stiffness".into(),
                state: q.iter().copied().collect(),
            })?;
            let norm = r.norm();
            let mut alpha = 1.0;
            loop {
                let mut trial = q.clone();
                for (c, &k) in unknowns.iter().enumerate() {
                    trial[k] += alpha * step[c];
                }
                let rt = pick(&self.static_residual(&trial)?);
                if rt.norm() < norm || alpha < 1e-3 {
                    q = trial;
                    r = rt;
                    break;
                }
                alpha *= 0.5;
            }
        }
        Err(DynamicsError::Diverged { t: 0.0, reason: format!("static equilibrium not found (residual {:e})", r.amax()), state: q.iter().copied().collect() })
    }
}
