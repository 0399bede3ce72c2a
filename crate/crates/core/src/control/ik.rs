use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3, Vector3};
use thiserror::Error;

use crate::kindyn::{frame_jacobian, frame_pose, Configuration, KinDynError};
use crate::model::{JointLimits, RobotModel};

/// Residual above which a failed solve counts as out of reach.
pub const UNREACHABLE_RESIDUAL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IkError {
    #[error("no convergence; best residual {best_residual:e} m")]
    NoConvergence { best_residual: f64, best_q: DVector<f64> },
    #[error("target unreachable; best residual {best_residual:e} m")]
    Unreachable { best_residual: f64, best_q: DVector<f64> },
    #[error("seed for joint `{0}` lies outside its limits")]
    SeedOutOfLimits(String),
    #[error(transparent)]
    KinDyn(#[from] KinDynError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    /// Position residual for success, metres.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Damping λ of the least-squares step.
    pub damping: f64,
    /// Largest joint-space step per iteration, radians (or metres).
    pub max_step: f64,
    /// Extra attempts from spread-out seeds when the given seed ends in a
    /// local minimum. The seed sequence is fixed, so results are repeatable.
    pub restarts: usize,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 500, damping: 1e-3, max_step: 0.5, restarts: 8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Position-only IK by damped least squares,
/// `Δq = Jᵀ(JJᵀ + λ²I)⁻¹(target − FK(q))`, with joint limits enforced by
/// clamping after every step. A floating base is held at the origin.
/// Iterations count within the successful attempt only.
pub fn ik_position(
    model: &RobotModel,
    target: &Vector3<f64>,
    frame: &str,
    seed: &DVector<f64>,
    opts: &IkOptions,
) -> Result<IkSolution, IkError> {
    if seed.len() != model.nq() {
        return Err(KinDynError::DimensionMismatch { what: "seed", expected: model.nq(), got: seed.len() }.into());
    }
    let limits = model.dof_limits();
    for (i, l) in limits.iter().enumerate() {
        if !(seed[i] >= l.lower && seed[i] <= l.upper) {
            return Err(IkError::SeedOutOfLimits(model.dof_joint(i).name.clone()));
        }
    }
    let mut best = (f64::INFINITY, seed.clone());
    for attempt in 0..=opts.restarts {
        let start = if attempt == 0 { seed.clone() } else { restart_seed(&limits, attempt) };
        match descend(model, target, frame, start, opts, &limits)? {
            Ok(sol) => return Ok(sol),
            Err((residual, q)) if residual < best.0 => best = (residual, q),
            Err(_) => {}
        }
    }
    let (best_residual, best_q) = best;
    if best_residual > UNREACHABLE_RESIDUAL {
        Err(IkError::Unreachable { best_residual, best_q })
    } else {
        Err(IkError::NoConvergence { best_residual, best_q })
    }
}

/// Additive-recurrence point `k` inside the limits (capped to ±π).
fn restart_seed(limits: &[JointLimits], k: usize) -> DVector<f64> {
    const STRIDES: [f64; 8] =
        [0.414_213_56, 0.732_050_81, 0.236_067_98, 0.645_751_31, 0.316_624_79, 0.605_551_28, 0.123_105_63, 0.358_898_94];
    DVector::from_iterator(
        limits.len(),
        limits.iter().enumerate().map(|(i, l)| {
            let (lo, hi) = (l.lower.max(-PI), l.upper.min(PI));
            let u = (0.5 + k as f64 * STRIDES[i % STRIDES.len()]).fract();
            lo + u * (hi - lo)
        }),
    )
}

type Descent = Result<IkSolution, (f64, DVector<f64>)>;

fn descend(
    model: &RobotModel,
    target: &Vector3<f64>,
    frame: &str,
    seed: DVector<f64>,
    opts: &IkOptions,
    limits: &[JointLimits],
) -> Result<Descent, IkError> {
    let nb = model.base_dofs();
    let lambda2 = opts.damping * opts.damping;
    let mut conf = Configuration::fixed(seed.clone());
    let mut best = (f64::INFINITY, seed);
    for iter in 0..=opts.max_iters {
        let err = target - frame_pose(model, &conf, frame)?.translation.vector;
        let residual = err.norm();
        if residual < best.0 {
            best = (residual, conf.q.clone());
        }
        if residual < opts.tolerance {
            return Ok(Ok(IkSolution { q: conf.q, residual, iterations: iter }));
        }
        if iter == opts.max_iters {
            break;
        }
        let j = frame_jacobian(model, &conf, frame)?.view((0, nb), (3, model.nq())).into_owned();
        let jjt: Matrix3<f64> = (&j * j.transpose()).fixed_view::<3, 3>(0, 0).into_owned() + Matrix3::identity() * lambda2;
        let Some(y) = jjt.cholesky().map(|c| c.solve(&err)) else { break };
        let mut dq = j.transpose() * y;
        let step = dq.amax();
        if step > opts.max_step {
            dq *= opts.max_step / step;
        }
        conf.q += dq;
        for (i, l) in limits.iter().enumerate() {
            conf.q[i] = conf.q[i].clamp(l.lower, l.upper);
        }
    }
    Ok(Err(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Registry;
    use nalgebra::dvector;

    fn arm2() -> RobotModel {
        Registry::builtin().model("arm2").unwrap()
    }

    #[test]
    fn arm2_straight_out() {
        let m = arm2();
        let sol = ik_position(&m, &Vector3::new(2.0, 0.0, 0.0), "ee", &dvector![0.1, -0.1], &IkOptions::default()).unwrap();
        let x = frame_pose(&m, &Configuration::fixed(sol.q.clone()), "ee").unwrap().translation.vector;
        assert!((x - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-6);
        assert!(sol.q.amax() < 1e-2, "{}", sol.q);
    }

    #[test]
    fn outside_workspace_unreachable() {
        let m = arm2();
        let r = ik_position(&m, &Vector3::new(3.0, 0.0, 0.0), "ee", &dvector![0.1, -0.1], &IkOptions::default());
        match r {
            Err(IkError::Unreachable { best_residual, .. }) => assert!(best_residual > 0.99),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fixed_point_seed() {
        let m = arm2();
        let seed = dvector![0.4, 0.7];
        let target = frame_pose(&m, &Configuration::fixed(seed.clone()), "ee").unwrap().translation.vector;
        let sol = ik_position(&m, &target, "ee", &seed, &IkOptions::default()).unwrap();
        assert_eq!(sol.q, seed);
        assert!(sol.iterations <= 1);
    }

    #[test]
    fn seed_must_respect_limits() {
        let m = arm2();
        let r = ik_position(&m, &Vector3::new(1.0, 0.0, 0.0), "ee", &dvector![10.0, 0.0], &IkOptions::default());
        assert!(matches!(r, Err(IkError::SeedOutOfLimits(_))));
    }
}
