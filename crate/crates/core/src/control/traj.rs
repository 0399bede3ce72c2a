use nalgebra::DVector;

use super::ControlError;

/// Position, velocity and acceleration at one instant.
pub type TrajectoryPoint = (DVector<f64>, DVector<f64>, DVector<f64>);

/// Quintic time law with zero boundary velocity and acceleration, clamped
/// outside `[0, duration]`. Returns `(q, qd, qdd)`.
pub fn quintic_trajectory(q0: &DVector<f64>, qf: &DVector<f64>, duration: f64, t: f64) -> Result<TrajectoryPoint, ControlError> {
    if q0.len() != qf.len() {
        return Err(ControlError::DimensionMismatch { what: "trajectory end", expected: q0.len(), got: qf.len() });
    }
    if !(duration > 0.0) {
        return Err(ControlError::NonPositiveDuration(duration));
    }
    let n = q0.len();
    if t <= 0.0 {
        return Ok((q0.clone(), DVector::zeros(n), DVector::zeros(n)));
    }
    if t >= duration {
        return Ok((qf.clone(), DVector::zeros(n), DVector::zeros(n)));
    }
    let s = t / duration;
    let (s2, s3) = (s * s, s * s * s);
    let pos = 10.0 * s3 - 15.0 * s3 * s + 6.0 * s3 * s2;
    let vel = (30.0 * s2 - 60.0 * s3 + 30.0 * s3 * s) / duration;
    let acc = (60.0 * s - 180.0 * s2 + 120.0 * s3) / (duration * duration);
    let delta = qf - q0;
    Ok((q0 + &delta * pos, &delta * vel, delta * acc))
}
