use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Penalty contact against the ground plane `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    /// Normal stiffness, N/m.
    pub k_n: f64,
    /// Normal damping, N·s/m.
    pub d_n: f64,
    pub mu: f64,
    /// Tangential viscosity, N·s/m.
    pub d_t: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self { k_n: 1e5, d_n: 1e3, mu: 0.8, d_t: 1e3 }
    }
}

impl ContactParams {
    pub fn is_valid(&self) -> bool {
        [self.k_n, self.d_n, self.mu, self.d_t].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

const TANGENTIAL_DEADBAND: f64 = 1e-9;

/// Ground force on a point at `pos` moving with `vel`, world frame.
pub fn contact_force(pos: &Vector3<f64>, vel: &Vector3<f64>, params: &ContactParams) -> Vector3<f64> {
    if pos.z > 0.0 {
        return Vector3::zeros();
    }
    let depth = -pos.z;
    let depth_rate = -vel.z;
    let fz = (params.k_n * depth + params.d_n * depth_rate).max(0.0);
    let vt = Vector3::new(vel.x, vel.y, 0.0);
    let speed = vt.norm();
    let mut f = Vector3::new(0.0, 0.0, fz);
    if speed >= TANGENTIAL_DEADBAND {
        let mag = (params.mu * fz).min(params.d_t * speed);
        f -= vt * (mag / speed);
    }
    f
}
