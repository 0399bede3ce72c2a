use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix3, Vector3};

use super::ControlError;
use crate::kindyn::KinDynSnapshot;
use crate::model::RobotModel;

/// Leg Jacobians worse conditioned than this are treated as singular.
pub const MAX_LEG_CONDITION: f64 = 1e6;

/// Joint indices (into `q`) of the actuated joints between the root and a
/// contact frame, root first.
pub fn leg_joints(model: &RobotModel, foot: &str) -> Result<Vec<usize>, ControlError> {
    let f = model.frame(foot).ok_or_else(|| ControlError::NotApplicable(format!("unknown frame `{foot}`")))?;
    let mut dofs: Vec<usize> =
        model.chain(f.link).iter().filter_map(|&l| model.parent_joint(l)).filter_map(|j| model.joint_dof(j)).collect();
    dofs.reverse();
    if dofs.len() != 3 {
        return Err(ControlError::NotApplicable(format!("`{foot}` sits behind {} actuated joints, expected 3", dofs.len())));
    }
    Ok(dofs)
}

/// `F = −(Jᵀ)⁻¹·τ` for one three-joint leg.
pub fn grf_from_leg(foot: &str, j_leg: &Matrix3<f64>, tau_leg: &Vector3<f64>) -> Result<Vector3<f64>, ControlError> {
    let sv = j_leg.singular_values();
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    if !(condition <= MAX_LEG_CONDITION) {
        return Err(ControlError::SingularLegJacobian { foot: foot.to_string(), condition });
    }
    let inv = j_leg.transpose().try_inverse().ok_or(ControlError::SingularLegJacobian { foot: foot.to_string(), condition })?;
    Ok(-(inv * tau_leg))
}

/// Quasi-static ground reaction forces (ground on robot, world frame) for
/// every contact frame. `tau` are the measured joint efforts and `h` the
/// generalized nonlinear effects; the leg's own gravity and velocity terms
/// are removed before mapping torques to the foot.
pub fn estimate_gr_forces(
    model: &RobotModel,
    snapshot: &KinDynSnapshot,
    tau: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<BTreeMap<String, Vector3<f64>>, ControlError> {
    let nb = model.base_dofs();
    let mut out = BTreeMap::new();
    for foot in model.contact_frames() {
        let dofs = leg_joints(model, foot)?;
        let j = &snapshot.contact_jacobians[foot];
        let mut j_leg = Matrix3::zeros();
        let mut tau_leg = Vector3::zeros();
        for (c, &d) in dofs.iter().enumerate() {
            j_leg.set_column(c, &j.column(nb + d).fixed_rows::<3>(0));
            tau_leg[c] = tau[d] - h[nb + d];
        }
        out.insert(foot.clone(), grf_from_leg(foot, &j_leg, &tau_leg)?);
    }
    Ok(out)
}
