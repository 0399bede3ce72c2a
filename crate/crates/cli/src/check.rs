//! `check`: kinematic tree, masses and diagnostics of a model.

use std::fmt::Write as _;

use locokit_core::csvfmt::format_g;
use locokit_core::model::{validate_model, Diagnostic, RobotModel, Severity};

fn g(v: f64) -> String {
    format_g(v, 6)
}

/// Upper bound on how far any frame can be from the root link: the sum of
/// joint offsets along its chain plus the frame's own offset.
pub fn reach_bound(model: &RobotModel) -> f64 {
    model
        .frame_names()
        .iter()
        .filter_map(|f| model.frame(f))
        .map(|fr| {
            let joints: f64 =
                model.chain(fr.link).iter().filter_map(|&l| model.parent_joint(l)).map(|j| model.joints()[j].origin.xyz.norm()).sum();
            joints + fr.offset.translation.vector.norm()
        })
        .fold(0.0, f64::max)
}

fn tree(model: &RobotModel, link: usize, depth: usize, out: &mut String) {
    let l = &model.links()[link];
    let _ = writeln!(out, "{:indent$}{}  {} kg", "", l.name, g(l.inertia.mass), indent = 2 * depth + 2);
    for (ji, j) in model.joints().iter().enumerate() {
        if model.joint_parent_link(ji) != link {
            continue;
        }
        let _ = writeln!(out, "{:indent$}[{} {}]", "", j.name, j.kind.as_str(), indent = 2 * depth + 4);
        if let Some(child) = model.link_index(&j.child) {
            tree(model, child, depth + 2, out);
        }
    }
}

/// The printed report and whether the model is free of errors.
pub fn report(model: &RobotModel) -> (String, bool) {
    let mut out = String::new();
    let base = if model.floating_base() { "floating base" } else { "fixed base" };
    let _ = writeln!(out, "robot {} ({base}), root link {}", model.name(), model.root_link());
    let _ = writeln!(out, "tree:");
    if let Some(root) = model.link_index(model.root_link()) {
        tree(model, root, 0, &mut out);
    }
    let contacts = model.contact_frames();
    if contacts.is_empty() {
        let _ = writeln!(out, "contact frames: none");
    } else {
        let _ = writeln!(out, "contact frames ({}): {}", contacts.len(), contacts.join(", "));
    }
    let _ = writeln!(out, "tool frame: {}", model.tool_frame());
    let _ = writeln!(out, "total mass {} kg, {} joints", g(model.total_mass()), model.nq());
    let _ = writeln!(out, "workspace radius bound {} m", g(reach_bound(model)));
    let diags: Vec<Diagnostic> = validate_model(model);
    for w in model.warnings() {
        let _ = writeln!(out, "note: {w}");
    }
    for d in &diags {
        let _ = writeln!(out, "{d}");
    }
    (out, !diags.iter().any(|d| d.severity == Severity::Error))
}
