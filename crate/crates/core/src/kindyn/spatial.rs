//! Plücker spatial vectors expressed in world coordinates at the world origin.

use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::{Isometry3, Matrix3, Vector3};

use crate::model::SpatialInertia;

/// Spatial motion vector: angular part, then the linear velocity of the body
/// point currently at the world origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub ang: Vector3<f64>,
    pub lin: Vector3<f64>,
}

/// Spatial force: moment about the world origin, then force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Force {
    pub ang: Vector3<f64>,
    pub lin: Vector3<f64>,
}

impl Motion {
    pub fn zero() -> Self {
        Self { ang: Vector3::zeros(), lin: Vector3::zeros() }
    }

    pub fn new(ang: Vector3<f64>, lin: Vector3<f64>) -> Self {
        Self { ang, lin }
    }

    /// `self ×` applied to a motion vector.
    pub fn cross_motion(&self, m: &Motion) -> Motion {
        Motion { ang: self.ang.cross(&m.ang), lin: self.ang.cross(&m.lin) + self.lin.cross(&m.ang) }
    }

    /// `self ×*` applied to a force vector.
    pub fn cross_force(&self, f: &Force) -> Force {
        Force { ang: self.ang.cross(&f.ang) + self.lin.cross(&f.lin), lin: self.ang.cross(&f.lin) }
    }

    pub fn dot(&self, f: &Force) -> f64 {
        self.ang.dot(&f.ang) + self.lin.dot(&f.lin)
    }

    /// Linear velocity of the world point `p` moving with this twist.
    pub fn point_velocity(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.lin + self.ang.cross(p)
    }
}

impl Force {
    pub fn zero() -> Self {
        Self { ang: Vector3::zeros(), lin: Vector3::zeros() }
    }
}

impl Add for Motion {
    type Output = Motion;
    fn add(self, o: Motion) -> Motion {
        Motion { ang: self.ang + o.ang, lin: self.lin + o.lin }
    }
}

impl Sub for Motion {
    type Output = Motion;
    fn sub(self, o: Motion) -> Motion {
        Motion { ang: self.ang - o.ang, lin: self.lin - o.lin }
    }
}

impl AddAssign for Motion {
    fn add_assign(&mut self, o: Motion) {
        self.ang += o.ang;
        self.lin += o.lin;
    }
}

impl Mul<f64> for Motion {
    type Output = Motion;
    fn mul(self, s: f64) -> Motion {
        Motion { ang: self.ang * s, lin: self.lin * s }
    }
}

impl Add for Force {
    type Output = Force;
    fn add(self, o: Force) -> Force {
        Force { ang: self.ang + o.ang, lin: self.lin + o.lin }
    }
}

impl AddAssign for Force {
    fn add_assign(&mut self, o: Force) {
        self.ang += o.ang;
        self.lin += o.lin;
    }
}

/// Rigid-body inertia about the world origin, world axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldInertia {
    pub mass: f64,
    /// First mass moment `m·c`.
    pub h: Vector3<f64>,
    /// Rotational inertia about the world origin.
    pub rot: Matrix3<f64>,
}

impl WorldInertia {
    pub fn zero() -> Self {
        Self { mass: 0.0, h: Vector3::zeros(), rot: Matrix3::zeros() }
    }

    /// Moves a link's inertia into world coordinates given the link pose.
    pub fn from_link(inertia: &SpatialInertia, pose: &Isometry3<f64>) -> Self {
        let c = pose * nalgebra::Point3::from(inertia.com);
        let r = pose.rotation.to_rotation_matrix();
        let i_c = r.matrix() * inertia.inertia_rot * r.matrix().transpose();
        let c = c.coords;
        let m = inertia.mass;
        Self { mass: m, h: c * m, rot: i_c + (Matrix3::identity() * c.norm_squared() - c * c.transpose()) * m }
    }

    pub fn apply(&self, v: &Motion) -> Force {
        Force { ang: self.rot * v.ang + self.h.cross(&v.lin), lin: v.lin * self.mass - self.h.cross(&v.ang) }
    }

    pub fn com(&self) -> Option<Vector3<f64>> {
        (self.mass > 0.0).then(|| self.h / self.mass)
    }

    /// Rotational inertia about the point `p`.
    pub fn rot_about(&self, p: &Vector3<f64>) -> Matrix3<f64> {
        // I_p = I_O - m([c]x[c]x^T) + m([c-p]x[c-p]x^T), expanded in h.
        let sq = |a: &Vector3<f64>, b: &Vector3<f64>| Matrix3::identity() * a.dot(b) - b * a.transpose();
        self.rot - sq(&self.h, p) - sq(p, &self.h) + sq(p, p) * self.mass
    }
}

impl Add for WorldInertia {
    type Output = WorldInertia;
    fn add(self, o: WorldInertia) -> WorldInertia {
        WorldInertia { mass: self.mass + o.mass, h: self.h + o.h, rot: self.rot + o.rot }
    }
}

impl AddAssign for WorldInertia {
    fn add_assign(&mut self, o: WorldInertia) {
        self.mass += o.mass;
        self.h += o.h;
        self.rot += o.rot;
    }
}
