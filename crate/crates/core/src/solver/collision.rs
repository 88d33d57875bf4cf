use serde::{Deserialize, Serialize};

use super::SolverError;
use crate::Vec3;

/// Static collider. Half-spaces are solid where `normal · x < offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CollisionPrimitive {
    Sphere {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        friction: f64,
    },
    #[serde(rename = "halfspace")]
    HalfSpace {
        normal: [f64; 3],
        offset: f64,
        #[serde(default)]
        friction: f64,
    },
}

impl CollisionPrimitive {
    pub fn sphere(center: Vec3, radius: f64, friction: f64) -> Result<Self, SolverError> {
        let p = Self::Sphere {
            center: center.into(),
            radius,
            friction,
        };
        p.validate()?;
        Ok(p)
    }

    /// Half-space with a normal that is normalized here.
    pub fn half_space(normal: Vec3, offset: f64, friction: f64) -> Result<Self, SolverError> {
        let len = normal.norm();
        if !(len > 0.0) {
            return Err(SolverError::Invalid("half-space normal must be non-zero".into()));
        }
        let p = Self::HalfSpace {
            normal: (normal / len).into(),
            offset,
            friction,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let friction = match self {
            Self::Sphere { radius, friction, .. } => {
                if !(*radius > 0.0) {
                    return Err(SolverError::Invalid(format!("sphere radius must be positive, got {radius}")));
                }
                *friction
            }
            Self::HalfSpace { normal, friction, .. } => {
                if (Vec3::from(*normal).norm() - 1.0).abs() > 1e-9 {
                    return Err(SolverError::Invalid("half-space normal must be unit length".into()));
                }
                *friction
            }
        };
        if !(0.0..=1.0).contains(&friction) {
            return Err(SolverError::Invalid(format!("friction must lie in [0, 1], got {friction}")));
        }
        Ok(())
    }

    /// Surface point and outward normal for a penetrating point, `None` when outside.
    fn contact(&self, x: &Vec3) -> Option<(Vec3, Vec3, f64)> {
        match self {
            Self::Sphere {
                center,
                radius,
                friction,
            } => {
                let c = Vec3::from(*center);
                let d = x - c;
                let dist = d.norm();
                if dist >= *radius {
                    return None;
                }
                let n = if dist > 0.0 { d / dist } else { Vec3::y() };
                Some((c + n * *radius, n, *friction))
            }
            Self::HalfSpace {
                normal,
                offset,
                friction,
            } => {
                let n = Vec3::from(*normal);
                let depth = offset - n.dot(x);
                if depth <= 0.0 {
                    return None;
                }
                Some((x + n * depth, n, *friction))
            }
        }
    }
}

/// Projects penetrating unpinned vertices onto primitive surfaces along the
/// outward normal, removes the normal velocity and scales the tangential
/// velocity by `1 − friction`.
pub fn resolve_collisions(positions: &mut [Vec3], velocities: &mut [Vec3], pinned: &[bool], primitives: &[CollisionPrimitive]) {
    if primitives.is_empty() {
        return;
    }
    for i in 0..positions.len() {
        if pinned.get(i).copied().unwrap_or(false) {
            continue;
        }
        for prim in primitives {
            if let Some((surface, n, friction)) = prim.contact(&positions[i]) {
                positions[i] = surface;
                let v = velocities[i];
                let tangential = v - n * n.dot(&v);
                velocities[i] = tangential * (1.0 - friction);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_pushes_to_surface() {
        let s = CollisionPrimitive::sphere(Vec3::new(1.0, 2.0, 3.0), 0.5, 0.0).unwrap();
        let mut x = vec![Vec3::new(1.0, 2.0, 3.0 + 0.49)];
        let mut v = vec![Vec3::new(0.0, 0.0, -1.0)];
        resolve_collisions(&mut x, &mut v, &[false], &[s]);
        assert!(((x[0] - Vec3::new(1.0, 2.0, 3.0)).norm() - 0.5).abs() < 1e-15);
        assert_eq!(v[0], Vec3::zeros());
    }

    #[test]
    fn floor_behaviour() {
        let floor = CollisionPrimitive::half_space(Vec3::y(), 0.0, 0.0).unwrap();
        let mut x = vec![Vec3::new(0.3, 0.2, 0.0), Vec3::new(0.0, -0.1, 0.5)];
        let mut v = vec![Vec3::new(1.0, -2.0, 0.0), Vec3::new(1.0, -2.0, 0.0)];
        resolve_collisions(&mut x, &mut v, &[false, false], &[floor.clone()]);
        assert_eq!(x[0], Vec3::new(0.3, 0.2, 0.0));
        assert_eq!(v[0], Vec3::new(1.0, -2.0, 0.0));
        assert_eq!(x[1], Vec3::new(0.0, 0.0, 0.5));
        assert_eq!(v[1], Vec3::new(1.0, 0.0, 0.0));

        let sticky = CollisionPrimitive::half_space(Vec3::y(), 0.0, 0.5).unwrap();
        let mut x = vec![Vec3::new(0.0, -0.1, 0.0)];
        let mut v = vec![Vec3::new(1.0, -2.0, 0.0)];
        resolve_collisions(&mut x, &mut v, &[false], &[sticky]);
        assert_eq!(v[0], Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn pinned_vertices_are_left_alone() {
        let floor = CollisionPrimitive::half_space(Vec3::y(), 0.0, 0.0).unwrap();
        let mut x = vec![Vec3::new(0.0, -1.0, 0.0)];
        let mut v = vec![Vec3::zeros()];
        resolve_collisions(&mut x, &mut v, &[true], &[floor]);
        assert_eq!(x[0].y, -1.0);
    }

    #[test]
    fn invalid_primitives() {
        assert!(CollisionPrimitive::sphere(Vec3::zeros(), 0.0, 0.0).is_err());
        assert!(CollisionPrimitive::sphere(Vec3::zeros(), 1.0, 1.5).is_err());
        assert!(CollisionPrimitive::half_space(Vec3::zeros(), 0.0, 0.0).is_err());
        let raw = CollisionPrimitive::HalfSpace {
            normal: [0.0, 2.0, 0.0],
            offset: 0.0,
            friction: 0.0,
        };
        assert!(raw.validate().is_err());
    }
}
