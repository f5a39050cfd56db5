use crate::error::{Error, Result};
use crate::geometry::Point3;

/// Isotropic affine map from scene coordinates into the unit cube:
/// `normalised = scale * scene + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTransform {
    pub scale: f64,
    pub offset: Point3,
}

pub const DEFAULT_MARGIN: f64 = 0.05;

impl NormTransform {
    pub fn identity() -> Self {
        NormTransform {
            scale: 1.0,
            offset: Point3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) || self.offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("invalid normalisation {self:?}")));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        p * self.scale + self.offset
    }

    pub fn invert(&self, p: &Point3) -> Point3 {
        (p - self.offset) / self.scale
    }

    /// Converts a scene-frame length into normalised units.
    pub fn length_to_normalised(&self, metres: f64) -> f64 {
        metres * self.scale
    }
}

pub fn apply_norm(t: &NormTransform, p: &Point3) -> Point3 {
    t.apply(p)
}

pub fn invert_norm(t: &NormTransform, p: &Point3) -> Point3 {
    t.invert(p)
}

/// Fits the transform that centres the bounding box of `points` in the cube and
/// scales its largest side to `1 - 2 * margin`.
pub fn compute_norm_transform(points: &[Point3], margin: f64) -> Result<NormTransform> {
    if !(0.0..=0.25).contains(&margin) {
        return Err(Error::InvalidArgument(format!("margin {margin} outside [0, 0.25]")));
    }
    let first = points
        .first()
        .ok_or_else(|| Error::Degenerate("no points to normalise".into()))?;
    let (mut lo, mut hi) = (*first, *first);
    for p in points {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite point".into()));
        }
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    if extent <= 0.0 {
        return Err(Error::Degenerate("all points identical".into()));
    }
    let scale = (1.0 - 2.0 * margin) / extent;
    let centre = (lo + hi) * 0.5;
    Ok(NormTransform {
        scale,
        offset: Point3::repeat(0.5) - centre * scale,
    })
}
