//! Bounded planar regions used for counting experiments: membership
//! predicate, area, and circumradius. A shape Omega is given at unit size;
//! counting code works with its dilates R * Omega.

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum BorelShape {
    /// Unit disk.
    Disk,
    /// Square [-1, 1]^2.
    Square,
    /// Sector of the unit disk: angle in [0, angle].
    Sector { angle: f64 },
    /// Annulus r0 <= |x| <= 1.
    Annulus { r0: f64 },
    /// Simple polygon containing the origin (vertices counterclockwise).
    Polygon { vertices: Vec<(f64, f64)> },
}

impl BorelShape {
    pub fn disk() -> Self {
        BorelShape::Disk
    }

    pub fn square() -> Self {
        BorelShape::Square
    }

    pub fn sector(angle: f64) -> Result<Self> {
        if !(angle > 0.0 && angle <= 2.0 * std::f64::consts::PI) {
            return Err(Error::InvalidParam("sector angle must be in (0, 2pi]".into()));
        }
        Ok(BorelShape::Sector { angle })
    }

    pub fn annulus(r0: f64) -> Result<Self> {
        if !(0.0 <= r0 && r0 < 1.0) {
            return Err(Error::InvalidParam("annulus inner radius must be in [0, 1)".into()));
        }
        Ok(BorelShape::Annulus { r0 })
    }

    pub fn polygon(vertices: Vec<(f64, f64)>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidParam("polygon needs at least 3 vertices".into()));
        }
        let shape = BorelShape::Polygon { vertices };
        if shape.area() <= 0.0 {
            return Err(Error::InvalidParam(
                "polygon area must be positive (vertices counterclockwise)".into(),
            ));
        }
        Ok(shape)
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "disk" {
            return Ok(BorelShape::Disk);
        }
        if s == "square" {
            return Ok(BorelShape::Square);
        }
        if let Some(rest) = s.strip_prefix("sector:") {
            let angle: f64 =
                rest.parse().map_err(|_| Error::InvalidParam(format!("bad sector angle {rest}")))?;
            return Self::sector(angle);
        }
        if let Some(rest) = s.strip_prefix("annulus:") {
            let r0: f64 = rest
                .parse()
                .map_err(|_| Error::InvalidParam(format!("bad annulus radius {rest}")))?;
            return Self::annulus(r0);
        }
        Err(Error::InvalidParam(format!(
            "unknown shape '{s}' (expected disk, square, sector:<angle>, annulus:<r0>)"
        )))
    }

    /// Lebesgue measure of the unit-size shape.
    pub fn area(&self) -> f64 {
        match self {
            BorelShape::Disk => std::f64::consts::PI,
            BorelShape::Square => 4.0,
            BorelShape::Sector { angle } => angle / 2.0,
            BorelShape::Annulus { r0 } => std::f64::consts::PI * (1.0 - r0 * r0),
            BorelShape::Polygon { vertices } => {
                let mut s = 0.0;
                for i in 0..vertices.len() {
                    let (x0, y0) = vertices[i];
                    let (x1, y1) = vertices[(i + 1) % vertices.len()];
                    s += x0 * y1 - x1 * y0;
                }
                s / 2.0
            }
        }
    }

    pub fn circumradius(&self) -> f64 {
        match self {
            BorelShape::Disk | BorelShape::Sector { .. } | BorelShape::Annulus { .. } => 1.0,
            BorelShape::Square => std::f64::consts::SQRT_2,
            BorelShape::Polygon { vertices } => {
                vertices.iter().map(|&(x, y)| (x * x + y * y).sqrt()).fold(0.0, f64::max)
            }
        }
    }

    /// Membership of p in the dilate R * Omega (closed).
    pub fn contains_scaled(&self, p: (f64, f64), r: f64) -> bool {
        let (x, y) = (p.0 / r, p.1 / r);
        match self {
            BorelShape::Disk => x * x + y * y <= 1.0,
            BorelShape::Square => x.abs() <= 1.0 && y.abs() <= 1.0,
            BorelShape::Sector { angle } => {
                if x * x + y * y > 1.0 {
                    return false;
                }
                let mut th = y.atan2(x);
                if th < 0.0 {
                    th += 2.0 * std::f64::consts::PI;
                }
                th <= *angle
            }
            BorelShape::Annulus { r0 } => {
                let n = x * x + y * y;
                n >= r0 * r0 && n <= 1.0
            }
            BorelShape::Polygon { vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (x0, y0) = vertices[i];
                    let (x1, y1) = vertices[(i + 1) % n];
                    if ((y0 > y) != (y1 > y)) && x < (x1 - x0) * (y - y0) / (y1 - y0) + x0 {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}
