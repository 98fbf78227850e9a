//! Camera list: a header line, then one camera per line.
//!
//! ```text
//! dynsplat-cameras 1 <count>
//! <fx> <fy> <cx> <cy> <width> <height> <qw> <qx> <qy> <qz> <tx> <ty> <tz>
//! ```
//!
//! The quaternion and translation form the world-to-camera pose.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::text::{content_lines, unit_quaternion, Fields};
use crate::geometry::{Camera, RigidTransform};
use crate::{Error, Result};

const KIND: &str = "camera file";
const HEADER: &str = "dynsplat-cameras";

pub fn write_cameras(cams: &[Camera]) -> String {
    let mut out = format!("{HEADER} 1 {}\n", cams.len());
    for c in cams {
        let q = c.pose.rotation.quaternion();
        let t = c.pose.translation;
        let _ = writeln!(out, "{} {} {} {} {} {} {} {} {} {} {} {} {}", c.fx, c.fy, c.cx, c.cy, c.width, c.height, q.w, q.i, q.j, q.k, t.x, t.y, t.z);
    }
    out
}

pub fn read_cameras(text: &str) -> Result<Vec<Camera>> {
    let mut lines = content_lines(text);
    let (n, header) = lines.next().ok_or_else(|| Error::format(KIND, "empty file"))?;
    let mut f = Fields::new(KIND, n, header);
    f.keyword(HEADER)?;
    f.keyword("1")?;
    let count: usize = f.parse("count")?;
    f.finish()?;
    let mut cams = Vec::new();
    for (n, line) in lines {
        let mut f = Fields::new(KIND, n, line);
        let (fx, fy, cx, cy) = (f.real("fx")?, f.real("fy")?, f.real("cx")?, f.real("cy")?);
        let (width, height) = (f.parse("width")?, f.parse("height")?);
        let rotation = unit_quaternion(&mut f)?;
        let t = Vector3::new(f.real("tx")?, f.real("ty")?, f.real("tz")?);
        f.finish()?;
        let cam = Camera::new(fx, fy, cx, cy, width, height, RigidTransform::new(rotation, t));
        cam.validate().map_err(|e| Error::format(KIND, format!("line {n}: {e}")))?;
        cams.push(cam);
    }
    if cams.len() != count {
        return Err(Error::format(KIND, format!("header promises {count} cameras, found {}", cams.len())));
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn cameras_round_trip_bit_exactly() {
        let pose = RigidTransform::new(UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3), Vector3::new(0.1, 1.0 / 3.0, -2.0));
        let cams = vec![Camera::centered(64.0, 64, 48, pose), Camera::new(50.0, 51.0, 20.5, 11.0, 40, 22, RigidTransform::identity())];
        assert_eq!(read_cameras(&write_cameras(&cams)).unwrap(), cams);
    }

    #[test]
    fn count_and_intrinsics_are_checked() {
        assert!(read_cameras("dynsplat-cameras 1 2\n10 10 5 5 10 10 1 0 0 0 0 0 0").is_err());
        assert!(read_cameras("dynsplat-cameras 1 1\n-10 10 5 5 10 10 1 0 0 0 0 0 0").is_err());
        assert!(read_cameras("dynsplat-cameras 1 1\n10 10 5 5 10 10 0 0 0 0 0 0 0").is_err());
        assert!(read_cameras("dynsplat-cameras 1 1\n10 10 5 5 10 10 2 0 0 0 0 0 0").is_ok());
    }
}
