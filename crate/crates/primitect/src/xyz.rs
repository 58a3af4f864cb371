//! Plain-text point clouds: one `x y z` per line, `#` starts a comment line.

use std::fmt::Write as _;
use std::path::Path;

use primitect_core::{Point3, PointCloud};

use crate::error::{Failure, Result};

pub fn parse_xyz(text: &str) -> std::result::Result<PointCloud, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut c = [0.0; 3];
        for v in c.iter_mut() {
            let tok = it.next().ok_or_else(|| format!("line {}: expected x y z", n + 1))?;
            *v = tok
                .parse()
                .map_err(|_| format!("line {}: bad number {tok:?}", n + 1))?;
        }
        if it.next().is_some() {
            return Err(format!("line {}: more than three values", n + 1));
        }
        let p = Point3::from_array(c);
        if !p.is_finite() {
            return Err(format!("line {}: non-finite coordinate", n + 1));
        }
        out.push(p);
    }
    Ok(out)
}

pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    let input = |msg: String| Failure::Input {
        path: path.to_path_buf(),
        msg,
    };
    let text = std::fs::read_to_string(path).map_err(|e| input(e.to_string()))?;
    let pc = parse_xyz(&text).map_err(input)?;
    if pc.is_empty() {
        return Err(input(String::from("no points")));
    }
    Ok(pc)
}

/// Shortest round-trip formatting, so a written cloud reads back exactly.
pub fn format_xyz(pc: &[Point3]) -> String {
    let mut s = String::with_capacity(pc.len() * 32);
    for p in pc {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let pc = parse_xyz("# header\n1 2 3\n\n  4.5\t-6 7e-1 \n").unwrap();
        assert_eq!(pc, vec![Point3::new(1.0, 2.0, 3.0), Point3::new(4.5, -6.0, 0.7)]);
    }

    #[test]
    fn bad_lines_are_reported_with_their_number() {
        assert!(parse_xyz("1 2 3\n1 2\n").unwrap_err().contains("line 2"));
        assert!(parse_xyz("1 2 x\n").unwrap_err().contains("line 1"));
        assert!(parse_xyz("1 2 3 4\n").is_err());
        assert!(parse_xyz("1 2 nan\n").is_err());
    }

    #[test]
    fn written_clouds_read_back_exactly() {
        let pc = vec![Point3::new(0.1, -1e-7, 12345.678901234), Point3::new(1.0 / 3.0, 2.0, -0.0)];
        assert_eq!(parse_xyz(&format_xyz(&pc)).unwrap(), pc);
    }
}
