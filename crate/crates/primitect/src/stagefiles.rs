//! Text files passed between pipeline stages. Numbers use shortest
//! round-trip formatting, so a stage reading its predecessor's file sees
//! exactly the values that were computed.

use std::fmt::Write as _;
use std::ops::Range;

use primitect_core::contour::ContourSet;
use primitect_core::topology::BuildingCluster;
use primitect_core::{Point2, Point3, Polygon};

use crate::error::{Failure, Result};

pub struct Reader<'a> {
    name: &'static str,
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Reader<'a> {
    pub fn new(name: &'static str, text: &'a str) -> Self {
        Self {
            name,
            it: text.lines().enumerate(),
            line: 0,
        }
    }

    pub fn err(&self, msg: impl std::fmt::Display) -> Failure {
        Failure::format(format!("{} line {}: {msg}", self.name, self.line))
    }

    pub fn next(&mut self) -> Result<&'a str> {
        match self.it.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Failure::format(format!("{} ends early", self.name))),
        }
    }

    /// Next line as `key` followed by whitespace-separated fields.
    pub fn fields(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let l = self.next()?;
        let mut it = l.split(' ');
        if it.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`, got {l:?}")));
        }
        Ok(it.collect())
    }

    pub fn value<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("bad value {s:?}")))
    }

    pub fn one<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let f = self.fields(key)?;
        if f.len() != 1 {
            return Err(self.err(format!("`{key}` takes one value")));
        }
        self.value(f[0])
    }

    pub fn numbers(&mut self, n: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        let v: Vec<f64> = l
            .split(' ')
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| self.err(format!("bad numbers {l:?}")))?;
        if v.len() != n {
            return Err(self.err(format!("expected {n} numbers, got {}", v.len())));
        }
        Ok(v)
    }

    pub fn finish(mut self) -> Result<()> {
        match self.it.find(|(_, l)| !l.trim().is_empty()) {
            Some((i, _)) => {
                self.line = i + 1;
                Err(self.err("unexpected trailing content"))
            }
            None => Ok(()),
        }
    }
}

/// First two lines of every stage file: magic and config hash.
pub fn header(kind: &str, hash: &str) -> String {
    format!("primitect-{kind} 1\nconfig_hash {hash}\n")
}

/// Checks the header; returns the hash the file was made with.
pub fn read_header(r: &mut Reader, kind: &str) -> Result<String> {
    let magic = r.next()?;
    if magic != format!("primitect-{kind} 1") {
        return Err(r.err(format!("not a {kind} file")));
    }
    let f = r.fields("config_hash")?;
    Ok(f.join(""))
}

fn write_polygon(s: &mut String, p: &Polygon) {
    for v in p.vertices() {
        let _ = writeln!(s, "{} {}", v.x, v.y);
    }
}

fn read_polygon(r: &mut Reader, n: usize, elevation: f64) -> Result<Polygon> {
    let mut vs = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.numbers(2)?;
        vs.push(Point2::new(v[0], v[1]));
    }
    Ok(Polygon::raw(vs, elevation))
}

pub fn write_contours(cs: &ContourSet, hash: &str) -> String {
    let mut s = header("contours", hash);
    let _ = writeln!(s, "interval {}", cs.interval);
    let _ = writeln!(s, "base {}", cs.base);
    let _ = writeln!(s, "contours {}", cs.contours.len());
    for c in &cs.contours {
        let _ = writeln!(s, "contour {} {}", c.elevation, c.len());
        write_polygon(&mut s, c);
    }
    s
}

pub fn read_contours(text: &str) -> Result<(ContourSet, String)> {
    let mut r = Reader::new("contours", text);
    let hash = read_header(&mut r, "contours")?;
    let interval = r.one("interval")?;
    let base = r.one("base")?;
    let n: usize = r.one("contours")?;
    let mut contours = Vec::with_capacity(n);
    for _ in 0..n {
        let f = r.fields("contour")?;
        if f.len() != 2 {
            return Err(r.err("`contour` takes elevation and vertex count"));
        }
        let (z, k) = (r.value(f[0])?, r.value(f[1])?);
        contours.push(read_polygon(&mut r, k, z)?);
    }
    r.finish()?;
    Ok((
        ContourSet {
            contours,
            interval,
            base,
        },
        hash,
    ))
}

/// Segmented buildings and the ground elevation they stand on.
#[derive(Debug, Clone, PartialEq)]
pub struct Clusters {
    pub ground_z: f64,
    pub interval: f64,
    pub buildings: Vec<BuildingCluster>,
}

pub fn write_clusters(c: &Clusters, hash: &str) -> String {
    let mut s = header("clusters", hash);
    let _ = writeln!(s, "ground_z {}", c.ground_z);
    let _ = writeln!(s, "interval {}", c.interval);
    let _ = writeln!(s, "buildings {}", c.buildings.len());
    for (i, b) in c.buildings.iter().enumerate() {
        let _ = writeln!(s, "building {i}");
        let _ = writeln!(s, "attributes {} {} {}", b.footprint_area, b.height, b.circularity);
        let flagged: Vec<String> = b.flagged.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "flagged {}", flagged.join(" "));
        let _ = writeln!(s, "contours {}", b.contours.len());
        for (c, parent) in b.contours.iter().zip(&b.parent) {
            let p = parent.map_or(String::from("-"), |p| p.to_string());
            let _ = writeln!(s, "contour {p} {} {}", c.elevation, c.len());
            write_polygon(&mut s, c);
        }
        let _ = writeln!(s, "points {}", b.points.len());
        for p in &b.points {
            let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
        }
    }
    s
}

pub fn read_clusters(text: &str) -> Result<(Clusters, String)> {
    let mut r = Reader::new("clusters", text);
    let hash = read_header(&mut r, "clusters")?;
    let ground_z = r.one("ground_z")?;
    let interval = r.one("interval")?;
    let n: usize = r.one("buildings")?;
    let mut buildings = Vec::with_capacity(n);
    for i in 0..n {
        let id: usize = r.one("building")?;
        if id != i {
            return Err(r.err(format!("expected building {i}")));
        }
        let a = r.fields("attributes")?;
        if a.len() != 3 {
            return Err(r.err("`attributes` takes three values"));
        }
        let (footprint_area, height, circularity) = (r.value(a[0])?, r.value(a[1])?, r.value(a[2])?);
        let flagged = r
            .fields("flagged")?
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| r.value(s))
            .collect::<Result<Vec<usize>>>()?;
        let nc: usize = r.one("contours")?;
        let mut contours = Vec::with_capacity(nc);
        let mut parent = Vec::with_capacity(nc);
        for _ in 0..nc {
            let f = r.fields("contour")?;
            if f.len() != 3 {
                return Err(r.err("`contour` takes parent, elevation and vertex count"));
            }
            let p = if f[0] == "-" {
                None
            } else {
                let p: usize = r.value(f[0])?;
                if p >= nc {
                    return Err(r.err("parent index out of range"));
                }
                Some(p)
            };
            let (z, k) = (r.value(f[1])?, r.value(f[2])?);
            contours.push(read_polygon(&mut r, k, z)?);
            parent.push(p);
        }
        if contours.is_empty() {
            return Err(r.err("building without contours"));
        }
        let np: usize = r.one("points")?;
        let mut points = Vec::with_capacity(np);
        for _ in 0..np {
            let v = r.numbers(3)?;
            points.push(Point3::new(v[0], v[1], v[2]));
        }
        buildings.push(BuildingCluster {
            contours,
            parent,
            footprint_area,
            height,
            circularity,
            flagged,
            points,
        });
    }
    r.finish()?;
    Ok((
        Clusters {
            ground_z,
            interval,
            buildings,
        },
        hash,
    ))
}

/// Unit groups of every chain of every building.
pub type Divisions = Vec<Vec<ChainGroups>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainGroups {
    pub groups: Vec<Range<usize>>,
    pub distances: Vec<f64>,
}

pub fn write_divisions(d: &Divisions, hash: &str) -> String {
    let mut s = header("division", hash);
    let _ = writeln!(s, "buildings {}", d.len());
    for (i, chains) in d.iter().enumerate() {
        let _ = writeln!(s, "building {i} {}", chains.len());
        for c in chains {
            let g: Vec<String> = c.groups.iter().map(|r| format!("{}..{}", r.start, r.end)).collect();
            let _ = writeln!(s, "groups {}", g.join(" "));
            let dist: Vec<String> = c.distances.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "distances {}", dist.join(" "));
        }
    }
    s
}

pub fn read_divisions(text: &str) -> Result<(Divisions, String)> {
    let mut r = Reader::new("division", text);
    let hash = read_header(&mut r, "division")?;
    let n: usize = r.one("buildings")?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let f = r.fields("building")?;
        if f.len() != 2 || f[0] != i.to_string() {
            return Err(r.err(format!("expected `building {i} <chains>`")));
        }
        let nc: usize = r.value(f[1])?;
        let mut chains = Vec::with_capacity(nc);
        for _ in 0..nc {
            let groups = r
                .fields("groups")?
                .into_iter()
                .map(|g| {
                    let (a, b) = g.split_once("..").ok_or_else(|| r.err(format!("bad range {g:?}")))?;
                    Ok(r.value(a)?..r.value(b)?)
                })
                .collect::<Result<Vec<Range<usize>>>>()?;
            let distances = r
                .fields("distances")?
                .into_iter()
                .filter(|s| !s.is_empty())
                .map(|s| r.value(s))
                .collect::<Result<Vec<f64>>>()?;
            chains.push(ChainGroups { groups, distances });
        }
        out.push(chains);
    }
    r.finish()?;
    Ok((out, hash))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(z: f64, s: f64) -> Polygon {
        Polygon::new(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(s, 0.0),
                Point2::new(s, s + 0.1),
                Point2::new(0.0, s),
            ],
            z,
        )
        .unwrap()
    }

    #[test]
    fn contours_read_back_exactly() {
        let cs = ContourSet {
            contours: vec![square(1.0, 10.0 / 3.0), square(2.0, 1.0)],
            interval: 1.0,
            base: -0.5,
        };
        let text = write_contours(&cs, "h");
        let (back, hash) = read_contours(&text).unwrap();
        assert_eq!(back, cs);
        assert_eq!(hash, "h");
        assert_eq!(write_contours(&back, "h"), text);
    }

    #[test]
    fn clusters_read_back_exactly() {
        let c = Clusters {
            ground_z: 0.0,
            interval: 1.0,
            buildings: vec![BuildingCluster {
                contours: vec![square(1.0, 5.0), square(2.0, 4.0), square(3.0, 1.0 / 7.0)],
                parent: vec![None, Some(0), Some(1)],
                footprint_area: 25.5,
                height: 3.0,
                circularity: 0.7,
                flagged: vec![2],
                points: vec![Point3::new(0.1, 0.2, 0.3), Point3::new(1.0 / 3.0, 4.0, 5.0)],
            }],
        };
        let text = write_clusters(&c, "abc");
        assert_eq!(read_clusters(&text).unwrap(), (c, String::from("abc")));
    }

    #[test]
    fn divisions_read_back_exactly() {
        let d = vec![
            vec![ChainGroups {
                groups: vec![0..3, 3..7],
                distances: vec![0.001, 0.2, 1.0 / 3.0, 0.0, 0.0, 0.1],
            }],
            vec![ChainGroups {
                groups: vec![0..1],
                distances: Vec::new(),
            }],
        ];
        let text = write_divisions(&d, "x");
        assert_eq!(read_divisions(&text).unwrap(), (d, String::from("x")));
    }

    #[test]
    fn wrong_kind_and_truncation_are_errors() {
        let cs = ContourSet {
            contours: vec![square(1.0, 2.0)],
            interval: 1.0,
            base: 0.0,
        };
        let text = write_contours(&cs, "h");
        assert!(read_clusters(&text).is_err());
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        assert!(read_contours(&cut).is_err());
    }
}
