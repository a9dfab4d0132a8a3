//! Artifacts: CSV tables, SVG polylines and the run manifest.  Everything
//! is rendered in memory and written only once the whole run succeeded.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use surfscatter_core::integrate::Trajectory;
use surfscatter_core::model::{energy, ModelParams};

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: impl Into<String>, contents: impl Into<String>) -> Self {
        Self { name: name.into(), contents: contents.into() }
    }

    pub fn sha256(&self) -> String {
        format!("{:x}", Sha256::digest(self.contents.as_bytes()))
    }
}

/// Decimal with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    columns: usize,
    text: String,
}

/// A CSV cell.
pub enum Cell<'a> {
    F(f64),
    I(i64),
    S(&'a str),
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Self { columns: header.len(), text: format!("{}\n", header.join(",")) }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        assert_eq!(cells.len(), self.columns, "CSV row width");
        let parts: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::F(x) => num(*x),
                Cell::I(i) => i.to_string(),
                Cell::S(s) => s.to_string(),
            })
            .collect();
        self.text.push_str(&parts.join(","));
        self.text.push('\n');
    }

    pub fn finish(self, name: &str) -> Artifact {
        Artifact::new(name, self.text)
    }
}

/// Trajectory table `t,q,p,theta,J,H`.
pub fn trajectory_csv(name: &str, traj: &Trajectory<4>, params: &ModelParams) -> Artifact {
    let mut c = Csv::new(&["t", "q", "p", "theta", "J", "H"]);
    for (t, y) in traj.times().iter().zip(traj.states()) {
        c.row(&[Cell::F(*t), Cell::F(y[0]), Cell::F(y[1]), Cell::F(y[2]), Cell::F(y[3]), Cell::F(energy(y, params))]);
    }
    c.finish(name)
}

/// Minimal SVG line plot of `(x, y)` samples.
pub fn svg_polyline(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (w, h, m) = (800.0, 400.0, 50.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut path = String::new();
    for &(x, y) in points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
    }
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"{m}\" y=\"{m}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n\
         <polyline fill=\"none\" stroke=\"#1f4e9c\" stroke-width=\"1\" points=\"{}\"/>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{x_label} [{x0:.3e}, {x1:.3e}]</text>\n\
         <text x=\"12\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{y_label} [{y0:.3e}, {y1:.3e}]</text>\n\
         </svg>\n",
        w - 2.0 * m,
        h - 2.0 * m,
        path.trim_end(),
        w / 2.0,
        h - 15.0,
        h / 2.0,
        h / 2.0,
    )
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: Vec<(String, String)>,
    pub wall_clock_seconds: f64,
    /// `(file, sha256)`.
    pub checksums: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(config: Vec<(String, String)>, artifacts: &[Artifact], wall_clock_seconds: f64) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            wall_clock_seconds,
            checksums: artifacts.iter().map(|a| (a.name.clone(), a.sha256())).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("tool = surfscatter {}\nwall_clock_seconds = {:.3}\n[config]\n", self.tool_version, self.wall_clock_seconds);
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("[sha256]\n");
        for (k, v) in &self.checksums {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Writes every artifact and the manifest into `dir`.  Files go to a
/// temporary name first and are renamed once all of them are on disk.
pub fn commit(dir: &Path, artifacts: &[Artifact], manifest: &RunManifest) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut all: Vec<Artifact> = artifacts.to_vec();
    all.push(Artifact::new("manifest.txt", manifest.render()));
    let mut staged = Vec::with_capacity(all.len());
    for a in &all {
        let tmp = dir.join(format!(".{}.partial", a.name));
        if let Err(e) = fs::write(&tmp, a.contents.as_bytes()) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            let _ = fs::remove_file(&tmp);
            return Err(e);
        }
        staged.push((tmp, dir.join(&a.name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, dst) in staged {
        fs::rename(&tmp, &dst)?;
        written.push(dst);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-9.52529e-4), "-9.5252900000000003e-4");
        let back: f64 = num(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut c = Csv::new(&["k", "x"]);
        c.row(&[Cell::I(1), Cell::F(0.5)]);
        let a = c.finish("t.csv");
        assert_eq!(a.contents, "k,x\n1,5.0000000000000000e-1\n");
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn commit_writes_manifest_with_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let arts = vec![Artifact::new("a.csv", "x\n1\n")];
        let m = RunManifest::new(vec![("k".into(), "v".into())], &arts, 0.0);
        let files = commit(dir.path(), &arts, &m).unwrap();
        assert_eq!(files.len(), 2);
        let text = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert!(text.contains(&arts[0].sha256()));
        assert!(text.contains("k = v"));
    }

    #[test]
    fn trajectory_columns() {
        use surfscatter_core::integrate::{integrate, mcgehee_field, IntegratorConfig};
        let p = ModelParams::physical_default(5.0, 0.0);
        let traj = integrate(mcgehee_field(&p), [1.0, 0.0, 0.0, 0.0], 0.0, 1.0, &IntegratorConfig::with_tol(1e-10).unwrap()).unwrap();
        let a = trajectory_csv("traj.csv", &traj, &p);
        let mut lines = a.contents.lines();
        assert_eq!(lines.next(), Some("t,q,p,theta,J,H"));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 6);
        assert_eq!(first[1], "1.0000000000000000e0");
    }

    #[test]
    fn svg_is_well_formed() {
        let s = svg_polyline(&[(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)], "t", "z");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("<polyline"));
    }
}
