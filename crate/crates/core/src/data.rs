//! Point cloud files and synthetic test shapes.
//!
//! `.xyz` and `.normals` files hold one whitespace-separated triple per line.
//! Blank lines and lines starting with `#` are skipped. Floats are written in
//! shortest round-trip form, so a write/read cycle is bit-exact.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

const ZERO_NORMAL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub name: String,
    pub positions: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    bbox_diagonal: f64,
}

impl PointCloud {
    pub fn new(name: impl Into<String>, positions: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        if let Some(n) = &normals {
            Error::check_len(positions.len(), n.len())?;
        }
        let bbox_diagonal = bbox_diagonal(&positions);
        Ok(Self { name: name.into(), positions, normals, bbox_diagonal })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bbox_diagonal
    }

    /// Ground-truth normals, or [`Error::MissingGroundTruth`].
    pub fn gt_normals(&self) -> Result<&[Vec3]> {
        self.normals
            .as_deref()
            .ok_or_else(|| Error::MissingGroundTruth(self.name.clone()))
    }

    /// Load `<stem>.xyz` and, if present, `<stem>.normals` from `dir`.
    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let positions = read_xyz(&dir.join(format!("{stem}.xyz")))?;
        let npath = dir.join(format!("{stem}.normals"));
        let normals = if npath.exists() { Some(read_normals(&npath)?) } else { None };
        Self::new(stem, positions, normals)
    }
}

pub fn bbox_diagonal(points: &[Vec3]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (mut lo, mut hi) = (first.to_array(), first.to_array());
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Vec3::from_array(hi).distance(Vec3::from_array(lo))
}

/// Write through a temporary file in the target directory, then rename, so
/// a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_triples(path: &Path) -> Result<Vec<(usize, [f64; 3])>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = i + 1;
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: lineno, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 values, found {}", fields.len())));
        }
        let mut v = [0.0; 3];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f64::from_str(f).map_err(|e| parse_err(format!("'{f}': {e}")))?;
            if !slot.is_finite() {
                return Err(parse_err(format!("non-finite value '{f}'")));
            }
        }
        out.push((lineno, v));
    }
    Ok(out)
}

fn write_triples(path: &Path, rows: &[Vec3]) -> Result<()> {
    write_atomic(path, |w| {
        for p in rows {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    })
}

pub fn read_xyz(path: &Path) -> Result<Vec<Vec3>> {
    Ok(read_triples(path)?.into_iter().map(|(_, v)| Vec3::from_array(v)).collect())
}

pub fn write_xyz(points: &[Vec3], path: &Path) -> Result<()> {
    write_triples(path, points)
}

/// Reads normals and rescales each to unit length.
pub fn read_normals(path: &Path) -> Result<Vec<Vec3>> {
    read_triples(path)?
        .into_iter()
        .map(|(line, v)| {
            Vec3::from_array(v)
                .try_normalize(ZERO_NORMAL)
                .ok_or_else(|| Error::ZeroNormal { path: path.to_path_buf(), line })
        })
        .collect()
}

pub fn write_normals(normals: &[Vec3], path: &Path) -> Result<()> {
    write_triples(path, normals)
}

/// Shape stems, one per line, in file order without duplicates.
pub fn read_shape_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter(|l| seen.insert(l.to_string()))
        .map(str::to_string)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Plane,
    Sphere,
    Cylinder,
    Torus,
    Cube,
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "plane" => Shape::Plane,
            "sphere" => Shape::Sphere,
            "cylinder" => Shape::Cylinder,
            "torus" => Shape::Torus,
            "cube" => Shape::Cube,
            _ => return Err(Error::InvalidSpec(format!("unknown shape '{s}'"))),
        })
    }
}

impl Shape {
    pub fn as_str(self) -> &'static str {
        match self {
            Shape::Plane => "plane",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
            Shape::Torus => "torus",
            Shape::Cube => "cube",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    #[default]
    Uniform,
    Stripes,
    Gradient,
}

impl FromStr for Density {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "uniform" => Density::Uniform,
            "stripes" => Density::Stripes,
            "gradient" => Density::Gradient,
            _ => return Err(Error::InvalidSpec(format!("unknown density '{s}'"))),
        })
    }
}

/// Noise presets as fractions of the bounding-box diagonal.
pub const NOISE_PRESETS: [f64; 4] = [0.0, 0.0012, 0.006, 0.012];

/// Parameters of a synthetic shape. `n_points` counts samples before any
/// density filtering, so stripes and gradient clouds come out smaller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: Shape,
    pub n_points: usize,
    /// Gaussian displacement std as a fraction of the bounding-box diagonal.
    pub noise_sigma: f64,
    pub density: Density,
    pub seed: u64,
    pub stripe_bands: usize,
    pub gradient_floor: f64,
}

impl SynthSpec {
    pub fn new(shape: Shape, n_points: usize, seed: u64) -> Self {
        Self {
            shape,
            n_points,
            noise_sigma: 0.0,
            density: Density::Uniform,
            seed,
            stripe_bands: 8,
            gradient_floor: 0.1,
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn with_density(mut self, density: Density) -> Self {
        self.density = density;
        self
    }

    /// `sphere`, `sphere_noise_0.012`, `torus_stripes`, ...
    pub fn default_name(&self) -> String {
        let mut name = self.shape.as_str().to_string();
        if self.noise_sigma > 0.0 {
            name.push_str(&format!("_noise_{}", self.noise_sigma));
        }
        match self.density {
            Density::Uniform => {}
            Density::Stripes => name.push_str("_stripes"),
            Density::Gradient => name.push_str("_gradient"),
        }
        name
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 16 {
            return Err(Error::InvalidSpec(format!("n_points {} < 16", self.n_points)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidSpec(format!("noise {}", self.noise_sigma)));
        }
        if self.stripe_bands == 0 {
            return Err(Error::InvalidSpec("stripe_bands must be positive".into()));
        }
        if !(self.gradient_floor > 0.0 && self.gradient_floor <= 1.0) {
            return Err(Error::InvalidSpec(format!("gradient floor {}", self.gradient_floor)));
        }
        Ok(())
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.25;

/// One area-uniform surface sample: position, unit normal, and the first
/// surface parameter in `[0, 1)`.
fn sample_surface(shape: Shape, rng: &mut ChaCha8Rng) -> (Vec3, Vec3, f64) {
    match shape {
        Shape::Plane => {
            let (x, y) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            (Vec3::new(x, y, 0.0), Vec3::Z, x + 0.5)
        }
        Shape::Sphere => loop {
            let v = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            if let Some(n) = v.try_normalize(1e-12) {
                let s = (n.y.atan2(n.x) + PI) / (2.0 * PI);
                break (n, n, s.min(1.0 - f64::EPSILON));
            }
        },
        Shape::Cylinder => {
            let theta = rng.gen_range(0.0..2.0 * PI);
            let z = rng.gen_range(-0.5..0.5);
            let n = Vec3::new(theta.cos(), theta.sin(), 0.0);
            (Vec3::new(0.5 * n.x, 0.5 * n.y, z), n, theta / (2.0 * PI))
        }
        Shape::Torus => loop {
            let u = rng.gen_range(0.0..2.0 * PI);
            let v = rng.gen_range(0.0..2.0 * PI);
            let accept: f64 = rng.gen();
            if accept * (TORUS_MAJOR + TORUS_MINOR) <= TORUS_MAJOR + TORUS_MINOR * v.cos() {
                let ring = TORUS_MAJOR + TORUS_MINOR * v.cos();
                let p = Vec3::new(ring * u.cos(), ring * u.sin(), TORUS_MINOR * v.sin());
                let n = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
                break (p, n, u / (2.0 * PI));
            }
        },
        Shape::Cube => {
            let face = rng.gen_range(0..6usize);
            let (a, b): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            let sign = if face % 2 == 0 { 0.5 } else { -0.5 };
            let (p, n) = match face / 2 {
                0 => (Vec3::new(sign, a, b), Vec3::X * sign.signum()),
                1 => (Vec3::new(a, sign, b), Vec3::Y * sign.signum()),
                _ => (Vec3::new(a, b, sign), Vec3::Z * sign.signum()),
            };
            (p, n, (p.x + 0.5).clamp(0.0, 1.0 - f64::EPSILON))
        }
    }
}

/// Sample a synthetic shape with analytic ground-truth normals.
///
/// Surface samples, noise and density filtering use separate random streams,
/// so changing the density mode only drops points and never moves them.
pub fn synthesize(spec: &SynthSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut surf = rng_stream(spec.seed, 0);
    let mut noise = rng_stream(spec.seed, 1);
    let mut keep = rng_stream(spec.seed, 2);

    let samples: Vec<_> = (0..spec.n_points).map(|_| sample_surface(spec.shape, &mut surf)).collect();
    let clean: Vec<Vec3> = samples.iter().map(|s| s.0).collect();
    let std = spec.noise_sigma * bbox_diagonal(&clean);

    let mut positions = Vec::with_capacity(spec.n_points);
    let mut normals = Vec::with_capacity(spec.n_points);
    for (p, n, s) in samples {
        let e = Vec3::new(
            noise.sample::<f64, _>(StandardNormal),
            noise.sample::<f64, _>(StandardNormal),
            noise.sample::<f64, _>(StandardNormal),
        );
        let u: f64 = keep.gen();
        let retained = match spec.density {
            Density::Uniform => true,
            Density::Stripes => {
                let band = ((s * spec.stripe_bands as f64) as usize).min(spec.stripe_bands - 1);
                band.is_multiple_of(2)
            }
            Density::Gradient => u < 1.0 - (1.0 - spec.gradient_floor) * s,
        };
        if retained {
            positions.push(p + e * std);
            normals.push(n);
        }
    }
    PointCloud::new(spec.default_name(), positions, Some(normals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn read_xyz_skips_blank_and_comment_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        std::fs::write(&p, "0 0 0\n1 2 3\n").unwrap();
        assert_eq!(read_xyz(&p).unwrap().len(), 2);
        std::fs::write(&p, "# header\n\n0 0 0\n   \n1 2 3\n").unwrap();
        assert_eq!(read_xyz(&p).unwrap(), vec![Vec3::ZERO, Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.xyz");
        std::fs::write(&p, "0 0 0\n\n1 x 3\n").unwrap();
        match read_xyz(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "0 0\n").unwrap();
        assert!(matches!(read_xyz(&p), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(read_xyz(&dir.path().join("missing.xyz")), Err(Error::Io { .. })));
    }

    #[test]
    fn normals_are_renormalized() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.normals");
        std::fs::write(&p, "0 0 1\n0 0 2\n").unwrap();
        assert_eq!(read_normals(&p).unwrap(), vec![Vec3::Z, Vec3::Z]);
        std::fs::write(&p, "0 0 1\n0 0 0\n").unwrap();
        assert!(matches!(read_normals(&p), Err(Error::ZeroNormal { line: 2, .. })));
    }

    #[test]
    fn shape_lists() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("list.txt");
        std::fs::write(&p, "fandisk100k\n").unwrap();
        assert_eq!(read_shape_list(&p).unwrap(), vec!["fandisk100k"]);
        std::fs::write(&p, "").unwrap();
        assert!(read_shape_list(&p).unwrap().is_empty());
        std::fs::write(&p, "a\nb\na\n\nb\n").unwrap();
        assert_eq!(read_shape_list(&p).unwrap(), vec!["a", "b"]);
    }

    #[test]
    fn plane_and_sphere_normals() {
        let plane = synthesize(&SynthSpec::new(Shape::Plane, 100, 1)).unwrap();
        let n = plane.gt_normals().unwrap();
        assert_eq!(n.len(), 100);
        assert!(n.iter().all(|&v| v == n[0]));

        let sphere = synthesize(&SynthSpec::new(Shape::Sphere, 500, 2)).unwrap();
        for (p, n) in sphere.positions.iter().zip(sphere.gt_normals().unwrap()) {
            assert_eq!(p, n);
        }
    }

    #[test]
    fn every_shape_has_unit_normals() {
        for shape in [Shape::Plane, Shape::Sphere, Shape::Cylinder, Shape::Torus, Shape::Cube] {
            for density in [Density::Uniform, Density::Stripes, Density::Gradient] {
                let c = synthesize(&SynthSpec::new(shape, 400, 3).with_noise(0.006).with_density(density)).unwrap();
                assert!(!c.is_empty());
                for n in c.gt_normals().unwrap() {
                    assert!((n.norm() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    /// Mean of |N(0, σ²)| is σ·sqrt(2/π).
    fn folded_normal_mean(sigma: f64) -> f64 {
        sigma * (2.0 / PI).sqrt()
    }

    #[test]
    fn sphere_noise_matches_folded_gaussian() {
        let spec = SynthSpec::new(Shape::Sphere, 5000, 4).with_noise(0.012);
        let c = synthesize(&spec).unwrap();
        let clean = synthesize(&SynthSpec::new(Shape::Sphere, 5000, 4)).unwrap();
        let std = 0.012 * clean.bbox_diagonal();
        let mean = c.positions.iter().map(|p| (p.norm() - 1.0).abs()).sum::<f64>() / c.len() as f64;
        let expected = folded_normal_mean(std);
        assert!(mean >= 0.8 * expected && mean <= 1.2 * expected, "{mean} vs {expected}");
    }

    #[test]
    fn doubling_noise_doubles_displacement() {
        let clean = synthesize(&SynthSpec::new(Shape::Torus, 4000, 5)).unwrap();
        let disp = |sigma: f64| {
            let c = synthesize(&SynthSpec::new(Shape::Torus, 4000, 5).with_noise(sigma)).unwrap();
            c.positions.iter().zip(&clean.positions).map(|(a, b)| a.distance(*b)).sum::<f64>() / c.len() as f64
        };
        let ratio = disp(0.012) / disp(0.006);
        assert!((ratio - 2.0).abs() <= 0.1, "{ratio}");
    }

    #[test]
    fn density_modes_are_subsets_of_uniform() {
        let base = SynthSpec::new(Shape::Cylinder, 2000, 6).with_noise(0.0012);
        let uniform = synthesize(&base).unwrap();
        for density in [Density::Stripes, Density::Gradient] {
            let sub = synthesize(&base.clone().with_density(density)).unwrap();
            assert!(sub.len() < uniform.len());
            let mut j = 0;
            for (p, n) in sub.positions.iter().zip(sub.gt_normals().unwrap()) {
                while uniform.positions[j] != *p {
                    j += 1;
                }
                assert_eq!(uniform.gt_normals().unwrap()[j], *n);
            }
        }
        let stripes = synthesize(&base.clone().with_density(Density::Stripes)).unwrap();
        let frac = stripes.len() as f64 / uniform.len() as f64;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn invalid_specs() {
        assert!(synthesize(&SynthSpec::new(Shape::Plane, 8, 0)).is_err());
        assert!(synthesize(&SynthSpec::new(Shape::Plane, 100, 0).with_noise(-1.0)).is_err());
        assert!("blob".parse::<Shape>().is_err());
    }

    #[test]
    fn names() {
        assert_eq!(SynthSpec::new(Shape::Sphere, 100, 0).default_name(), "sphere");
        assert_eq!(
            SynthSpec::new(Shape::Torus, 100, 0).with_noise(0.012).with_density(Density::Stripes).default_name(),
            "torus_noise_0.012_stripes"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn xyz_round_trip_is_bit_exact(raw in proptest::collection::vec((any::<f64>(), any::<f64>(), any::<f64>()), 1..50)) {
            let pts: Vec<Vec3> = raw
                .into_iter()
                .filter(|(a, b, c)| a.is_finite() && b.is_finite() && c.is_finite())
                .map(|(a, b, c)| Vec3::new(a, b, c))
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.xyz");
            write_xyz(&pts, &path).unwrap();
            let back = read_xyz(&path).unwrap();
            prop_assert_eq!(back.len(), pts.len());
            for (a, b) in back.iter().zip(&pts) {
                prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
                prop_assert_eq!(a.z.to_bits(), b.z.to_bits());
            }
        }
    }
}
