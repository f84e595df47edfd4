use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid of interior nodes on `(0,1)^d` with homogeneous Dirichlet data.
///
/// Node `(ix, iy)` sits at `((ix+1)h, (iy+1)h)` and is stored at index
/// `iy * n + ix`. In one dimension `iy` is always 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n_interior: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::invalid("grid.dim", format!("must be 1 or 2, got {dim}")));
        }
        if n_interior == 0 {
            return Err(Error::invalid("grid.n", "need at least one interior node"));
        }
        Ok(Self { dim, n: n_interior })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_interior(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Number of interior nodes, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d` of a node.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Number of nodes along the second axis (1 in one dimension).
    pub fn ny(&self) -> usize {
        if self.dim == 2 {
            self.n
        } else {
            1
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    /// Lattice position of a node; `(ix, 0)` in one dimension.
    pub fn lattice(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (ix, iy) = self.lattice(idx);
        let h = self.h();
        let y = if self.dim == 2 { (iy + 1) as f64 * h } else { 0.0 };
        [(ix + 1) as f64 * h, y]
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    /// Index of the node at signed lattice position, or `None` for boundary
    /// and exterior positions (where the state is zero).
    pub fn node_at(&self, ix: isize, iy: isize) -> Option<usize> {
        let n = self.n as isize;
        let iy_ok = if self.dim == 2 { (0..n).contains(&iy) } else { iy == 0 };
        if (0..n).contains(&ix) && iy_ok {
            Some(self.index(ix as usize, iy as usize))
        } else {
            None
        }
    }
}

/// Real values on the interior nodes of a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "grid function values".into(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                expected: self.grid.len(),
                found: other.grid.len(),
            });
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn sub(&self, other: &GridFunction) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    /// Discrete `L²` pairing `h^d Σ u_i v_i`.
    pub fn dot(&self, other: &GridFunction) -> f64 {
        self.grid.cell_volume() * dot(&self.values, &other.values)
    }

    /// Reads one value per interior node from a CSV file (a single column, or
    /// one row per grid line in two dimensions). Lines starting with `#` and a
    /// non-numeric header are skipped.
    pub fn from_csv(grid: Grid, path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .from_path(path)?;
        let mut values = Vec::with_capacity(grid.len());
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(|f| f.trim().parse::<f64>()).collect();
            match parsed {
                Ok(row) => values.extend(row),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Config(format!("{}: line {}: {e}", path.display(), line + 1))),
            }
        }
        Self::new(grid, values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Named initial-data profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `a sin(πx)` (times `sin(πy)` in two dimensions).
    Sine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        mode: usize,
    },
    /// Smooth compactly supported bump `a exp(1 − 1/(1 − r²))`, `r = |x − c| / w`.
    Bump {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "half_pair")]
        center: [f64; 2],
        #[serde(default = "quarter")]
        width: f64,
    },
    /// Independent uniform values in `[−a, a]`.
    Random {
        #[serde(default = "one")]
        amplitude: f64,
        seed: u64,
    },
    Csv {
        path: String,
    },
}

impl Default for Profile {
    fn default() -> Self {
        Profile::Sine {
            amplitude: 0.5,
            mode: 1,
        }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn half_pair() -> [f64; 2] {
    [0.5, 0.5]
}
fn quarter() -> f64 {
    0.25
}

impl Profile {
    pub fn sample(&self, grid: Grid) -> Result<GridFunction> {
        let pi = std::f64::consts::PI;
        let two_d = grid.dim() == 2;
        match self {
            Profile::Zero => Ok(GridFunction::zeros(grid)),
            Profile::Sine { amplitude, mode } => {
                if *mode == 0 {
                    return Err(Error::invalid("initial.mode", "must be at least 1"));
                }
                let k = *mode as f64 * pi;
                Ok(GridFunction::from_fn(grid, |x| {
                    let s = (k * x[0]).sin();
                    amplitude * if two_d { s * (k * x[1]).sin() } else { s }
                }))
            }
            Profile::Bump {
                amplitude,
                center,
                width,
            } => {
                if !(*width > 0.0) {
                    return Err(Error::invalid("initial.width", "must be positive"));
                }
                Ok(GridFunction::from_fn(grid, |x| {
                    let dy = if two_d { x[1] - center[1] } else { 0.0 };
                    let r2 = ((x[0] - center[0]).powi(2) + dy * dy) / (width * width);
                    if r2 < 1.0 {
                        amplitude * (1.0 - 1.0 / (1.0 - r2)).exp()
                    } else {
                        0.0
                    }
                }))
            }
            Profile::Random { amplitude, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let values = (0..grid.len()).map(|_| amplitude * rng.gen_range(-1.0..=1.0)).collect();
                GridFunction::new(grid, values)
            }
            Profile::Csv { path } => GridFunction::from_csv(grid, Path::new(path)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_geometry() {
        let g = Grid::new(1, 4).unwrap();
        assert_eq!(g.len(), 4);
        assert!((g.h() * 5.0 - 1.0).abs() < 1e-15);
        assert_eq!(g.coords(0), [0.2, 0.0]);
        assert_eq!(g.node_at(-1, 0), None);
        assert_eq!(g.node_at(4, 0), None);
        assert_eq!(g.node_at(3, 0), Some(3));
        let g2 = Grid::new(2, 3).unwrap();
        assert_eq!(g2.len(), 9);
        assert_eq!(g2.lattice(5), (2, 1));
        assert_eq!(g2.coords(5), [0.75, 0.5]);
        assert!(Grid::new(3, 4).is_err());
        assert!(Grid::new(1, 0).is_err());
    }

    #[test]
    fn grid_function_validation() {
        let g = Grid::new(1, 3).unwrap();
        assert!(GridFunction::new(g, vec![1.0, 2.0]).is_err());
        assert!(GridFunction::new(g, vec![1.0, f64::NAN, 0.0]).is_err());
        let u = GridFunction::new(g, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((u.dot(&u) - 14.0 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn profiles() {
        let g = Grid::new(1, 9).unwrap();
        let s = Profile::Sine {
            amplitude: 2.0,
            mode: 1,
        }
        .sample(g)
        .unwrap();
        assert!((s.values()[4] - 2.0).abs() < 1e-15);
        let b = Profile::Bump {
            amplitude: 1.0,
            center: [0.5, 0.5],
            width: 0.2,
        }
        .sample(g)
        .unwrap();
        assert!((b.values()[4] - 1.0).abs() < 1e-15);
        assert_eq!(b.values()[0], 0.0);
        let r1 = Profile::Random {
            amplitude: 1.0,
            seed: 7,
        }
        .sample(g)
        .unwrap();
        let r2 = Profile::Random {
            amplitude: 1.0,
            seed: 7,
        }
        .sample(g)
        .unwrap();
        assert_eq!(r1, r2);
        assert!(r1.values().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u0.csv");
        std::fs::write(&path, "value\n0.5\n-1.25\n3\n").unwrap();
        let g = Grid::new(1, 3).unwrap();
        let u = Profile::Csv {
            path: path.to_string_lossy().into_owned(),
        }
        .sample(g)
        .unwrap();
        assert_eq!(u.values(), &[0.5, -1.25, 3.0]);
        std::fs::write(&path, "0.5\n1.0\n").unwrap();
        assert!(GridFunction::from_csv(g, &path).is_err());
    }
}
