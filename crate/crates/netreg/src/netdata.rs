//! Core data model: networks, weighted networks, node samples, link
//! covariates, and CSV ingestion/validation.
//!
//! File conventions: adjacency matrices are plain comma-separated numeric
//! grids with no header and no quoting; node files carry a header row
//! naming the outcome column `y`, regressor columns `x*`, and optional
//! agent-covariate columns `z*`. All types are immutable after
//! construction.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::{NetregError, Result};

/// Binary adjacency matrix with zero diagonal.
#[derive(Debug, Clone)]
pub struct Network {
    d: DMatrix<f64>,
    directed: bool,
}

impl Network {
    /// Validate and wrap an adjacency matrix. Nonzero diagonal entries are
    /// zeroed with a warning on stderr; anything else that violates the
    /// invariants is an error.
    pub fn new(mut d: DMatrix<f64>, directed: bool) -> Result<Self> {
        let n = d.nrows();
        if d.ncols() != n {
            return Err(NetregError::validation(format!(
                "adjacency matrix must be square, got {}x{}",
                n,
                d.ncols()
            )));
        }
        let mut zeroed = 0usize;
        for i in 0..n {
            if d[(i, i)] != 0.0 {
                d[(i, i)] = 0.0;
                zeroed += 1;
            }
        }
        if zeroed > 0 {
            eprintln!("warning: zeroed {zeroed} nonzero diagonal entries in adjacency matrix");
        }
        for i in 0..n {
            for j in 0..n {
                let v = d[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(NetregError::validation(format!(
                        "adjacency entry ({i},{j}) = {v} is not in {{0,1}}"
                    )));
                }
                if !directed && j < i && d[(i, j)] != d[(j, i)] {
                    return Err(NetregError::validation(format!(
                        "adjacency matrix is asymmetric at ({i},{j}); pass --directed to allow"
                    )));
                }
            }
        }
        Ok(Network { d, directed })
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn link(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }
}

/// Multi-layer real-valued network, one n-by-n matrix per layer.
#[derive(Debug, Clone)]
pub struct WeightedNetwork {
    layers: Vec<DMatrix<f64>>,
}

impl WeightedNetwork {
    pub fn new(mut layers: Vec<DMatrix<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetregError::validation("weighted network needs at least one layer"));
        }
        let n = layers[0].nrows();
        for (l, m) in layers.iter_mut().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(NetregError::validation(format!(
                    "layer {l} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            for i in 0..n {
                m[(i, i)] = 0.0;
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(NetregError::validation(format!("layer {l} contains non-finite entries")));
            }
        }
        Ok(WeightedNetwork { layers })
    }

    pub fn n(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }
}

/// Outcomes, regressors, and optional agent covariates for n nodes.
#[derive(Debug, Clone)]
pub struct NodeSample {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
}

impl NodeSample {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: Option<DMatrix<f64>>) -> Result<Self> {
        let n = y.len();
        if x.nrows() != n {
            return Err(NetregError::validation(format!(
                "regressor rows ({}) do not match outcome length ({n})",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(NetregError::validation("node sample has no regressors"));
        }
        if let Some(z) = &z {
            if z.nrows() != n {
                return Err(NetregError::validation(format!(
                    "covariate rows ({}) do not match outcome length ({n})",
                    z.nrows()
                )));
            }
        }
        let finite = y.iter().all(|v| v.is_finite())
            && x.iter().all(|v| v.is_finite())
            && z.as_ref().map_or(true, |z| z.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(NetregError::validation("node sample contains non-finite values"));
        }
        Ok(NodeSample { y, x, z })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of regressor columns.
    pub fn k(&self) -> usize {
        self.x.ncols()
    }
}

/// Pairwise covariates z_ij, one n-by-n matrix per layer.
#[derive(Debug, Clone)]
pub struct LinkCovariates {
    layers: Vec<DMatrix<f64>>,
}

impl LinkCovariates {
    pub fn new(layers: Vec<DMatrix<f64>>, directed: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetregError::validation("link covariates need at least one layer"));
        }
        let n = layers[0].nrows();
        for (l, m) in layers.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(NetregError::validation(format!(
                    "link covariate layer {l} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(NetregError::validation(format!(
                    "link covariate layer {l} contains non-finite entries"
                )));
            }
            if !directed {
                for i in 0..n {
                    for j in 0..i {
                        if m[(i, j)] != m[(j, i)] {
                            return Err(NetregError::validation(format!(
                                "link covariate layer {l} is asymmetric at ({i},{j})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(LinkCovariates { layers })
    }

    pub fn n(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &DMatrix<f64> {
        &self.layers[l]
    }

    /// L1 distance across layers between pair entries (i,s) and (t,s).
    pub fn l1_gap(&self, i: usize, t: usize, s: usize) -> f64 {
        self.layers.iter().map(|m| (m[(i, s)] - m[(t, s)]).abs()).sum()
    }
}

fn parse_grid(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>> = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| {
                    NetregError::validation(format!(
                        "{}: non-numeric cell {:?} on line {}",
                        path.display(),
                        cell.trim(),
                        lineno + 1
                    ))
                })
            })
            .collect();
        rows.push(row?);
    }
    if rows.is_empty() {
        return Err(NetregError::validation(format!("{}: empty file", path.display())));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(NetregError::validation(format!(
            "{}: ragged rows (expected width {width})",
            path.display()
        )));
    }
    Ok(rows)
}

/// Load a headerless 0/1 adjacency CSV.
pub fn load_network(path: impl AsRef<Path>, directed: bool) -> Result<Network> {
    let path = path.as_ref();
    let rows = parse_grid(&fs::read_to_string(path)?, path)?;
    let n = rows.len();
    if rows[0].len() != n {
        return Err(NetregError::validation(format!(
            "{}: adjacency grid is {}x{}, not square",
            path.display(),
            n,
            rows[0].len()
        )));
    }
    let d = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    Network::new(d, directed)
}

/// Load a node CSV with header `y,x1,...,xk[,z1,...]`.
///
/// Columns named `y` (exactly one), columns starting with `x` as
/// regressors, columns starting with `z` as agent covariates. Column
/// order within each group is preserved.
pub fn load_nodes(path: impl AsRef<Path>) -> Result<NodeSample> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| NetregError::validation(format!("{}: empty file", path.display())))?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();

    let mut y_col = None;
    let mut x_cols = Vec::new();
    let mut z_cols = Vec::new();
    for (idx, name) in names.iter().enumerate() {
        if *name == "y" {
            if y_col.is_some() {
                return Err(NetregError::validation(format!(
                    "{}: duplicate y column",
                    path.display()
                )));
            }
            y_col = Some(idx);
        } else if name.starts_with('x') {
            x_cols.push(idx);
        } else if name.starts_with('z') {
            z_cols.push(idx);
        } else {
            return Err(NetregError::validation(format!(
                "{}: unrecognized column {name:?} (expected y, x*, or z*)",
                path.display()
            )));
        }
    }
    let y_col =
        y_col.ok_or_else(|| NetregError::validation(format!("{}: missing y column", path.display())))?;
    if x_cols.is_empty() {
        return Err(NetregError::validation(format!(
            "{}: no regressor (x*) columns",
            path.display()
        )));
    }

    let body = lines.collect::<Vec<_>>().join("\n");
    let rows = parse_grid(&body, path)?;
    if rows[0].len() != names.len() {
        return Err(NetregError::validation(format!(
            "{}: row width {} does not match header width {}",
            path.display(),
            rows[0].len(),
            names.len()
        )));
    }
    let n = rows.len();
    let y = DVector::from_fn(n, |i, _| rows[i][y_col]);
    let x = DMatrix::from_fn(n, x_cols.len(), |i, j| rows[i][x_cols[j]]);
    let z = if z_cols.is_empty() {
        None
    } else {
        Some(DMatrix::from_fn(n, z_cols.len(), |i, j| rows[i][z_cols[j]]))
    };
    NodeSample::new(y, x, z)
}

/// Write a numeric matrix as headerless CSV using shortest round-trip
/// float formatting, so save/load is bitwise exact.
pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", m[(i, j)]));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a headerless numeric CSV as a matrix (no adjacency validation).
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let rows = parse_grid(&fs::read_to_string(path)?, path)?;
    let n = rows.len();
    let m = rows[0].len();
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
