//! Gridded safety-probability fields with interpolated value, gradient and
//! Hessian, plus their on-disk format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::interp::{interpolate_line, weights, InterpOrder};
use crate::error::{Error, Result};
use crate::sde::AugmentedState;

const MAGIC: &str = "PSAFE-FIELD";
const FORMAT_VERSION: u32 = 1;

/// Coordinate of the augmented state that a grid axis runs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coord {
    Horizon,
    Margin,
    Phi,
    State(usize),
}

impl Coord {
    /// Position in `AugmentedState::coords`.
    pub fn index(self) -> usize {
        match self {
            Coord::Horizon => 0,
            Coord::Margin => 1,
            Coord::Phi => 2,
            Coord::State(i) => 3 + i,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub coord: Coord,
    pub nodes: Vec<f64>,
}

impl Axis {
    pub fn new(coord: Coord, nodes: Vec<f64>) -> Self {
        Self { coord, nodes }
    }

    /// `count` evenly spaced nodes from `lo` to `hi` inclusive.
    pub fn uniform(coord: Coord, lo: f64, hi: f64, count: usize) -> Self {
        let nodes = if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|k| {
                    if k + 1 == count {
                        hi
                    } else {
                        lo + (hi - lo) * k as f64 / (count - 1) as f64
                    }
                })
                .collect()
        };
        Self { coord, nodes }
    }

    /// Nodes `lo, lo + step, …` up to `hi` (within rounding).
    pub fn stepped(coord: Coord, lo: f64, hi: f64, step: f64) -> Self {
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        Self::uniform(coord, lo, lo + step * (count - 1) as f64, count)
    }
}

/// Where a field's numbers came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub algorithm: String,
    pub samples: usize,
    pub seed: u64,
    pub safety_type: u8,
    /// Free-form description, e.g. the policy the probabilities refer to.
    pub note: String,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            algorithm: "direct".into(),
            samples: 0,
            seed: 0,
            safety_type: 1,
            note: String::new(),
        }
    }
}

/// Value, gradient and Hessian over the augmented coordinates
/// `(T, L, φ, x_1, …, x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl FieldEval {
    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            value,
            grad: DVector::zeros(dim),
            hess: DMatrix::zeros(dim, dim),
        }
    }
}

/// Anything that can be queried like a safety-probability field.
pub trait ProbabilityField: Send + Sync {
    fn evaluate(&self, z: &AugmentedState) -> Result<FieldEval>;
}

/// A field given in closed form.
#[derive(Clone)]
pub struct AnalyticField {
    f: Arc<dyn Fn(&AugmentedState) -> FieldEval + Send + Sync>,
}

impl AnalyticField {
    pub fn new(f: impl Fn(&AugmentedState) -> FieldEval + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }
}

impl ProbabilityField for AnalyticField {
    fn evaluate(&self, z: &AugmentedState) -> Result<FieldEval> {
        Ok((self.f)(z))
    }
}

/// Safety probabilities on an axis-aligned grid. Values are stored row-major
/// with the last axis varying fastest; monotone cubic slopes are applied along
/// that last axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeProbField {
    axes: Vec<Axis>,
    values: Vec<f64>,
    stderr: Vec<f64>,
    order: InterpOrder,
    state_dim: usize,
    provenance: Provenance,
    clamp_events: usize,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    version: u32,
    field: SafeProbField,
}

impl SafeProbField {
    /// Builds a field, clamping every value into `[0, 1]` and counting the
    /// clamped nodes.
    pub fn new(
        axes: Vec<Axis>,
        values: Vec<f64>,
        stderr: Vec<f64>,
        order: InterpOrder,
        state_dim: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Config("field needs at least one axis".into()));
        }
        let mut seen = Vec::new();
        for (a, axis) in axes.iter().enumerate() {
            if axis.nodes.is_empty() || axis.nodes.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Config(format!(
                    "axis {a} nodes must be strictly increasing"
                )));
            }
            if let Coord::State(i) = axis.coord {
                if i >= state_dim {
                    return Err(Error::Config(format!(
                        "axis {a} refers to state component {i}"
                    )));
                }
            }
            if seen.contains(&axis.coord) {
                return Err(Error::Config(format!("axis {a} repeats a coordinate")));
            }
            seen.push(axis.coord);
        }
        let size: usize = axes.iter().map(|a| a.nodes.len()).product();
        if values.len() != size || stderr.len() != size {
            return Err(Error::Dimension {
                what: "field values",
                expected: size.to_string(),
                got: format!("{} values, {} errors", values.len(), stderr.len()),
            });
        }
        let mut clamp_events = 0;
        let values = values
            .into_iter()
            .map(|v| {
                if v.is_nan() {
                    clamp_events += 1;
                    0.0
                } else if !(0.0..=1.0).contains(&v) {
                    clamp_events += 1;
                    v.clamp(0.0, 1.0)
                } else {
                    v
                }
            })
            .collect();
        if clamp_events > 0 {
            log::warn!("{clamp_events} field values clamped into [0, 1]");
        }
        Ok(Self {
            axes,
            values,
            stderr,
            order,
            state_dim,
            provenance,
            clamp_events,
        })
    }

    /// Tabulates `f` at the grid nodes; `f` receives node coordinates in axis
    /// order.
    pub fn from_fn(
        axes: Vec<Axis>,
        order: InterpOrder,
        state_dim: usize,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let size: usize = axes.iter().map(|a| a.nodes.len()).product();
        let mut values = Vec::with_capacity(size);
        let mut idx = vec![0usize; axes.len()];
        for flat in 0..size {
            unflatten(&axes, flat, &mut idx);
            let c: Vec<f64> = idx.iter().zip(&axes).map(|(&k, a)| a.nodes[k]).collect();
            values.push(f(&c));
        }
        Self::new(
            axes,
            values,
            vec![0.0; size],
            order,
            state_dim,
            Provenance::default(),
        )
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn stderr(&self) -> &[f64] {
        &self.stderr
    }

    pub fn order(&self) -> InterpOrder {
        self.order
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    pub fn has_coord(&self, coord: Coord) -> bool {
        self.axes.iter().any(|a| a.coord == coord)
    }

    /// Coordinates of the node with flat index `flat`, in axis order.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0usize; self.axes.len()];
        unflatten(&self.axes, flat, &mut idx);
        idx.iter()
            .zip(&self.axes)
            .map(|(&k, a)| a.nodes[k])
            .collect()
    }

    fn axis_coords(&self, z: &AugmentedState) -> Result<Vec<f64>> {
        if z.x.len() != self.state_dim {
            return Err(Error::Dimension {
                what: "query state",
                expected: self.state_dim.to_string(),
                got: z.x.len().to_string(),
            });
        }
        let c = z.coords();
        Ok(self.axes.iter().map(|a| c[a.coord.index()]).collect())
    }

    fn project_coords(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.axes)
            .map(|(&v, a)| v.clamp(a.nodes[0], *a.nodes.last().unwrap()))
            .collect()
    }

    /// Interpolates at `z`; coordinates outside the grid are an error.
    pub fn query(&self, z: &AugmentedState) -> Result<FieldEval> {
        let q = self.axis_coords(z)?;
        for (a, (&v, axis)) in q.iter().zip(&self.axes).enumerate() {
            let lo = axis.nodes[0];
            let hi = *axis.nodes.last().unwrap();
            let tol = 1e-9 * (1.0 + (hi - lo).abs());
            if !(v >= lo - tol && v <= hi + tol) {
                return Err(Error::OutOfHull {
                    axis: a,
                    value: v,
                    nearest: self.project_coords(&q),
                });
            }
        }
        Ok(self.eval_at(&self.project_coords(&q), z.dim()))
    }

    /// Interpolates at the nearest point of the grid hull. Derivatives along
    /// a clamped axis are those of the boundary cell.
    pub fn query_clamped(&self, z: &AugmentedState) -> Result<FieldEval> {
        let q = self.axis_coords(z)?;
        Ok(self.eval_at(&self.project_coords(&q), z.dim()))
    }

    fn eval_at(&self, q: &[f64], zdim: usize) -> FieldEval {
        let d = self.axes.len();
        let last = &self.axes[d - 1];
        let n_last = last.nodes.len();
        let outer: Vec<Vec<(usize, [f64; 3])>> = self.axes[..d - 1]
            .iter()
            .zip(q)
            .map(|(a, &v)| weights(&a.nodes, v, self.order))
            .collect();
        let strides = strides(&self.axes);

        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = vec![vec![0.0; d]; d];
        let mut pick = vec![0usize; d - 1];
        loop {
            let mut offset = 0;
            for (a, &p) in pick.iter().enumerate() {
                offset += outer[a][p].0 * strides[a];
            }
            let line = &self.values[offset..offset + n_last];
            let jet = interpolate_line(&last.nodes, line, q[d - 1], self.order);
            // Products of outer weights with selected derivative orders.
            let w = |a: usize, order: usize| outer[a][pick[a]].1[order];
            let prod_except = |skip: &[usize]| -> f64 {
                (0..d - 1)
                    .filter(|a| !skip.contains(a))
                    .map(|a| w(a, 0))
                    .product()
            };
            let p0 = prod_except(&[]);
            value += p0 * jet.v;
            grad[d - 1] += p0 * jet.d1;
            hess[d - 1][d - 1] += p0 * jet.d2;
            for a in 0..d - 1 {
                let pa = prod_except(&[a]);
                grad[a] += w(a, 1) * pa * jet.v;
                hess[a][a] += w(a, 2) * pa * jet.v;
                hess[a][d - 1] += w(a, 1) * pa * jet.d1;
                for b in a + 1..d - 1 {
                    hess[a][b] += w(a, 1) * w(b, 1) * prod_except(&[a, b]) * jet.v;
                }
            }
            // Advance the odometer over outer stencils.
            let mut a = 0;
            while a < d - 1 {
                pick[a] += 1;
                if pick[a] < outer[a].len() {
                    break;
                }
                pick[a] = 0;
                a += 1;
            }
            if a == d - 1 {
                break;
            }
        }

        let mut out = FieldEval::constant(value, zdim);
        for a in 0..d {
            let i = self.axes[a].coord.index();
            out.grad[i] = grad[a];
            for b in a..d {
                let j = self.axes[b].coord.index();
                out.hess[(i, j)] = hess[a][b];
                out.hess[(j, i)] = hess[a][b];
            }
        }
        out
    }

    /// Whether node values move monotonically with the horizon in the
    /// direction the safety type implies (invariance: non-increasing, reach:
    /// non-decreasing), up to `tol`. `None` without a horizon axis.
    pub fn horizon_monotone(&self, reach: bool, tol: f64) -> Option<bool> {
        let a = self.axes.iter().position(|a| a.coord == Coord::Horizon)?;
        let strides = strides(&self.axes);
        let n_a = self.axes[a].nodes.len();
        let ok = (0..self.values.len())
            .filter(|flat| (flat / strides[a]) % n_a + 1 < n_a)
            .all(|flat| {
                let step = self.values[flat + strides[a]] - self.values[flat];
                if reach {
                    step >= -tol
                } else {
                    step <= tol
                }
            });
        Some(ok)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let io = |e: std::io::Error| Error::Format(e.to_string());
        writeln!(w, "{MAGIC} {FORMAT_VERSION}").map_err(io)?;
        let body = FieldFile {
            version: FORMAT_VERSION,
            field: self.clone(),
        };
        serde_json::to_writer(&mut w, &body).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w).map_err(io)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)
            .map_err(|e| Error::Format(e.to_string()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(Error::Format("missing field header".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format("unreadable format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format version {version}"
            )));
        }
        let body: FieldFile =
            serde_json::from_reader(r).map_err(|e| Error::Format(e.to_string()))?;
        let f = body.field;
        // Re-validate rather than trusting the file.
        let clamp_events = f.clamp_events;
        let mut g = Self::new(
            f.axes,
            f.values,
            f.stderr,
            f.order,
            f.state_dim,
            f.provenance,
        )?;
        g.clamp_events += clamp_events;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::read_from(file)
    }
}

impl ProbabilityField for SafeProbField {
    fn evaluate(&self, z: &AugmentedState) -> Result<FieldEval> {
        self.query(z)
    }
}

/// Wrapper that answers out-of-grid queries at the nearest in-grid point.
pub struct ClampedField<'a>(pub &'a SafeProbField);

impl ProbabilityField for ClampedField<'_> {
    fn evaluate(&self, z: &AugmentedState) -> Result<FieldEval> {
        self.0.query_clamped(z)
    }
}

fn strides(axes: &[Axis]) -> Vec<usize> {
    let mut s = vec![1usize; axes.len()];
    for a in (0..axes.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * axes[a + 1].nodes.len();
    }
    s
}

fn unflatten(axes: &[Axis], mut flat: usize, idx: &mut [usize]) {
    for a in (0..axes.len()).rev() {
        let n = axes[a].nodes.len();
        idx[a] = flat % n;
        flat /= n;
    }
}
