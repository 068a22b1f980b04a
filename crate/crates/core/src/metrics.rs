//! Additive metrics: the loss metric, the log-det metric, and linear fusion.
//!
//! All logarithms are natural logarithms.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fmt::decimal;

/// Symmetric, zero-diagonal, nonnegative matrix of distances between labeled
/// terminals. By convention inference treats the first label as the source.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl DistanceMatrix {
    /// `values` is row-major `labels.len() x labels.len()`.
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * n {
            return Err(Error::InvalidMatrix(format!(
                "{} values for {n} labels",
                values.len()
            )));
        }
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidMatrix("duplicate labels".into()));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "nonzero diagonal at {:?}",
                    labels[i]
                )));
            }
            for j in i + 1..n {
                let (a, b) = (values[i * n + j], values[j * n + i]);
                if a != b {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetric at ({:?}, {:?})",
                        labels[i], labels[j]
                    )));
                }
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(Error::InvalidMatrix(format!(
                        "entry ({:?}, {:?}) = {a} is not a finite nonnegative number",
                        labels[i], labels[j]
                    )));
                }
            }
        }
        Ok(Self { labels, values })
    }

    /// Builds a matrix from a function of the upper-triangle index pair.
    pub fn from_fn(labels: Vec<String>, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let n = labels.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                values[i * n + j] = d;
                values[j * n + i] = d;
            }
        }
        Self::new(labels, values)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.len() + j]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn require_index(&self, label: &str) -> Result<usize> {
        self.index_of(label)
            .ok_or_else(|| Error::LabelMismatch(format!("no label {label:?} in matrix")))
    }

    pub fn get_by_label(&self, a: &str, b: &str) -> Result<f64> {
        Ok(self.get(self.require_index(a)?, self.require_index(b)?))
    }

    /// Same matrix with rows and columns in the order of `labels`.
    pub fn reordered(&self, labels: &[String]) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LabelMismatch(format!(
                "{} labels requested, matrix has {}",
                labels.len(),
                self.len()
            )));
        }
        let idx = labels
            .iter()
            .map(|l| self.require_index(l))
            .collect::<Result<Vec<_>>>()?;
        Self::from_fn(labels.to_vec(), |i, j| self.get(idx[i], idx[j]))
    }

    /// Moves `label` to the front, keeping the others in order.
    pub fn with_source_first(&self, label: &str) -> Result<Self> {
        let i = self.require_index(label)?;
        let mut order = vec![self.labels[i].clone()];
        order.extend(
            self.labels
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != i)
                .map(|(_, l)| l.clone()),
        );
        self.reordered(&order)
    }

    /// Every entry multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_fn(self.labels.clone(), |i, j| c * self.get(i, j))
    }

    /// Largest absolute entrywise difference (same label order required).
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.labels != other.labels {
            return Err(Error::LabelMismatch("label order differs".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// CSV: a header row of labels, then the full matrix in label order with
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.labels)?;
        let n = self.len();
        for i in 0..n {
            out.write_record((0..n).map(|j| decimal(self.get(i, j), 17)))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(r);
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let n = labels.len();
        let mut values = Vec::with_capacity(n * n);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != n {
                return Err(Error::InvalidMatrix(format!(
                    "row {} has {} fields, expected {n}",
                    row + 1,
                    rec.len()
                )));
            }
            for field in rec.iter() {
                values.push(field.parse::<f64>().map_err(|_| {
                    Error::InvalidMatrix(format!("row {}: bad number {field:?}", row + 1))
                })?);
            }
        }
        Self::new(labels, values)
    }
}

/// Loss-metric link length `-ln(alpha)`.
pub fn loss_link_length(alpha: f64) -> Result<f64> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(-alpha.ln())
    } else {
        Err(Error::InvalidRate(alpha))
    }
}

/// Success rate `exp(-length)`, the inverse of [`loss_link_length`].
pub fn rate_from_length(length: f64) -> Result<f64> {
    if length > 0.0 && length.is_finite() {
        Ok((-length).exp())
    } else {
        Err(Error::InvalidLength(length))
    }
}

/// Marginal and joint reception probabilities of two terminals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLeafDistribution {
    pub p_i: f64,
    pub p_j: f64,
    pub p_ij: f64,
}

impl JointLeafDistribution {
    /// Checks the Fréchet bounds `max(0, p_i + p_j - 1) <= p_ij <= min(p_i, p_j)`.
    pub fn new(p_i: f64, p_j: f64, p_ij: f64) -> Result<Self> {
        const TOL: f64 = 1e-12;
        let in_unit = |p: f64| (0.0..=1.0).contains(&p);
        if !(in_unit(p_i) && in_unit(p_j) && in_unit(p_ij)) {
            return Err(Error::DegenerateDistribution(format!(
                "probabilities ({p_i}, {p_j}, {p_ij}) outside [0, 1]"
            )));
        }
        if p_ij > p_i.min(p_j) + TOL || p_ij < (p_i + p_j - 1.0).max(0.0) - TOL {
            return Err(Error::DegenerateDistribution(format!(
                "joint {p_ij} inconsistent with marginals {p_i}, {p_j}"
            )));
        }
        Ok(Self { p_i, p_j, p_ij })
    }
}

/// `ln(p_i p_j / p_ij^2)`.
pub fn true_loss_distance(dist: &JointLeafDistribution) -> Result<f64> {
    let JointLeafDistribution { p_i, p_j, p_ij } = *dist;
    if p_i <= 0.0 || p_j <= 0.0 || p_ij <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "zero reception probability".into(),
        ));
    }
    Ok((p_i * p_j / (p_ij * p_ij)).ln())
}

pub type Matrix2 = [[f64; 2]; 2];

fn det2(m: &Matrix2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Forward and backward 2x2 conditional tables between two binary outcomes.
///
/// `forward[a][b] = P(X_j = b | X_i = a)`, `backward[b][a] = P(X_i = a | X_j = b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionPair {
    pub forward: Matrix2,
    pub backward: Matrix2,
}

impl TransitionPair {
    pub fn new(forward: Matrix2, backward: Matrix2) -> Result<Self> {
        for m in [&forward, &backward] {
            for row in m {
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row[0] + row[1] - 1.0).abs() > 1e-9
                {
                    return Err(Error::DegenerateDistribution(format!(
                        "row {row:?} is not a probability vector"
                    )));
                }
            }
        }
        Ok(Self { forward, backward })
    }

    /// Conditionals from a joint table `joint[a][b] = P(X_i = a, X_j = b)`
    /// (or unnormalized counts). Every marginal must be positive.
    pub fn from_joint(joint: Matrix2) -> Result<Self> {
        let row = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
        let col = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
        if row.iter().chain(&col).any(|&m| m <= 0.0) {
            return Err(Error::DegenerateDistribution(
                "an outcome has zero marginal probability".into(),
            ));
        }
        let mut forward = [[0.0; 2]; 2];
        let mut backward = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                forward[a][b] = joint[a][b] / row[a];
                backward[b][a] = joint[a][b] / col[b];
            }
        }
        Self::new(forward, backward)
    }
}

/// Log-det distance `-ln|det forward| - ln|det backward|`.
pub fn log_det_distance(t: &TransitionPair) -> Result<f64> {
    let mut total = 0.0;
    for m in [&t.forward, &t.backward] {
        let d = det2(m).abs();
        if d == 0.0 {
            return Err(Error::SingularTransition);
        }
        if d >= 1.0 {
            return Err(Error::PermutationLike);
        }
        total -= d.ln();
    }
    Ok(total)
}

/// Entrywise `sum_k coeffs[k] * parts[k]`.
///
/// Parts may list the same labels in different orders; the output follows the
/// first part.
pub fn fuse_distances(parts: &[DistanceMatrix], coeffs: &[f64]) -> Result<DistanceMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidCoefficients(0.0))?;
    if parts.len() != coeffs.len() {
        return Err(Error::InvalidConfig(format!(
            "{} matrices but {} coefficients",
            parts.len(),
            coeffs.len()
        )));
    }
    let sum: f64 = coeffs.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidCoefficients(sum));
    }
    let aligned = parts
        .iter()
        .map(|p| p.reordered(first.labels()))
        .collect::<Result<Vec<_>>>()?;
    DistanceMatrix::from_fn(first.labels().to_vec(), |i, j| {
        aligned
            .iter()
            .zip(coeffs)
            .map(|(p, c)| c * p.get(i, j))
            .sum::<f64>()
    })
}
