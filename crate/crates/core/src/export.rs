//! Activation export for external embedding, with a PCA quick-look.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::architectures::{Batch, Model, Tap};
use crate::error::{Error, Result};
use crate::types::{Sample, STAGES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationRow {
    pub year: i32,
    pub asd: usize,
    pub cutoff: usize,
    pub target: [f64; STAGES],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationTable {
    pub tap: Tap,
    pub width: usize,
    pub rows: Vec<ActivationRow>,
}

pub fn export_activations(model: &Model, items: &[&Sample], tap: Tap) -> Result<ActivationTable> {
    let mut rows = Vec::with_capacity(items.len());
    let mut width = 0;
    for chunk in items.chunks(512) {
        let a = model.activations(&Batch::from_samples(chunk)?, tap)?;
        width = a.cols();
        for (i, s) in chunk.iter().enumerate() {
            rows.push(ActivationRow {
                year: s.year,
                asd: s.asd,
                cutoff: s.features.cutoff_week,
                target: *s.target.as_array(),
                values: a.row(i).to_vec(),
            });
        }
    }
    Ok(ActivationTable { tap, width, rows })
}

impl ActivationTable {
    /// Columns: year, asd, cutoff_week, six target fractions, then `a0..a{width-1}`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("year,asd,cutoff_week");
        for st in crate::types::Stage::ALL {
            s.push_str(&format!(",target_{}", st.name()));
        }
        for j in 0..self.width {
            s.push_str(&format!(",a{j}"));
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{}", r.year, r.asd, r.cutoff));
            for v in r.target.iter().chain(&r.values) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.values.clone()).collect()
    }
}

/// Principal components of a row-sample matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm component directions, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

pub fn pca(rows: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Input("PCA needs at least 2 rows".into()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape("pca", "rows must share a non-zero width"));
    }
    let k = k.min(d);
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[c].max(0.0));
    }
    Ok(Pca { mean, components, explained_variance })
}

impl Pca {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }

    /// Projection of every table row onto the components, with the row keys.
    pub fn projection_csv(&self, table: &ActivationTable) -> String {
        let mut s = String::from("year,asd,cutoff_week");
        for j in 0..self.components.len() {
            s.push_str(&format!(",pc{}", j + 1));
        }
        s.push('\n');
        for r in &table.rows {
            s.push_str(&format!("{},{},{}", r.year, r.asd, r.cutoff));
            for v in self.project(&r.values) {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pca_finds_dominant_axis() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 - 25.0;
                vec![3.0 * t, 3.0 * t + if i % 2 == 0 { 0.1 } else { -0.1 }, 0.5]
            })
            .collect();
        let p = pca(&rows, 2).unwrap();
        let c = &p.components[0];
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0] - h).abs() < 1e-3 && (c[1] - h).abs() < 1e-3 && c[2].abs() < 1e-9);
        for a in &p.components {
            assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let dot: f64 = p.components[0].iter().zip(&p.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-12);
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
    }

    #[test]
    fn pca_rejects_ragged() {
        assert!(pca(&[vec![1.0, 2.0], vec![1.0]], 1).is_err());
        assert!(pca(&[vec![1.0]], 1).is_err());
    }
}
