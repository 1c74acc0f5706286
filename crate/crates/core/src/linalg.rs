//! Envelope (skyline) Cholesky for the symmetric positive definite FEM systems.
//!
//! The disk meshes are numbered ring by ring, so a Cuthill–McKee ordering
//! started at the centre gives a narrow profile whose rows grow towards the
//! boundary; the dense electrode block is appended last and only widens the
//! final rows.

use std::collections::VecDeque;

use crate::error::{EitError, Result};

/// Lower-triangular envelope: row `i` stores columns `first[i]..=i`.
#[derive(Debug, Clone)]
pub struct EnvelopePattern {
    first: Vec<usize>,
    offsets: Vec<usize>,
}

impl EnvelopePattern {
    /// `first[i]` is the smallest column index coupled to row `i` (at most `i`).
    pub fn new(first: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offsets.push(acc);
            acc += i - f + 1;
        }
        offsets.push(acc);
        EnvelopePattern { first, offsets }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn storage_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Storage position of entry `(i, j)`; the pair is symmetrised.
    pub fn position(&self, i: usize, j: usize) -> usize {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        debug_assert!(j >= self.first[i], "entry ({i},{j}) outside envelope");
        self.offsets[i] + (j - self.first[i])
    }

    fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Symmetric matrix stored in an envelope pattern (lower triangle).
#[derive(Debug, Clone)]
pub struct EnvelopeMatrix<'p> {
    pattern: &'p EnvelopePattern,
    values: Vec<f64>,
}

impl<'p> EnvelopeMatrix<'p> {
    pub fn zeros(pattern: &'p EnvelopePattern) -> Self {
        EnvelopeMatrix {
            pattern,
            values: vec![0.0; pattern.storage_len()],
        }
    }

    pub fn from_values(pattern: &'p EnvelopePattern, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), pattern.storage_len());
        EnvelopeMatrix { pattern, values }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let pos = self.pattern.position(i, j);
        self.values[pos] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.pattern.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let f = self.pattern.first[i];
            let row = &self.values[self.pattern.row(i)];
            let (diag, off) = row.split_last().unwrap();
            let mut acc = diag * x[i];
            for (k, &a) in off.iter().enumerate() {
                acc += a * x[f + k];
                y[f + k] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// In-place Cholesky factorisation `A = L Lᵀ`.
    pub fn factor(self) -> Result<EnvelopeCholesky<'p>> {
        let pat = self.pattern;
        let mut l = self.values;
        for i in 0..pat.dim() {
            let fi = pat.first[i];
            let ri = pat.offsets[i];
            for j in fi..i {
                let fj = pat.first[j];
                let rj = pat.offsets[j];
                let k0 = fi.max(fj);
                let a = &l[ri + (k0 - fi)..ri + (j - fi)];
                let b = &l[rj + (k0 - fj)..rj + (j - fj)];
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let djj = l[rj + (j - fj)];
                l[ri + (j - fi)] = (l[ri + (j - fi)] - dot) / djj;
            }
            let row = &l[ri..ri + (i - fi)];
            let sq: f64 = row.iter().map(|x| x * x).sum();
            let d = l[ri + (i - fi)] - sq;
            if !(d > 0.0) || !d.is_finite() {
                return Err(EitError::Numerical(format!(
                    "matrix is not positive definite (pivot {i} = {d:e})"
                )));
            }
            l[ri + (i - fi)] = d.sqrt();
        }
        Ok(EnvelopeCholesky { pattern: pat, l })
    }
}

#[derive(Debug, Clone)]
pub struct EnvelopeCholesky<'p> {
    pattern: &'p EnvelopePattern,
    l: Vec<f64>,
}

impl EnvelopeCholesky<'_> {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let pat = self.pattern;
        let n = pat.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let f = pat.first[i];
            let row = &self.l[pat.row(i)];
            let (diag, off) = row.split_last().unwrap();
            let dot: f64 = off.iter().zip(&y[f..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / diag;
        }
        for i in (0..n).rev() {
            let f = pat.first[i];
            let row = &self.l[pat.row(i)];
            let (diag, off) = row.split_last().unwrap();
            y[i] /= diag;
            let xi = y[i];
            for (k, &a) in off.iter().enumerate() {
                y[f + k] -= a * xi;
            }
        }
        y
    }
}

/// Cuthill–McKee ordering from `start`; unreachable nodes are appended by
/// restarting from the lowest-index unvisited node. Returns `order[new] = old`.
pub fn cuthill_mckee(adjacency: &[Vec<usize>], start: usize) -> Vec<usize> {
    let n = adjacency.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut seeds = std::iter::once(start).chain(0..n);
    while order.len() < n {
        let seed = loop {
            let s = seeds.next().expect("seeds cover every node");
            if !visited[s] {
                break s;
            }
        };
        visited[seed] = true;
        queue.push_back(seed);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nb: Vec<usize> = adjacency[v].iter().copied().filter(|&k| !visited[k]).collect();
            nb.sort_by_key(|&k| (adjacency[k].len(), k));
            for k in nb {
                visited[k] = true;
                queue.push_back(k);
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, band: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i.saturating_sub(band)..i {
                if rng.random_bool(0.6) {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    a[i][j] = v;
                    a[j][i] = v;
                }
            }
        }
        for i in 0..n {
            let s: f64 = a[i].iter().map(|x| x.abs()).sum();
            a[i][i] = s + 1.0;
        }
        a
    }

    #[test]
    fn factor_solves_banded_system() {
        let n = 40;
        let dense = random_spd(n, 5, 1);
        let first: Vec<usize> = (0..n)
            .map(|i| (0..=i).find(|&j| dense[i][j] != 0.0).unwrap())
            .collect();
        let pat = EnvelopePattern::new(first);
        let mut m = EnvelopeMatrix::zeros(&pat);
        for i in 0..n {
            for j in pat.first[i]..=i {
                m.add(i, j, dense[i][j]);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = m.mul_vec(&x_true);
        let dense_b: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| dense[i][j] * x_true[j]).sum())
            .collect();
        for (u, v) in b.iter().zip(&dense_b) {
            assert!((u - v).abs() < 1e-12);
        }
        let x = m.factor().unwrap().solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let pat = EnvelopePattern::new(vec![0, 0]);
        let mut m = EnvelopeMatrix::zeros(&pat);
        m.add(0, 0, 1.0);
        m.add(1, 0, 2.0);
        m.add(1, 1, 1.0);
        assert!(matches!(m.factor(), Err(EitError::Numerical(_))));
    }

    #[test]
    fn cuthill_mckee_is_a_permutation() {
        let adj = vec![vec![1], vec![0, 2], vec![1], vec![]];
        let order = cuthill_mckee(&adj, 2);
        assert_eq!(order, vec![2, 1, 0, 3]);
    }
}
