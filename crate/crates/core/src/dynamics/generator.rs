use crate::error::{Error, Result};

/// Off-diagonal jump rates in compressed-row form; the diagonal is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGenerator {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
}

impl SparseGenerator {
    /// Builds from per-row (target, rate) lists. Duplicate targets are
    /// summed, self-loops and zero rates dropped.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let n = rows.len();
        if n > u32::MAX as usize {
            return Err(Error::Capacity("too many states".into()));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut rates = Vec::new();
        offsets.push(0);
        for (i, mut row) in rows.into_iter().enumerate() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<u32> = None;
            for (j, r) in row {
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::Contract(format!("rate {r} from state {i} to {j}")));
                }
                if j as usize >= n {
                    return Err(Error::Domain(format!("target {j} out of range")));
                }
                if j as usize == i || r == 0.0 {
                    continue;
                }
                if last == Some(j) {
                    *rates.last_mut().unwrap() += r;
                } else {
                    targets.push(j);
                    rates.push(r);
                    last = Some(j);
                }
            }
            offsets.push(targets.len());
        }
        Ok(Self { offsets, targets, rates })
    }

    /// From a dense row-major matrix; diagonal entries are ignored.
    pub fn from_dense(n: usize, m: &[f64]) -> Result<Self> {
        if m.len() != n * n {
            return Err(Error::Domain("dense generator must be n x n".into()));
        }
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| (j as u32, m[i * n + j])).collect())
            .collect();
        Self::from_rows(rows)
    }

    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.targets[a..b].iter().zip(&self.rates[a..b]).map(|(&j, &r)| (j as usize, r))
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn exit_rate(&self, i: usize) -> f64 {
        self.rates[self.offsets[i]..self.offsets[i + 1]].iter().sum()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        match self.targets[a..b].binary_search(&(j as u32)) {
            Ok(k) => self.rates[a + k],
            Err(_) => 0.0,
        }
    }

    pub fn max_exit_rate(&self) -> f64 {
        (0..self.dim()).map(|i| self.exit_rate(i)).fold(0.0, f64::max)
    }

    /// Row vector times generator: (v L)_j.
    pub fn left_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let mut exit = 0.0;
            for (j, r) in self.row(i) {
                out[j] += vi * r;
                exit += r;
            }
            out[i] -= vi * exit;
        }
        out
    }

    /// Generator applied to a function: (L f)(i).
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| self.row(i).map(|(j, r)| r * (f[j] - f[i])).sum()).collect()
    }

    /// Incoming edges per state.
    pub fn transpose_rows(&self) -> Vec<Vec<(u32, f64)>> {
        let mut inc = vec![Vec::new(); self.dim()];
        for i in 0..self.dim() {
            for (j, r) in self.row(i) {
                inc[j].push((i as u32, r));
            }
        }
        inc
    }

    /// True if every state reaches every other.
    pub fn is_irreducible(&self) -> bool {
        let n = self.dim();
        if n == 0 {
            return false;
        }
        let reach = |adj: &dyn Fn(usize, &mut dyn FnMut(usize))| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(i) = stack.pop() {
                adj(i, &mut |j| {
                    if !seen[j] {
                        seen[j] = true;
                        count += 1;
                        stack.push(j);
                    }
                });
            }
            count == n
        };
        let inc = self.transpose_rows();
        reach(&|i, f| self.row(i).for_each(|(j, _)| f(j))) && reach(&|i, f| inc[i].iter().for_each(|&(j, _)| f(j as usize)))
    }

    /// Dense row-major copy with the diagonal filled in.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim();
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for (j, r) in self.row(i) {
                m[i * n + j] += r;
                m[i * n + i] -= r;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_and_lookup() {
        let g = SparseGenerator::from_rows(vec![vec![(1, 1.0), (1, 0.5), (0, 9.0)], vec![(0, 2.0)]]).unwrap();
        assert_eq!(g.rate(0, 1), 1.5);
        assert_eq!(g.rate(0, 0), 0.0);
        assert_eq!(g.exit_rate(1), 2.0);
        assert_eq!(g.out_degree(0), 1);
        let ones = g.apply(&[1.0, 1.0]);
        assert_eq!(ones, vec![0.0, 0.0]);
        assert!(g.is_irreducible());
    }

    #[test]
    fn negative_rate_rejected() {
        assert!(SparseGenerator::from_rows(vec![vec![(1, -1.0)], vec![]]).is_err());
    }

    #[test]
    fn reducible_detected() {
        let g = SparseGenerator::from_rows(vec![vec![(1, 1.0)], vec![], vec![(0, 1.0)]]).unwrap();
        assert!(!g.is_irreducible());
    }
}
