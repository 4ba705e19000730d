//! Banded LU without pivoting.
//!
//! The implicit diffusion Jacobians are column diagonally dominant
//! M-matrices, for which elimination without pivoting is stable.

pub(crate) struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        debug_assert!(r.abs_diff(c) <= self.bw);
        r * (2 * self.bw + 1) + (c + self.bw - r)
    }

    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let k = self.slot(r, c);
        self.data[k] += v;
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[self.slot(r, c)]
    }

    /// Factorizes in place and overwrites `rhs` with the solution.
    pub fn solve(mut self, rhs: &mut [f64]) {
        self.factor();
        self.substitute(rhs);
    }

    /// In-place LU: multipliers below the diagonal, `U` on and above it.
    pub fn factor(&mut self) {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let pivot = self.get(k, k);
            let last = (k + bw).min(n - 1);
            for r in (k + 1)..=last {
                let factor = self.get(r, k) / pivot;
                let slot = self.slot(r, k);
                self.data[slot] = factor;
                if factor == 0.0 {
                    continue;
                }
                for c in (k + 1)..=last {
                    let v = self.get(k, c);
                    if v != 0.0 {
                        self.add(r, c, -factor * v);
                    }
                }
            }
        }
    }

    /// Solves with a matrix already passed through [`BandMatrix::factor`].
    pub fn substitute(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let last = (k + bw).min(n - 1);
            for r in (k + 1)..=last {
                let factor = self.get(r, k);
                if factor != 0.0 {
                    rhs[r] -= factor * rhs[k];
                }
            }
        }
        for k in (0..n).rev() {
            let last = (k + bw).min(n - 1);
            let mut acc = rhs[k];
            for c in (k + 1)..=last {
                acc -= self.get(k, c) * rhs[c];
            }
            rhs[k] = acc / self.get(k, k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_tridiagonal_and_pentadiagonal() {
        for bw in [1usize, 3] {
            let n = 12;
            let mut a = BandMatrix::zeros(n, bw);
            let mut dense = vec![vec![0.0; n]; n];
            for r in 0..n {
                for c in r.saturating_sub(bw)..=(r + bw).min(n - 1) {
                    let v = if r == c { 10.0 + r as f64 } else { -1.0 - 0.1 * (r + c) as f64 / n as f64 };
                    if r == c || r.abs_diff(c) == 1 || r.abs_diff(c) == bw {
                        a.add(r, c, v);
                        dense[r][c] = v;
                    }
                }
            }
            let x: Vec<f64> = (0..n).map(|k| (k as f64).sin()).collect();
            let mut b: Vec<f64> = dense.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect();
            a.solve(&mut b);
            for k in 0..n {
                assert!((b[k] - x[k]).abs() < 1e-12);
            }
        }
    }
}
