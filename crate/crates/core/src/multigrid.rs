//! Multigrid-preconditioned conjugate gradients for `diag(c) − dt·L` on 2D
//! cell grids, where `L` is the two-point Neumann Laplacian and `c > 0`.
//!
//! Coarse levels are Galerkin products with piecewise-constant transfer, so
//! the V-cycle (symmetric Gauss-Seidel smoothing, exact coarsest solve) is a
//! symmetric positive definite preconditioner.

use crate::banded::BandMatrix;
use crate::grid::Grid;

/// Coarsening stops at this many cells; the last level is factorized.
const COARSEST_CELLS: usize = 256;
const SMOOTHING_SWEEPS: usize = 2;

struct Level {
    nx: usize,
    ny: usize,
    diag: Vec<f64>,
    /// Weights of interior x-faces, `(nx − 1)·ny`, row-major.
    tx: Vec<f64>,
    /// Weights of interior y-faces, `nx·(ny − 1)`.
    ty: Vec<f64>,
}

impl Level {
    fn apply(&self, w: &[f64], out: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        for k in 0..nx * ny {
            out[k] = self.diag[k] * w[k];
        }
        for j in 0..ny {
            for i in 0..nx - 1 {
                let (a, b) = (j * nx + i, j * nx + i + 1);
                let flux = self.tx[j * (nx - 1) + i] * (w[a] - w[b]);
                out[a] += flux;
                out[b] -= flux;
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let (a, b) = (j * nx + i, (j + 1) * nx + i);
                let flux = self.ty[j * nx + i] * (w[a] - w[b]);
                out[a] += flux;
                out[b] -= flux;
            }
        }
    }

    fn relax(&self, w: &mut [f64], r: &[f64], k: usize) {
        let (nx, ny) = (self.nx, self.ny);
        let (i, j) = (k % nx, k / nx);
        let mut num = r[k];
        let mut den = self.diag[k];
        if i > 0 {
            let t = self.tx[j * (nx - 1) + i - 1];
            num += t * w[k - 1];
            den += t;
        }
        if i + 1 < nx {
            let t = self.tx[j * (nx - 1) + i];
            num += t * w[k + 1];
            den += t;
        }
        if j > 0 {
            let t = self.ty[(j - 1) * nx + i];
            num += t * w[k - nx];
            den += t;
        }
        if j + 1 < ny {
            let t = self.ty[j * nx + i];
            num += t * w[k + nx];
            den += t;
        }
        w[k] = num / den;
    }

    fn coarsen(&self) -> Option<Level> {
        let (nx, ny) = (self.nx, self.ny);
        if nx * ny <= COARSEST_CELLS || nx % 2 != 0 || ny % 2 != 0 || nx < 4 || ny < 4 {
            return None;
        }
        let (cx, cy) = (nx / 2, ny / 2);
        let mut diag = vec![0.0; cx * cy];
        for j in 0..ny {
            for i in 0..nx {
                diag[(j / 2) * cx + i / 2] += self.diag[j * nx + i];
            }
        }
        let mut tx = vec![0.0; (cx - 1) * cy];
        for j in 0..ny {
            for ci in 0..cx - 1 {
                tx[(j / 2) * (cx - 1) + ci] += self.tx[j * (nx - 1) + 2 * ci + 1];
            }
        }
        let mut ty = vec![0.0; cx * (cy - 1)];
        for cj in 0..cy - 1 {
            for i in 0..nx {
                ty[cj * cx + i / 2] += self.ty[(2 * cj + 1) * nx + i];
            }
        }
        Some(Level { nx: cx, ny: cy, diag, tx, ty })
    }

    fn factorized(&self) -> BandMatrix {
        let (nx, ny) = (self.nx, self.ny);
        let mut a = BandMatrix::zeros(nx * ny, nx);
        for k in 0..nx * ny {
            a.add(k, k, self.diag[k]);
        }
        for j in 0..ny {
            for i in 0..nx - 1 {
                let (p, q, t) = (j * nx + i, j * nx + i + 1, self.tx[j * (nx - 1) + i]);
                a.add(p, p, t);
                a.add(q, q, t);
                a.add(p, q, -t);
                a.add(q, p, -t);
            }
        }
        for j in 0..ny - 1 {
            for i in 0..nx {
                let (p, q, t) = (j * nx + i, (j + 1) * nx + i, self.ty[j * nx + i]);
                a.add(p, p, t);
                a.add(q, q, t);
                a.add(p, q, -t);
                a.add(q, p, -t);
            }
        }
        a.factor();
        a
    }
}

pub(crate) struct Hierarchy {
    levels: Vec<Level>,
    coarsest: BandMatrix,
}

impl Hierarchy {
    /// Operator `diag(c) − dt·L` on a 2D grid.
    pub fn new(grid: &Grid, c: &[f64], dt: f64) -> Self {
        let [nx, ny] = grid.cells();
        let (wx, wy) = (dt / (grid.h(0) * grid.h(0)), dt / (grid.h(1) * grid.h(1)));
        let mut levels = vec![Level {
            nx,
            ny,
            diag: c.to_vec(),
            tx: vec![wx; (nx - 1) * ny],
            ty: vec![wy; nx * (ny - 1)],
        }];
        while let Some(next) = levels.last().unwrap().coarsen() {
            levels.push(next);
        }
        let coarsest = levels.last().unwrap().factorized();
        Hierarchy { levels, coarsest }
    }

    fn vcycle(&self, l: usize, r: &[f64]) -> Vec<f64> {
        if l + 1 == self.levels.len() {
            let mut e = r.to_vec();
            self.coarsest.substitute(&mut e);
            return e;
        }
        let level = &self.levels[l];
        let n = r.len();
        let mut e = vec![0.0; n];
        for _ in 0..SMOOTHING_SWEEPS {
            (0..n).for_each(|k| level.relax(&mut e, r, k));
        }
        let mut res = vec![0.0; n];
        level.apply(&e, &mut res);
        res.iter_mut().zip(r).for_each(|(x, b)| *x = b - *x);
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.nx * coarse.ny];
        for j in 0..level.ny {
            for i in 0..level.nx {
                rc[(j / 2) * coarse.nx + i / 2] += res[j * level.nx + i];
            }
        }
        let ec = self.vcycle(l + 1, &rc);
        for j in 0..level.ny {
            for i in 0..level.nx {
                e[j * level.nx + i] += ec[(j / 2) * coarse.nx + i / 2];
            }
        }
        for _ in 0..SMOOTHING_SWEEPS {
            (0..n).rev().for_each(|k| level.relax(&mut e, r, k));
        }
        e
    }

    /// Preconditioned CG to relative residual `tol`; `None` if it stalls.
    pub fn solve(&self, b: &[f64], tol: f64, max_iter: usize) -> Option<Vec<f64>> {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let fine = &self.levels[0];
        let n = b.len();
        let norm_b = dot(b, b).sqrt();
        let mut x = vec![0.0; n];
        if norm_b == 0.0 {
            return Some(x);
        }
        let mut r = b.to_vec();
        let mut z = self.vcycle(0, &r);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; n];
        for _ in 0..max_iter {
            fine.apply(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            if !alpha.is_finite() {
                return None;
            }
            x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r.iter_mut().zip(&ap).for_each(|(ri, ai)| *ri -= alpha * ai);
            if dot(&r, &r).sqrt() <= tol * norm_b {
                return Some(x);
            }
            z = self.vcycle(0, &r);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        None
    }
}
