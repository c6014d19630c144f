//! Banded LU factorization with partial pivoting (LAPACK `gbtrf`/`gbtrs`
//! storage and algorithm, unblocked).

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals, stored column
/// by column with `kl` extra rows for pivoting fill-in.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    ab: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, ld, ab: vec![0.0; ld * n] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.ab.iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        j * self.ld + (self.kl + self.ku + i - j)
    }

    #[inline]
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && i + self.ku >= j && j + self.kl >= i
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.ab[k] += v;
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.ab[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            *yi = (lo..=hi).map(|j| self.ab[self.idx(i, j)] * x[j]).sum();
        }
    }

    /// Factors in place; the matrix content is consumed.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let kv = kl + ku;
        let ld = self.ld;
        let mut ipiv = vec![0usize; n];
        let mut ju = 0usize;
        let at = |i: usize, j: usize| j * ld + (kv + i - j);
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let mut jp = 0;
            let mut best = self.ab[at(j, j)].abs();
            for i in 1..=km {
                let v = self.ab[at(j + i, j)].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            ipiv[j] = j + jp;
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Invariant(format!("singular band matrix at column {j}")));
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    self.ab.swap(at(j, c), at(j + jp, c));
                }
            }
            if km > 0 {
                let piv = self.ab[at(j, j)];
                for i in 1..=km {
                    self.ab[at(j + i, j)] /= piv;
                }
                for c in j + 1..=ju {
                    let t = self.ab[at(j, c)];
                    if t != 0.0 {
                        for i in 1..=km {
                            let l = self.ab[at(j + i, j)];
                            self.ab[at(j + i, c)] -= l * t;
                        }
                    }
                }
            }
        }
        Ok(BandLu { m: self, ipiv })
    }
}

#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    ipiv: Vec<usize>,
}

impl BandLu {
    pub fn dim(&self) -> usize {
        self.m.n
    }

    pub fn solve(&self, b: &mut [f64]) {
        let (n, kl, ku, ld) = (self.m.n, self.m.kl, self.m.ku, self.m.ld);
        let kv = kl + ku;
        let ab = &self.m.ab;
        let at = |i: usize, j: usize| j * ld + (kv + i - j);
        for j in 0..n.saturating_sub(1) {
            let lm = kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            if bj != 0.0 {
                for i in 1..=lm {
                    b[j + i] -= ab[at(j + i, j)] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            b[j] /= ab[at(j, j)];
            let bj = b[j];
            if bj != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= ab[at(i, j)] * bj;
                }
            }
        }
    }
}
