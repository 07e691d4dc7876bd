//! Banded LU factorization with partial pivoting.
//!
//! Storage follows the LINPACK layout: row interchanges are recorded per
//! elimination step and replayed during the solves, so the lower factor
//! never has to be permuted after the fact. Each row keeps the columns
//! `[i - kl, i + kl + ku]`, which is enough room for the fill-in produced
//! by pivoting.

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.slot(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside the declared band"
        );
        let s = self.slot(i, j);
        self.data[s] = value;
    }

    /// Factorizes in place. Returns `None` when a pivot column is numerically zero.
    pub fn factorize(mut self) -> Option<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let mut pivots = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * f64::EPSILON * 16.0;

        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in (k + 1)..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return None;
            }
            pivots[k] = p;
            let jmax = (k + reach).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in (k + 1)..=last {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                self.data[s] = 0.0;
                lower[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    for j in (k + 1)..=jmax {
                        let u = self.data[self.slot(k, j)];
                        let t = self.slot(i, j);
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        Some(BandLu {
            upper: self,
            lower,
            pivots,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    upper: BandMatrix,
    lower: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.upper.n;
        let kl = self.upper.kl;
        let reach = kl + self.upper.ku;
        assert_eq!(b.len(), n);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(n - 1);
            let bk = b[k];
            for i in (k + 1)..=last {
                b[i] -= self.lower[k * kl + (i - k - 1)] * bk;
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + reach).min(n - 1);
            let mut acc = b[k];
            for j in (k + 1)..=jmax {
                acc -= self.upper.get(k, j) * b[j];
            }
            b[k] = acc / self.upper.get(k, k);
        }
    }

    /// Solves `Aᵀ y = c` in place.
    pub fn solve_transpose_in_place(&self, c: &mut [f64]) {
        let n = self.upper.n;
        let kl = self.upper.kl;
        let reach = kl + self.upper.ku;
        assert_eq!(c.len(), n);
        for k in 0..n {
            let jmin = k.saturating_sub(reach);
            let mut acc = c[k];
            for j in jmin..k {
                acc -= self.upper.get(j, k) * c[j];
            }
            c[k] = acc / self.upper.get(k, k);
        }
        for k in (0..n).rev() {
            let last = (k + kl).min(n - 1);
            let mut acc = 0.0;
            for i in (k + 1)..=last {
                acc += self.lower[k * kl + (i - k - 1)] * c[i];
            }
            c[k] -= acc;
            let p = self.pivots[k];
            if p != k {
                c.swap(k, p);
            }
        }
    }
}
