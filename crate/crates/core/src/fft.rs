//! Complex FFTs on split real/imaginary buffers.
//!
//! Power-of-two lengths use an iterative radix-2 transform; any other length
//! goes through Bluestein's chirp-z algorithm on a padded power-of-two
//! transform. Both directions are unnormalized: `inverse(forward(x)) = n * x`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{cos, sin, PI};

/// A precomputed 1-D transform of a fixed length.
#[derive(Debug, Clone)]
pub struct Plan {
    n: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

#[derive(Debug, Clone)]
struct Bluestein {
    m: usize,
    inner: Radix2,
    // chirp w_k = exp(-i pi k^2 / n)
    chirp_re: Vec<f64>,
    chirp_im: Vec<f64>,
    // forward transform of the conjugate chirp, zero-padded and wrapped
    kern_re: Vec<f64>,
    kern_im: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Radix2 {
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        let half = n / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for k in 0..half {
            let a = -2.0 * PI * k as f64 / n as f64;
            tw_re.push(cos(a));
            tw_im.push(sin(a));
        }
        Self { tw_re, tw_im }
    }

    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool) {
        radix2_with(&self.tw_re, &self.tw_im, re, im, inverse);
    }
}

impl Plan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "fft length must be positive");
        if n.is_power_of_two() {
            return Self { n, kind: PlanKind::Radix2(Radix2::new(n)) };
        }
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        let mut chirp_re = Vec::with_capacity(n);
        let mut chirp_im = Vec::with_capacity(n);
        for k in 0..n {
            // k^2 mod 2n keeps the angle small for large k
            let k2 = (k * k) % (2 * n);
            let a = -PI * k2 as f64 / n as f64;
            chirp_re.push(cos(a));
            chirp_im.push(sin(a));
        }
        let mut kern_re = vec![0.0; m];
        let mut kern_im = vec![0.0; m];
        kern_re[0] = chirp_re[0];
        kern_im[0] = -chirp_im[0];
        for k in 1..n {
            kern_re[k] = chirp_re[k];
            kern_im[k] = -chirp_im[k];
            kern_re[m - k] = chirp_re[k];
            kern_im[m - k] = -chirp_im[k];
        }
        inner.run(&mut kern_re, &mut kern_im, false);
        Self {
            n,
            kind: PlanKind::Bluestein(Bluestein { m, inner, chirp_re, chirp_im, kern_re, kern_im }),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Transforms `re + i*im` in place. `scratch` must hold at least
    /// `2 * m` values for Bluestein plans (ignored for radix-2).
    pub fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool, scratch: &mut Vec<f64>) {
        debug_assert_eq!(re.len(), self.n);
        match &self.kind {
            PlanKind::Radix2(r) => r.run(re, im, inverse),
            PlanKind::Bluestein(b) => b.run(re, im, inverse, scratch),
        }
    }
}

fn radix2_with(tw_re: &[f64], tw_im: &[f64], re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let wr = tw_re[k * stride];
                let wi = sign * tw_im[k * stride];
                let a = start + k;
                let b = a + half;
                let xr = re[b] * wr - im[b] * wi;
                let xi = re[b] * wi + im[b] * wr;
                re[b] = re[a] - xr;
                im[b] = im[a] - xi;
                re[a] += xr;
                im[a] += xi;
            }
        }
        len *= 2;
    }
}

impl Bluestein {
    fn run(&self, re: &mut [f64], im: &mut [f64], inverse: bool, scratch: &mut Vec<f64>) {
        let n = re.len();
        let m = self.m;
        scratch.clear();
        scratch.resize(2 * m, 0.0);
        let (ar, ai) = scratch.split_at_mut(m);
        // inverse = conjugate, forward, conjugate
        let s = if inverse { -1.0 } else { 1.0 };
        for k in 0..n {
            let (xr, xi) = (re[k], s * im[k]);
            let (cr, ci) = (self.chirp_re[k], self.chirp_im[k]);
            ar[k] = xr * cr - xi * ci;
            ai[k] = xr * ci + xi * cr;
        }
        self.inner.run(ar, ai, false);
        for k in 0..m {
            let (xr, xi) = (ar[k], ai[k]);
            let (kr, ki) = (self.kern_re[k], self.kern_im[k]);
            ar[k] = xr * kr - xi * ki;
            ai[k] = xr * ki + xi * kr;
        }
        self.inner.run(ar, ai, true);
        let inv_m = 1.0 / m as f64;
        for k in 0..n {
            let (xr, xi) = (ar[k] * inv_m, ai[k] * inv_m);
            let (cr, ci) = (self.chirp_re[k], self.chirp_im[k]);
            re[k] = xr * cr - xi * ci;
            im[k] = s * (xr * ci + xi * cr);
        }
    }
}

/// Unnormalized 2-D transform of a row-major `h x w` complex buffer.
pub fn fft2_inplace(h: usize, w: usize, re: &mut [f64], im: &mut [f64], inverse: bool) {
    assert_eq!(re.len(), h * w);
    assert_eq!(im.len(), h * w);
    let row_plan = Plan::new(w);
    let col_plan = if h == w { row_plan.clone() } else { Plan::new(h) };
    let mut scratch = Vec::new();
    for y in 0..h {
        let r = y * w..(y + 1) * w;
        row_plan.run(&mut re[r.clone()], &mut im[r], inverse, &mut scratch);
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col_re[y] = re[y * w + x];
            col_im[y] = im[y * w + x];
        }
        col_plan.run(&mut col_re, &mut col_im, inverse, &mut scratch);
        for y in 0..h {
            re[y * w + x] = col_re[y];
            im[y * w + x] = col_im[y];
        }
    }
}

/// Index of the frequency bin `-k` for each bin `k` of an `h x w` grid.
pub fn conjugate_index(h: usize, w: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let cy = (h - y) % h;
            let cx = (w - x) % w;
            idx.push(cy * w + cx);
        }
    }
    idx
}
