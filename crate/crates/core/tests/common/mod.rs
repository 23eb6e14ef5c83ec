//! Brute-force reference computations that share no code with the library.

#![allow(dead_code)]

pub const SQRT_2PI: f64 = 2.5066282746310002;

/// Composite trapezoid rule with `n` panels.
pub fn trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = 0.5 * (f(a) + f(b));
    let mut c = 0.0;
    for i in 1..n {
        // Kahan summation keeps 10⁶ terms honest.
        let y = f(a + i as f64 * h) - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s * h
}

/// `∫ f dγ` for the standard Gaussian, on [-12, 12] with 10⁶ panels.
pub fn gauss_expect<F: Fn(f64) -> f64>(f: F) -> f64 {
    trapezoid(|x| f(x) * (-0.5 * x * x).exp() / SQRT_2PI, -12.0, 12.0, 1_000_000)
}

/// Probabilists' Hermite polynomial by the three-term recurrence.
pub fn hermite(k: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    if k == 0 {
        return a;
    }
    for j in 1..k {
        let c = x * b - j as f64 * a;
        a = b;
        b = c;
    }
    b
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// `g² log(g²/∫g²)` integrated against a density given as a closure.
pub fn entropy_of_square<G: Fn(f64) -> f64, D: Fn(f64) -> f64>(g: G, density: D, a: f64, b: f64, n: usize) -> f64 {
    let m2 = trapezoid(|x| g(x).powi(2) * density(x), a, b, n);
    trapezoid(
        |x| {
            let v = g(x).powi(2);
            if v == 0.0 {
                0.0
            } else {
                v * (v / m2).ln() * density(x)
            }
        },
        a,
        b,
        n,
    )
}

/// Standard normal density.
pub fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Roots of `h` in `[a, b]`, by a fine sign scan and bisection.
pub fn roots<H: Fn(f64) -> f64>(h: H, a: f64, b: f64, scan: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let step = (b - a) / scan as f64;
    for i in 0..scan {
        let (mut lo, mut hi) = (a + i as f64 * step, a + (i + 1) as f64 * step);
        let (flo, fhi) = (h(lo), h(hi));
        if flo == 0.0 {
            out.push(lo);
            continue;
        }
        if flo * fhi >= 0.0 {
            continue;
        }
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if h(m) * flo > 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    out
}

/// Composite midpoint rule; never evaluates at the interval ends.
pub fn midpoint<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let (mut s, mut c) = (0.0, 0.0);
    for i in 0..n {
        let y = f(a + (i as f64 + 0.5) * h) - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s * h
}

/// Midpoint rule on each piece between sorted break points, so one-sided
/// values at jumps are never mixed.
pub fn piecewise_midpoint<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], n: usize) -> f64 {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    pts.windows(2).map(|w| midpoint(&f, w[0], w[1], n)).sum()
}
