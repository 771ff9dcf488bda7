//! Small scalar root-finding and minimisation helpers.

/// Bisection on a bracket `[a, b]` with `f(a)` and `f(b)` of opposite sign.
/// Returns `None` when the bracket is not a sign change.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid scan followed by golden-section refinement. Returns `(x, f(x))` of the
/// smallest sampled value on `[a, b]`.
pub fn scan_min(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> (f64, f64) {
    let h = (b - a) / n as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for i in 0..=n {
        let v = f(a + i as f64 * h);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let lo = (a + (best as f64 - 1.0) * h).max(a);
    let hi = (a + (best as f64 + 1.0) * h).min(b);
    let x = golden_min(&f, lo, hi, 1e-13 * (1.0 + lo.abs().max(hi.abs())));
    let fx = f(x);
    if fx <= best_val {
        (x, fx)
    } else {
        (a + best as f64 * h, best_val)
    }
}

/// Composite Simpson rule on `n` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(2) + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Composite midpoint rule; never evaluates the endpoints.
pub fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10).is_none());
    }

    #[test]
    fn scan_min_locates_parabola_vertex() {
        let (x, fx) = scan_min(|x| (x - 0.3).powi(2) - 1.0, -2.0, 2.0, 100);
        assert!((x - 0.3).abs() < 1e-6);
        assert!((fx + 1.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - x + 1.0, 0.0, 2.0, 4);
        assert!((v - (4.0 - 2.0 + 2.0)).abs() < 1e-13);
    }
}
