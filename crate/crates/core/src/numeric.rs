//! Scalar search primitives used by the solver: grid scan, golden-section
//! search, derivative bisection and predicate bisection.

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Where a bounded maximum was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Edge {
    Lower,
    Upper,
    Interior,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Maximum {
    pub x: f64,
    pub fx: f64,
    pub edge: Edge,
}

/// Evenly spaced grid on `[lo, hi]` with both endpoints included.
pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> + Clone {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |i| if i + 1 == n { hi } else { lo + step * i as f64 })
}

/// Golden-section search for a maximum of `f` on `[a, b]`, stopping once the
/// bracket is narrower than `tol`.
pub(crate) fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Root of a decreasing `g` on `[a, b]` with `g(a) > 0 > g(b)`, bisected to
/// machine precision.
pub(crate) fn bisect_decreasing<G: Fn(f64) -> f64>(g: G, mut a: f64, mut b: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if g(m) > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    if g(a).abs() <= g(b).abs() {
        a
    } else {
        b
    }
}

/// Boundary between `inside` (where `pred` holds) and `outside` (where it
/// does not). Returns the last point known to satisfy `pred`.
pub(crate) fn bisect_boundary<P: Fn(f64) -> bool>(pred: P, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..200 {
        let m = 0.5 * (inside + outside);
        if m == inside || m == outside {
            break;
        }
        if pred(m) {
            inside = m;
        } else {
            outside = m;
        }
    }
    inside
}

/// Maximizes a smooth `f` with derivative `df` on `[lo, hi]`: dense grid scan,
/// golden-section refinement on the winning bracket, then bisection on `df`
/// when the bracket contains a sign change.
pub(crate) fn maximize_on<F, D>(f: F, df: D, lo: f64, hi: f64, n: usize, tol: f64) -> Maximum
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if hi - lo <= tol {
        let (flo, fhi) = (f(lo), f(hi));
        return if flo >= fhi {
            Maximum { x: lo, fx: flo, edge: Edge::Lower }
        } else {
            Maximum { x: hi, fx: fhi, edge: Edge::Upper }
        };
    }
    let xs: Vec<f64> = linspace(lo, hi, n).collect();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        let v = f(x);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    let a = xs[best.saturating_sub(1)];
    let b = xs[(best + 1).min(n - 1)];
    let (da, db) = (df(a), df(b));

    if da > 0.0 && db < 0.0 {
        let x = bisect_decreasing(&df, a, b);
        return Maximum { x, fx: f(x), edge: Edge::Interior };
    }
    if best == 0 && da <= 0.0 {
        return Maximum { x: lo, fx: best_val, edge: Edge::Lower };
    }
    if best == n - 1 && db >= 0.0 {
        return Maximum { x: hi, fx: best_val, edge: Edge::Upper };
    }
    // flat or noisy derivative: trust the function values
    let x = golden_max(&f, a, b, tol);
    let fx = f(x);
    if fx >= best_val {
        Maximum { x, fx, edge: Edge::Interior }
    } else {
        Maximum { x: xs[best], fx: best_val, edge: Edge::Interior }
    }
}
