//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array1;

/// Maximizes a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..iters {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Composite Simpson rule with `intervals` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, intervals: usize) -> f64 {
    assert!(intervals.is_multiple_of(2));
    let h = (hi - lo) / intervals as f64;
    let mut sum = f(lo) + f(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h);
    }
    sum * h / 3.0
}

/// Rényi divergence D_α(N(0, σ²) ‖ N(gap, σ²)) by direct numerical
/// integration of (1/(α−1))·ln ∫ p^α q^(1−α), done in log space: the
/// log-integrand's peak is located numerically and factored out.
pub fn renyi_quadrature(order: f64, gap: f64, sigma_sq: f64) -> f64 {
    let sigma = sigma_sq.sqrt();
    let log_norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
    let log_p = |x: f64| log_norm - x * x / (2.0 * sigma_sq);
    let log_q = |x: f64| log_norm - (x - gap) * (x - gap) / (2.0 * sigma_sq);
    let log_integrand = |x: f64| order * log_p(x) + (1.0 - order) * log_q(x);
    let reach = (order + 1.0) * gap + 20.0 * sigma;
    let peak = golden_max(log_integrand, -reach, reach, 200);
    let m = log_integrand(peak);
    let width = 40.0 * sigma;
    let s = simpson(
        |x| (log_integrand(x) - m).exp(),
        peak - width,
        peak + width,
        8000,
    );
    (m + s.ln()) / (order - 1.0)
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&Array1<f64>) -> f64, theta: &Array1<f64>, h: f64) -> Array1<f64> {
    let mut g = Array1::zeros(theta.len());
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Least-squares non-increasing fit (pool adjacent violators).
pub fn antitonic_fit(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, count)
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.pop();
            let total = c1 + c2;
            *blocks.last_mut().unwrap() = ((m1 * c1 as f64 + m2 * c2 as f64) / total as f64, total);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}
