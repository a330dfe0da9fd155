//! Small numeric helpers shared across modules.

/// `−t · log Σ_i exp(−x_i / t)`, evaluated with the minimum subtracted.
pub(crate) fn softmin(values: impl Iterator<Item = f64> + Clone, temperature: f64) -> f64 {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    if !lo.is_finite() {
        return lo;
    }
    let sum: f64 = values.map(|x| (-(x - lo) / temperature).exp()).sum();
    lo - temperature * sum.ln()
}

pub(crate) fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
