//! Reference implementations used as oracles by the integration tests.
//! Nothing here calls into the library's numerics.

#![allow(dead_code)]

/// Eigenvalues of a symmetric matrix (row-major `n × n`) by cyclic Jacobi
/// rotations, sorted nonincreasing.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Lower Cholesky factor of a row-major SPD matrix, `None` if not positive definite.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Negative log marginal likelihood of a zero-mean GP with kernel
/// `v exp(-d²/(2l))`. Jitter starts at `jitter` and doubles up to `1e-6 trace`;
/// `f64::INFINITY` if the kernel never factors.
pub fn gp_nlml(inputs: &[Vec<f64>], y: &[f64], v: f64, l: f64, jitter: f64) -> f64 {
    let n = inputs.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d2: f64 = inputs[i].iter().zip(&inputs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            k[i * n + j] = v * (-d2 / (2.0 * l)).exp();
        }
    }
    let cap = 1e-6 * v * n as f64;
    let mut eps = jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[i * n + i] += eps;
        }
        if let Some(low) = cholesky(&kj, n) {
            // forward substitution L z = y
            let mut z = vec![0.0; n];
            for i in 0..n {
                let s: f64 = (0..i).map(|k| low[i * n + k] * z[k]).sum();
                z[i] = (y[i] - s) / low[i * n + i];
            }
            let quad: f64 = z.iter().map(|v| v * v).sum();
            let logdet: f64 = (0..n).map(|i| low[i * n + i].ln()).sum::<f64>() * 2.0;
            return 0.5 * quad + 0.5 * logdet + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        }
        eps *= 2.0;
        if eps > cap {
            return f64::INFINITY;
        }
    }
}

/// Normalized Gaussian-score weights `exp(-½ r²/σ²) / Σ`, evaluated in the
/// log domain so the row stays defined when every score underflows.
pub fn softmax_weights(residuals: &[f64], sigma: f64) -> Vec<f64> {
    let logs: Vec<f64> = residuals.iter().map(|r| -0.5 * r * r / (sigma * sigma)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_l2(pred: &[f64], truth: &[f64]) -> f64 {
    let d: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| a - b).collect();
    l2(&d) / l2(truth)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
