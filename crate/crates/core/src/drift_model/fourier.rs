use std::f64::consts::PI;

/// `[sin(2πkt/T) for k = 1..n] ++ [cos(2πkt/T) for k = 1..n]`.
pub fn fourier_embed(t: f64, n_freq: usize, horizon: f64) -> Vec<f64> {
    let mut out = vec![0.0; 2 * n_freq];
    fourier_embed_into(t, n_freq, horizon, &mut out);
    out
}

pub(crate) fn fourier_embed_into(t: f64, n_freq: usize, horizon: f64, out: &mut [f64]) {
    let base = 2.0 * PI * t / horizon;
    let (sines, cosines) = out.split_at_mut(n_freq);
    for k in 0..n_freq {
        let (s, c) = (base * (k + 1) as f64).sin_cos();
        sines[k] = s;
        cosines[k] = c;
    }
}
