use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Centered STFT with a periodic Hann window of `win_length` zero-padded to
/// `n_fft`, reflection padding of `n_fft / 2` at both ends.
pub struct Stft {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        let mut window = vec![0.0; n_fft];
        let off = (n_fft - win_length) / 2;
        for i in 0..win_length {
            window[off + i] = 0.5 - 0.5 * (2.0 * PI * i as f64 / win_length as f64).cos();
        }
        Stft {
            n_fft,
            win_length,
            hop,
            window,
            fft: planner.plan_fft_forward(n_fft),
            ifft: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex spectrum, `n_bins × n_frames`; frame `k` is centered on sample `k * hop`.
    pub fn forward(&self, x: &[f64], n_frames: usize) -> Array2<Complex64> {
        let n = x.len();
        let half = (self.n_fft / 2) as isize;
        let mut out = Array2::zeros((self.n_bins(), n_frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for k in 0..n_frames {
            let start = (k * self.hop) as isize - half;
            for (i, b) in buf.iter_mut().enumerate() {
                let w = self.window[i];
                let s = if w == 0.0 || n == 0 {
                    0.0
                } else {
                    x[reflect(start + i as isize, n)]
                };
                *b = Complex64::new(s * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (bin, v) in buf.iter().take(self.n_bins()).enumerate() {
                out[[bin, k]] = *v;
            }
        }
        out
    }

    pub fn magnitude(&self, x: &[f64], n_frames: usize) -> Array2<f64> {
        self.forward(x, n_frames).mapv(|c| c.norm())
    }

    /// Weighted overlap-add inverse producing `len` samples.
    pub fn inverse(&self, spec: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let n_frames = spec.ncols();
        let half = (self.n_fft / 2) as isize;
        let mut out = vec![0.0; len];
        let mut wsum = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.ifft.get_inplace_scratch_len()];
        let nb = self.n_bins();
        let scale = 1.0 / self.n_fft as f64;
        for k in 0..n_frames {
            for bin in 0..nb {
                buf[bin] = spec[[bin, k]];
            }
            for bin in nb..self.n_fft {
                buf[bin] = spec[[self.n_fft - bin, k]].conj();
            }
            self.ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = (k * self.hop) as isize - half;
            for (i, b) in buf.iter().enumerate() {
                let w = self.window[i];
                if w == 0.0 {
                    continue;
                }
                let pos = start + i as isize;
                if pos < 0 || pos >= len as isize {
                    continue;
                }
                out[pos as usize] += b.re * scale * w;
                wsum[pos as usize] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&wsum) {
            if *w > 1e-8 {
                *o /= w;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-6, 5), 2);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn inverse_of_forward_is_identity_in_interior() {
        let stft = Stft::new(1024, 640, 320);
        let x: Vec<f64> = (0..8000).map(|i| ((i as f64) * 0.037).sin() * 0.3 + ((i * 7 % 13) as f64 - 6.0) * 0.01).collect();
        let n_frames = x.len().div_ceil(320);
        let y = stft.inverse(&stft.forward(&x, n_frames), x.len());
        for i in 320..7680 {
            assert!((x[i] - y[i]).abs() < 1e-9, "sample {i}");
        }
    }
}
