use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{AudioClip, MelProcessor, MelSpec};

const NNLS_ITERS: usize = 60;

/// Non-negative least squares `min ||fb · s - mel||²` s.t. `s >= 0`, solved
/// column-wise in one batch with accelerated projected gradient.
pub fn nnls_magnitude(fb: &Array2<f64>, mel: &Array2<f64>, iters: usize) -> Array2<f64> {
    let fbt = fb.t();
    // Lipschitz constant of the gradient: largest eigenvalue of fbᵀfb
    let gram = fb.dot(&fbt);
    let mut v = Array2::from_elem((gram.nrows(), 1), 1.0);
    let mut lip = 1.0;
    for _ in 0..50 {
        let w = gram.dot(&v);
        lip = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lip == 0.0 {
            return Array2::zeros((fb.ncols(), mel.ncols()));
        }
        v = w / lip;
    }
    let step = 1.0 / lip;

    // Jacobi-scaled back-projection as the starting point
    let diag = fbt.dot(&fb.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1)));
    let mut s = fbt.dot(mel);
    Zip::from(s.rows_mut()).and(diag.rows()).for_each(|mut row, d| {
        let d = d[0];
        row.mapv_inplace(|x| if d > 1e-12 { (x / d).max(0.0) } else { 0.0 });
    });
    let mut y = s.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let resid = fb.dot(&y) - mel;
        let grad = fbt.dot(&resid);
        let next = (&y - &(grad * step)).mapv(|x| x.max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = &next + &((&next - &s) * momentum);
        y.mapv_inplace(|x| x.max(0.0));
        s = next;
        t = t_next;
    }
    s
}

pub struct GriffinLim<'a> {
    proc: &'a MelProcessor,
}

impl<'a> GriffinLim<'a> {
    pub fn new(proc: &'a MelProcessor) -> Self {
        GriffinLim { proc }
    }

    /// Runs `iters` (at least one) projections. Returns the audio, `T · hop`
    /// samples long, and the spectral convergence after every iteration.
    pub fn run(&self, m: &MelSpec, iters: usize, seed: u64) -> (AudioClip, Vec<f64>) {
        let cfg = &self.proc.cfg;
        let iters = iters.max(1);
        let n_frames = m.values.ncols();
        let len = n_frames * cfg.hop;
        let lin = m.values.mapv(|v| (v.exp() - cfg.log_floor).max(0.0));
        let target = nnls_magnitude(&self.proc.filterbank, &lin, NNLS_ITERS);
        let target_norm = target.iter().map(|x| x * x).sum::<f64>().sqrt();
        if target_norm == 0.0 {
            return (AudioClip::new(vec![0.0; len], cfg.sample_rate), vec![0.0; iters]);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec: Array2<Complex64> = target.mapv(|a| {
            let phi: f64 = rng.random::<f64>() * 2.0 * PI;
            Complex64::from_polar(a, phi)
        });
        let stft = &self.proc.stft;
        let mut log = Vec::with_capacity(iters);
        let mut audio = stft.inverse(&spec, len);
        for _ in 0..iters {
            let rebuilt = stft.forward(&audio, n_frames);
            let mut err = 0.0;
            Zip::from(&mut spec)
                .and(&rebuilt)
                .and(&target)
                .for_each(|s, r, &a| {
                    let mag = r.norm();
                    err += (a - mag) * (a - mag);
                    *s = if mag > 1e-12 { r * (a / mag) } else { Complex64::new(a, 0.0) };
                });
            log.push(err.sqrt() / target_norm);
            audio = stft.inverse(&spec, len);
        }
        (AudioClip::new(audio, cfg.sample_rate), log)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{mel_center_frequencies, MelConfig, MelProcessor, SAMPLE_RATE};
    use super::*;

    fn tone(freq: f64, n: usize) -> AudioClip {
        AudioClip::new(
            (0..n)
                .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
            SAMPLE_RATE,
        )
    }

    fn dominant_frequency(x: &[f64]) -> f64 {
        use rustfft::FftPlanner;
        let n = x.len().next_power_of_two();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        k as f64 * SAMPLE_RATE as f64 / n as f64
    }

    #[test]
    fn pure_tone_survives_reconstruction() {
        let p = MelProcessor::new(MelConfig::default());
        let m = p.mel_spectrogram(&tone(440.0, 16000)).unwrap();
        let audio = p.griffin_lim(&m, 30, 7);
        assert_eq!(audio.samples.len(), m.values.ncols() * 320);
        let f = dominant_frequency(&audio.samples);
        // within one mel band of 440 Hz
        let centers = mel_center_frequencies(&p.cfg);
        let band = |hz: f64| {
            centers
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - hz).abs().total_cmp(&(b.1 - hz).abs()))
                .unwrap()
                .0 as i64
        };
        assert!((band(f) - band(440.0)).abs() <= 1, "dominant {f} Hz");
    }

    #[test]
    fn silence_reconstructs_to_silence() {
        let p = MelProcessor::new(MelConfig::default());
        let m = p.mel_spectrogram(&AudioClip::silence(3200)).unwrap();
        let audio = p.griffin_lim(&m, 5, 1);
        assert!(audio.rms() < 1e-3);
    }

    #[test]
    fn deterministic_for_seed() {
        let p = MelProcessor::new(MelConfig::default());
        let m = p.mel_spectrogram(&tone(330.0, 4000)).unwrap();
        assert_eq!(p.griffin_lim(&m, 4, 3), p.griffin_lim(&m, 4, 3));
    }

    #[test]
    fn convergence_improves_on_average() {
        let p = MelProcessor::new(MelConfig::default());
        let clip = AudioClip::new(
            tone(300.0, 8000)
                .samples
                .iter()
                .zip(tone(755.0, 8000).samples)
                .map(|(a, b)| a + 0.5 * b)
                .collect(),
            SAMPLE_RATE,
        );
        let m = p.mel_spectrogram(&clip).unwrap();
        let (_, log) = GriffinLim::new(&p).run(&m, 40, 11);
        let first: f64 = log[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = log[30..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "first {first} last {last}");
    }

    #[test]
    fn nnls_is_nonnegative_and_fits() {
        let cfg = MelConfig::default();
        let fb = super::super::mel_filterbank(&cfg);
        let truth = Array2::from_shape_fn((513, 3), |(k, j)| ((k * (j + 3)) % 17) as f64 / 17.0);
        let mel = fb.dot(&truth);
        let s = nnls_magnitude(&fb, &mel, 200);
        assert!(s.iter().all(|&x| x >= 0.0));
        let resid = (fb.dot(&s) - &mel).mapv(|x| x * x).sum().sqrt();
        let norm = mel.mapv(|x| x * x).sum().sqrt();
        assert!(resid / norm < 0.05, "relative residual {}", resid / norm);
    }
}
