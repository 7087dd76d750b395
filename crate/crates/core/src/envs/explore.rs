//! Exploration-input generators for the first interaction trial.

use crate::fmath;
use crate::linalg::Mat;
use crate::rng::Seed;

/// Frequency band the sum-of-sines generator draws from, in Hz.
pub const DEFAULT_FREQ_BAND: (f64, f64) = (0.1, 3.0);

/// I.i.d. uniform controls in `[-u_max, u_max]` per component, `steps x d_u`.
pub fn exploration_random(u_max: &[f64], steps: usize, seed: &Seed) -> Mat {
    let d_u = u_max.len();
    let mut rng = seed.rng();
    let mut out = Mat::zeros(steps, d_u);
    for t in 0..steps {
        for (j, &um) in u_max.iter().enumerate() {
            out.set(t, j, rng.uniform_in(-um, um));
        }
    }
    out
}

/// Sum of `n_waves` sine waves of equal amplitude, random frequencies from
/// `freq_band`, and random phases, clipped to `[-u_max, u_max]`; independent
/// draws per control component.
#[allow(clippy::too_many_arguments)]
pub fn exploration_sum_of_sines(
    amplitude: f64,
    n_waves: usize,
    steps: usize,
    ts: f64,
    u_max: &[f64],
    freq_band: (f64, f64),
    seed: &Seed,
) -> Mat {
    let d_u = u_max.len();
    let mut out = Mat::zeros(steps, d_u);
    for (j, &um) in u_max.iter().enumerate() {
        let mut rng = seed.child(j as u64).rng();
        let waves: alloc::vec::Vec<(f64, f64)> = (0..n_waves)
            .map(|_| {
                (
                    rng.uniform_in(freq_band.0, freq_band.1),
                    rng.uniform_in(0.0, 2.0 * core::f64::consts::PI),
                )
            })
            .collect();
        for t in 0..steps {
            let time = ts * t as f64;
            let mut u = 0.0;
            for &(f, phase) in &waves {
                u += amplitude * fmath::sin(2.0 * core::f64::consts::PI * f * time + phase);
            }
            out.set(t, j, u.clamp(-um, um));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_exploration_stays_in_bounds_and_is_seeded() {
        let a = exploration_random(&[10.0], 10_000, &Seed::new(4));
        let b = exploration_random(&[10.0], 10_000, &Seed::new(4));
        assert_eq!(a, b);
        let mut mean = 0.0;
        for t in 0..a.rows() {
            let v = a.at(t, 0);
            assert!(v.abs() <= 10.0);
            mean += v;
        }
        mean /= a.rows() as f64;
        assert!(mean.abs() < 0.05 * 10.0, "{mean}");
    }

    #[test]
    fn single_sine_peaks_at_amplitude() {
        let ts = 1.0 / 30.0;
        let u = exploration_sum_of_sines(2.0, 1, 3000, ts, &[100.0], DEFAULT_FREQ_BAND, &Seed::new(6));
        let peak = (0..u.rows()).map(|t| u.at(t, 0).abs()).fold(0.0, f64::max);
        assert!(peak <= 2.0 + 1e-12);
        assert!(peak > 1.98, "{peak}");
    }

    #[test]
    fn sum_of_sines_is_deterministic_and_clipped() {
        let ts = 1.0 / 30.0;
        let a = exploration_sum_of_sines(3.0, 10, 200, ts, &[5.0], DEFAULT_FREQ_BAND, &Seed::new(7));
        let b = exploration_sum_of_sines(3.0, 10, 200, ts, &[5.0], DEFAULT_FREQ_BAND, &Seed::new(7));
        assert_eq!(a, b);
        for t in 0..a.rows() {
            assert!(a.at(t, 0).abs() <= 5.0);
        }
    }

    #[test]
    fn spectrum_peaks_at_drawn_frequencies() {
        // reproduce the generator's frequency draws, then check the DFT
        // magnitude peaks within one bin of each
        let ts = 1.0 / 30.0;
        let n = 4096;
        let seed = Seed::new(9);
        let mut rng = seed.child(0).rng();
        let freqs: alloc::vec::Vec<f64> = (0..2)
            .map(|_| {
                let f = rng.uniform_in(DEFAULT_FREQ_BAND.0, DEFAULT_FREQ_BAND.1);
                let _phase = rng.uniform_in(0.0, 2.0 * core::f64::consts::PI);
                f
            })
            .collect();
        let u = exploration_sum_of_sines(1.0, 2, n, ts, &[100.0], DEFAULT_FREQ_BAND, &seed);

        let df = 1.0 / (ts * n as f64);
        let mag_at = |k: usize| -> f64 {
            let mut re = 0.0;
            let mut im = 0.0;
            for t in 0..n {
                let ang = -2.0 * core::f64::consts::PI * (k * t) as f64 / n as f64;
                re += u.at(t, 0) * fmath::cos(ang);
                im += u.at(t, 0) * fmath::sin(ang);
            }
            fmath::hypot(re, im)
        };
        for &f in &freqs {
            let k0 = (f / df).round() as usize;
            let here = mag_at(k0).max(mag_at(k0 - 1)).max(mag_at(k0 + 1));
            // peak should dwarf a reference bin far from both frequencies
            let far = mag_at(k0 + 40);
            assert!(here > 10.0 * far, "f={f}: {here} vs {far}");
        }
    }
}
