//! Deterministic generator for an ETT-class benchmark series.
//!
//! Seven channels at an hourly cadence, built from shared daily/weekly
//! cycles observed through channel-specific lags, a common slowly-mixing
//! AR(1) load factor, mild amplitude drift, and per-channel noise. The
//! cross-channel lag structure gives channel-wise attention something real
//! to pick up, while the AR factor and noise bound what any forecaster can
//! achieve. Channels live on deliberately different scales.

use super::SeriesDataset;
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const CHANNELS: usize = 7;
const NAMES: [&str; CHANNELS] = ["HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT"];
const DAILY_LAGS: [usize; CHANNELS] = [0, 1, 2, 3, 5, 8, 13];
const AR_LAGS: [usize; CHANNELS] = [0, 2, 4, 6, 9, 12, 16];
const PHASES: [f64; CHANNELS] = [0.0, 0.4, 0.9, 1.7, 2.3, 3.1, 4.2];
const SCALES: [f64; CHANNELS] = [5.0, 2.0, 10.0, 1.5, 4.0, 8.0, 20.0];
const OFFSETS: [f64; CHANNELS] = [10.0, -3.0, 40.0, 0.5, -12.0, 7.0, 25.0];

/// Hourly timestamps starting 2016-07-01 00:00:00 (calendar-correct).
fn timestamp(hour_index: usize) -> String {
    const DAYS_IN_MONTH: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    let mut year = 2016u32;
    let mut month = 7u32;
    let mut day = 1u32;
    let mut remaining_days = hour_index / 24;
    let hour = hour_index % 24;
    while remaining_days > 0 {
        let leap = year % 4 == 0 && (year % 100 != 0 || year % 400 == 0);
        let dim = if month == 2 && leap {
            29
        } else {
            DAYS_IN_MONTH[(month - 1) as usize]
        };
        if day < dim {
            day += 1;
        } else {
            day = 1;
            if month < 12 {
                month += 1;
            } else {
                month = 1;
                year += 1;
            }
        }
        remaining_days -= 1;
    }
    format!("{year:04}-{month:02}-{day:02} {hour:02}:00:00")
}

/// Generate `rows` hourly steps of the 7-channel series.
pub fn ett_like_series(rows: usize, seed: u64) -> SeriesDataset {
    let mut r = rng::stream(seed, "demo-series");
    let max_lag = 16;
    let total = rows + max_lag;

    // Shared AR(1) load factor, normalized to roughly unit variance.
    let coef: f64 = 0.98;
    let innovation = (1.0 - coef * coef).sqrt();
    let mut ar = vec![0.0f64; total];
    let mut state: f64 = StandardNormal.sample(&mut r);
    for v in ar.iter_mut() {
        let eps: f64 = StandardNormal.sample(&mut r);
        state = coef * state + innovation * eps;
        *v = state;
    }

    let two_pi = std::f64::consts::TAU;
    let mut data = Vec::with_capacity(rows * CHANNELS);
    let mut timestamps = Vec::with_capacity(rows);
    for t in 0..rows {
        timestamps.push(timestamp(t));
        let drift = 1.0 + 0.2 * (two_pi * t as f64 / 5000.0).sin();
        for c in 0..CHANNELS {
            let td = (t + max_lag - DAILY_LAGS[c]) as f64;
            let daily = (two_pi * td / 24.0 + PHASES[c]).sin();
            let weekly = (two_pi * (t as f64) / 168.0 + 0.5 * PHASES[c]).sin();
            let load = ar[t + max_lag - AR_LAGS[c]];
            let noise: f64 = StandardNormal.sample(&mut r);
            let signal = drift * daily + 0.5 * weekly + 0.3 * load + 0.25 * noise;
            data.push(OFFSETS[c] + SCALES[c] * signal);
        }
    }

    let _ = r.gen::<u64>(); // keep the stream position independent of `rows` extensions
    SeriesDataset {
        name: format!("ett-like-{seed}"),
        values: Tensor::new(vec![rows, CHANNELS], data).expect("geometry"),
        columns: NAMES.iter().map(|s| s.to_string()).collect(),
        timestamps,
    }
}
