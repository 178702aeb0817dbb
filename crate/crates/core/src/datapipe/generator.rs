use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::csv_io::{write_emission_csv, write_weather_csv, WeatherTable, EMISSION_COLUMNS};
use super::table::{Column, SeriesTable};
use crate::error::{Error, Result};

pub const EMISSIONS_FILE: &str = "emissions.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const MANIFEST_FILE: &str = "sessions.json";

/// Perturbation applied to the last `held_out` sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub held_out: usize,
    /// Multiplier on all five emission signals.
    pub emission_gain: f64,
    pub ambient_offset_c: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            held_out: 1,
            emission_gain: 1.3,
            ambient_offset_c: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Ornstein-Uhlenbeck speed noise, km/h per sqrt(s).
    pub speed_sigma: f64,
    pub speed_tau_s: f64,
    /// Smoothing factor of the acceleration estimate, in (0, 1].
    pub accel_smoothing: f64,
    /// Relative stationary std of the AR(1) emission noise.
    pub emission_sigma: f64,
    pub emission_ar: f64,
    /// Relative white noise on the engine signals.
    pub sensor_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            speed_sigma: 0.5,
            speed_tau_s: 60.0,
            accel_smoothing: 0.2,
            emission_sigma: 0.03,
            emission_ar: 0.95,
            sensor_sigma: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub sessions: usize,
    /// Seconds recorded per session before rows are dropped.
    pub duration_s: usize,
    /// Probability that a row (other than a session's first and last) is
    /// dropped. The mean sampling interval is `1 / (1 - missing_rate)`.
    pub missing_rate: f64,
    pub shift: ShiftSpec,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub start_epoch: i64,
    pub session_spacing_s: i64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            sessions: 5,
            duration_s: 7200,
            missing_rate: 0.211,
            shift: ShiftSpec::default(),
            noise: NoiseConfig::default(),
            seed: 7,
            start_epoch: 1_717_228_800,
            session_spacing_s: 86_400,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.sessions == 0 {
            return fail("at least one session is required".into());
        }
        if self.duration_s < 1 {
            return fail("session duration must be at least 1 s".into());
        }
        if self.duration_s as i64 + 3600 > self.session_spacing_s {
            return fail(format!(
                "sessions of {} s overlap at a spacing of {} s",
                self.duration_s, self.session_spacing_s
            ));
        }
        if !(0.0..0.9).contains(&self.missing_rate) {
            return fail(format!("missing rate {} outside [0, 0.9)", self.missing_rate));
        }
        if self.shift.held_out > self.sessions {
            return fail(format!(
                "{} held-out sessions requested out of {}",
                self.shift.held_out, self.sessions
            ));
        }
        let n = &self.noise;
        if [n.speed_sigma, n.emission_sigma, n.sensor_sigma].iter().any(|s| !(*s >= 0.0))
            || !(n.speed_tau_s > 0.0)
            || !(n.accel_smoothing > 0.0 && n.accel_smoothing <= 1.0)
            || !(0.0..1.0).contains(&n.emission_ar)
            || !(self.shift.emission_gain > 0.0)
            || !self.shift.ambient_offset_c.is_finite()
        {
            return fail("invalid noise or shift parameters".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub id: u32,
    /// Half-open row range in the emission table.
    pub first_row: usize,
    pub end_row: usize,
    pub start_timestamp: i64,
    pub end_timestamp: i64,
    pub shifted: bool,
    pub emission_gain: f64,
    pub ambient_offset_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sessions: Vec<SessionManifest>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub emissions: SeriesTable,
    pub weather: WeatherTable,
    pub manifest: Manifest,
}

fn gear_ratio(speed: f64) -> f64 {
    match speed {
        v if v < 15.0 => 1.0,
        v if v < 30.0 => 0.55,
        v if v < 50.0 => 0.38,
        v if v < 70.0 => 0.30,
        _ => 0.24,
    }
}

fn conditions(precip: f64) -> &'static str {
    if precip > 1.0 {
        "rain"
    } else if precip > 0.3 {
        "overcast"
    } else {
        "clear"
    }
}

struct Ar1 {
    phi: f64,
    innov: f64,
    state: f64,
}

impl Ar1 {
    fn new(phi: f64, sigma: f64) -> Self {
        Self {
            phi,
            innov: sigma * (1.0 - phi * phi).sqrt(),
            state: 0.0,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.state = self.phi * self.state + self.innov * z;
        self.state
    }
}

/// Synthetic drives with the emission schema, hourly weather, random row
/// drops and a distribution shift on the held-out sessions.
pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = &cfg.noise;
    let mut timestamps = Vec::new();
    let mut session_ids = Vec::new();
    let mut signals: Vec<Vec<Option<f64>>> = vec![Vec::new(); EMISSION_COLUMNS.len()];
    let mut weather = WeatherTable {
        hours: Vec::new(),
        temp_c: Vec::new(),
        precip_mm: Vec::new(),
        conditions: Vec::new(),
    };
    let mut manifest = Vec::new();

    for s in 0..cfg.sessions {
        let shifted = s >= cfg.sessions - cfg.shift.held_out;
        let (gain, offset) = if shifted {
            (cfg.shift.emission_gain, cfg.shift.ambient_offset_c)
        } else {
            (1.0, 0.0)
        };
        let t0 = cfg.start_epoch + s as i64 * cfg.session_spacing_s;
        let t_end = t0 + cfg.duration_s as i64 - 1;

        // Hourly weather covering the session.
        let first_hour = t0.div_euclid(3600) * 3600;
        let base_temp = 15.0 + 6.0 * rng.sample::<f64, _>(StandardNormal);
        let mut temp = base_temp;
        let mut hour_temps = Vec::new();
        let mut hour = first_hour;
        while hour <= t_end {
            temp += 1.5 * rng.sample::<f64, _>(StandardNormal);
            let precip = (-1.5 + 1.2 * rng.sample::<f64, _>(StandardNormal)).exp();
            let precip = (precip * 100.0).round() / 100.0;
            let t = ((temp + offset) * 10.0).round() / 10.0;
            weather.hours.push(hour);
            weather.temp_c.push(Some(t));
            weather.precip_mm.push(Some(precip));
            weather.conditions.push(Some(conditions(precip).to_string()));
            hour_temps.push(t);
            hour += 3600;
        }

        // Speed: low-frequency sinusoids plus OU noise.
        let waves: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                let amp = rng.random_range(5.0..18.0);
                let period = rng.random_range(120.0..1800.0);
                let phase = rng.random_range(0.0..2.0 * PI);
                (amp, 2.0 * PI / period, phase)
            })
            .collect();
        let cruise = rng.random_range(35.0..60.0);
        let sensor = Normal::new(0.0, 1.0).expect("unit normal");
        let mut ou = 0.0;
        let mut prev_speed: Option<f64> = None;
        let mut accel = 0.0;
        let mut ar: Vec<Ar1> = (0..5)
            .map(|_| Ar1::new(noise.emission_ar, noise.emission_sigma))
            .collect();
        let first_row = timestamps.len();

        for k in 0..cfg.duration_s {
            let ts = t0 + k as i64;
            let tk = k as f64;
            ou += -ou / noise.speed_tau_s + noise.speed_sigma * rng.sample::<f64, _>(StandardNormal);
            let wave: f64 = waves.iter().map(|(a, w, p)| a * (w * tk + p).sin()).sum();
            let ramp = (tk / 60.0).min(1.0);
            let speed = ((cruise + wave) * ramp + ou).max(0.0);
            let raw_accel = prev_speed.map_or(0.0, |p| (speed - p) / 3.6);
            accel += noise.accel_smoothing * (raw_accel - accel);
            prev_speed = Some(speed);
            let push = accel.max(0.0);
            let ambient = hour_temps[((ts - first_hour) / 3600) as usize];
            let jitter = |rng: &mut ChaCha8Rng| 1.0 + noise.sensor_sigma * sensor.sample(rng);

            let rpm = (750.0 + 42.0 * speed * gear_ratio(speed) + 120.0 * push) * jitter(&mut rng);
            let fuel = ((0.5 + 0.0009 * rpm + 1.8 * push + 0.00025 * speed * speed)
                * jitter(&mut rng))
            .max(0.2);
            let coolant = ambient
                + (88.0 - ambient) * (1.0 - (-tk / 500.0).exp())
                + 0.2 * sensor.sample(&mut rng);
            let econ = speed / fuel;
            let cold = (-tk / 400.0).exp();

            let no = 40.0 + 0.05 * rpm + 60.0 * (0.8 * push).tanh() + 1.5 * (ambient - 15.0) + 8.0 * fuel;
            let no2 = 4.0 + 0.004 * rpm + 6.0 / (1.0 + (-(speed - 60.0) / 8.0).exp())
                + 0.3 * (ambient - 15.0).max(-10.0);
            let co2 = 11.0 + 2.5 * (fuel / 4.0 - 0.5).tanh() - 0.01 * (ambient - 15.0);
            let co = 30.0 + 250.0 * cold + 40.0 * push * push + 2e-5 * rpm * rpm;
            let no = gain * no * (1.0 + ar[0].next(&mut rng));
            let no2 = gain * no2 * (1.0 + ar[1].next(&mut rng));
            let nox = (no + no2) * (1.0 + 0.3 * ar[2].next(&mut rng));
            let co2 = gain * co2 * (1.0 + ar[3].next(&mut rng));
            let co = gain * co * (1.0 + ar[4].next(&mut rng));

            let keep = k == 0 || k + 1 == cfg.duration_s || rng.random::<f64>() >= cfg.missing_rate;
            if !keep {
                continue;
            }
            let round = |x: f64, digits: i32| {
                let f = 10f64.powi(digits);
                (x * f).round() / f
            };
            let row = [
                round(rpm, 1),
                round(fuel, 3),
                round(coolant, 2),
                round(speed, 2),
                round(econ, 3),
                round(no, 2),
                round(no2, 2),
                round(nox, 2),
                round(co2, 4),
                round(co, 2),
            ];
            timestamps.push(ts);
            session_ids.push(s as u32);
            for (col, v) in signals.iter_mut().zip(row) {
                col.push(Some(v));
            }
        }
        manifest.push(SessionManifest {
            id: s as u32,
            first_row,
            end_row: timestamps.len(),
            start_timestamp: t0,
            end_timestamp: t_end,
            shifted,
            emission_gain: gain,
            ambient_offset_c: offset,
        });
    }

    let columns = EMISSION_COLUMNS
        .iter()
        .zip(signals)
        .map(|((name, role), values)| Column::numeric(name, *role, values))
        .collect();
    Ok(SyntheticData {
        emissions: SeriesTable {
            timestamps,
            sessions: session_ids,
            columns,
        },
        weather,
        manifest: Manifest {
            seed: cfg.seed,
            sessions: manifest,
        },
    })
}

/// Writes `emissions.csv`, `weather.csv` and `sessions.json` into `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_emission_csv(&data.emissions, &dir.join(EMISSIONS_FILE))?;
    write_weather_csv(&data.weather, &dir.join(WEATHER_FILE))?;
    let manifest = serde_json::to_string_pretty(&data.manifest)
        .map_err(|e| Error::Data(format!("cannot encode manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_FILE), manifest + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datapipe::csv_io::{load_emission_csv, load_weather_csv, TARGET_COLUMNS};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            duration_s: 900,
            seed,
            ..GeneratorConfig::default()
        }
    }

    fn mean_and_median_dt(t: &SeriesTable) -> (f64, f64) {
        let mut dts: Vec<f64> = t
            .timestamps
            .windows(2)
            .zip(t.sessions.windows(2))
            .filter(|(_, s)| s[0] == s[1])
            .map(|(w, _)| (w[1] - w[0]) as f64)
            .collect();
        let mean = dts.iter().sum::<f64>() / dts.len() as f64;
        dts.sort_by(f64::total_cmp);
        (mean, dts[dts.len() / 2])
    }

    #[test]
    fn no_drops_means_unit_spacing() {
        let cfg = GeneratorConfig {
            missing_rate: 0.0,
            ..small(1)
        };
        let data = generate_synthetic(&cfg).unwrap();
        assert_eq!(mean_and_median_dt(&data.emissions), (1.0, 1.0));
        assert_eq!(data.emissions.len(), 5 * 900);
    }

    #[test]
    fn default_drop_rate_matches_interval_ratio() {
        let cfg = GeneratorConfig {
            sessions: 1,
            duration_s: 3 * 3600,
            shift: ShiftSpec {
                held_out: 0,
                ..ShiftSpec::default()
            },
            ..GeneratorConfig::default()
        };
        let (mean, median) = mean_and_median_dt(&generate_synthetic(&cfg).unwrap().emissions);
        assert_eq!(median, 1.0);
        assert!((mean / median / 1.267 - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, generate_synthetic(&small(3)).unwrap());
        assert_ne!(a.emissions, generate_synthetic(&small(4)).unwrap().emissions);
    }

    #[test]
    fn infeasible_configs_rejected() {
        for cfg in [
            GeneratorConfig { duration_s: 0, ..small(0) },
            GeneratorConfig { missing_rate: 0.95, ..small(0) },
            GeneratorConfig { sessions: 0, ..small(0) },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn shifted_session_is_marked_and_warmer() {
        let data = generate_synthetic(&small(5)).unwrap();
        let m = &data.manifest.sessions;
        assert_eq!(m.iter().filter(|s| s.shifted).count(), 1);
        assert!(m[4].shifted && m[4].emission_gain == 1.3);
        for s in m {
            assert_eq!(data.emissions.timestamps[s.first_row], s.start_timestamp);
            assert_eq!(data.emissions.timestamps[s.end_row - 1], s.end_timestamp);
        }
        data.emissions.validate().unwrap();
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small(2)).unwrap();
        write_synthetic(&data, dir.path()).unwrap();
        let table = load_emission_csv(&dir.path().join(EMISSIONS_FILE), 1800).unwrap();
        assert_eq!(table, data.emissions);
        let weather = load_weather_csv(&dir.path().join(WEATHER_FILE)).unwrap();
        assert_eq!(weather, data.weather);
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        assert_eq!(manifest, data.manifest);
        for name in TARGET_COLUMNS {
            assert!(table.numeric(name).unwrap().iter().all(|v| v.is_some_and(f64::is_finite)));
        }
    }
}
