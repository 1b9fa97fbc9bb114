use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{attach_test_rul, Result, RunToFailureCycle, CMAPSS_FEATURES};
use crate::tensor::Tensor;

/// Synthetic run-to-failure fleet.
///
/// Each unit has a latent health `h(t) = slope * rul(t) / 100` that decays
/// linearly to zero at failure. The first operating setting reports the
/// unit's slope (its wear rate), the other two are noise around fixed
/// levels. The 21 sensors are fixed affine functions of a noisy reading of
/// `h`, and the reading noise grows as `h` approaches zero. With
/// `noise_scale = 0` every feature is an exact affine function of RUL.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Relative spread of per-unit slopes.
    pub slope_spread: f64,
    /// Reading noise far from failure.
    pub base_noise: f64,
    /// Extra reading noise at failure.
    pub failure_noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_train: 50,
            n_test: 20,
            noise_scale: 1.0,
            seed: 0,
            min_len: 80,
            max_len: 250,
            slope_spread: 0.2,
            base_noise: 0.1,
            failure_noise: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub train: Vec<RunToFailureCycle>,
    /// Run to failure; `truncated` is false.
    pub test: Vec<RunToFailureCycle>,
}

struct FeatureMap {
    offset: Vec<f64>,
    gain: Vec<f64>,
}

pub fn synth_generate(spec: &SynthSpec) -> Result<SynthData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let map = FeatureMap {
        offset: (0..CMAPSS_FEATURES)
            .map(|_| 5.0 * rng.sample::<f64, _>(StandardNormal))
            .collect(),
        gain: (0..CMAPSS_FEATURES)
            .map(|_| {
                let mag: f64 = rng.random_range(0.5..2.0);
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect(),
    };
    let train = (0..spec.n_train)
        .map(|i| unit(spec, &map, &mut rng, i as u32 + 1))
        .collect::<Result<Vec<_>>>()?;
    let test = (0..spec.n_test)
        .map(|i| unit(spec, &map, &mut rng, i as u32 + 1).and_then(|c| attach_test_rul(c, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthData { train, test })
}

/// Operating-setting columns ahead of the sensors.
const SETTINGS: usize = 3;

fn unit(
    spec: &SynthSpec,
    map: &FeatureMap,
    rng: &mut ChaCha8Rng,
    id: u32,
) -> Result<RunToFailureCycle> {
    let (lo, hi) = (spec.min_len.max(1), spec.max_len.max(spec.min_len.max(1)));
    let t = rng.random_range(lo..=hi);
    let ns = spec.noise_scale;
    let mut normal = || rng.sample::<f64, _>(StandardNormal);
    let slope = (1.0 + spec.slope_spread * normal()).max(0.3);
    let mut feats = Vec::with_capacity(t * CMAPSS_FEATURES);
    for step in 0..t {
        let rul = (t - 1 - step) as f64;
        let h = slope * rul / 100.0;
        let sigma = ns * (spec.base_noise + spec.failure_noise * (-h).exp());
        let reading = h + sigma * normal();
        feats.push(map.offset[0] + map.gain[0] * slope);
        for k in 1..SETTINGS {
            feats.push(map.offset[k] + 0.1 * ns * normal());
        }
        for k in SETTINGS..CMAPSS_FEATURES {
            let own = 0.5 * sigma * normal();
            feats.push(map.offset[k] + map.gain[k] * reading + own);
        }
    }
    RunToFailureCycle::new(id, Tensor::new(vec![t, CMAPSS_FEATURES], feats)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_labelled() {
        let spec = SynthSpec {
            n_train: 4,
            n_test: 3,
            ..SynthSpec::default()
        };
        let a = synth_generate(&spec).unwrap();
        assert_eq!(a, synth_generate(&spec).unwrap());
        assert_ne!(
            a,
            synth_generate(&SynthSpec {
                seed: 1,
                ..spec.clone()
            })
            .unwrap()
        );
        assert_eq!((a.train.len(), a.test.len()), (4, 3));
        for c in a.train.iter().chain(&a.test) {
            assert!((80..=250).contains(&c.len()));
            assert_eq!(c.num_features(), CMAPSS_FEATURES);
            assert!(!c.truncated);
            assert!(c.rul.data().windows(2).all(|w| w[0] - w[1] == 1.0));
            assert_eq!(*c.rul.data().last().unwrap(), 0.0);
        }
    }

    #[test]
    fn noiseless_features_are_affine_in_rul() {
        let spec = SynthSpec {
            n_train: 3,
            n_test: 0,
            noise_scale: 0.0,
            ..SynthSpec::default()
        };
        let data = synth_generate(&spec).unwrap();
        for c in &data.train {
            let f = c.features.data();
            let rul = c.rul.data();
            for k in 0..CMAPSS_FEATURES {
                let at = |t: usize| f[t * CMAPSS_FEATURES + k];
                let gain = (at(0) - at(1)) / (rul[0] - rul[1]);
                let offset = at(0) - gain * rul[0];
                for (t, r) in rul.iter().enumerate() {
                    assert!((at(t) - (offset + gain * r)).abs() < 1e-9);
                }
            }
        }
        let g = |c: &RunToFailureCycle| c.features.data()[c.features.numel() - 1];
        assert!(data
            .train
            .iter()
            .all(|c| (g(c) - g(&data.train[0])).abs() < 1e-12));
    }
}
