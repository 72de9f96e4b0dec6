use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DataError, EpochDataset, Group, Label, TrialEpoch};
use crate::graph::ChannelLayout;
use crate::nn::Tensor;

/// Source RMS relative to unit-variance noise. At 256 Hz and 2 s windows this puts
/// the 8-12 Hz power of a weight-1 channel about a third above the noise alone,
/// i.e. roughly d' = 1 for a single-channel band-power detector.
pub const DEFAULT_AMPLITUDE: f64 = 0.15;

/// Narrowband Gaussian source mixed into the channels with fixed weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSignature {
    /// One nonnegative weight per channel.
    pub weights: Vec<f64>,
    pub center_hz: f64,
    /// The spectral bump has standard deviation `bandwidth_hz / 2`.
    pub bandwidth_hz: f64,
    /// RMS of the source before channel weighting.
    pub amplitude: f64,
}

impl BandSignature {
    pub fn silent(channels: usize) -> Self {
        Self {
            weights: vec![1.0; channels],
            center_hz: 10.0,
            bandwidth_hz: 2.0,
            amplitude: 0.0,
        }
    }

    /// Unit weights on `channels` (indices), zero elsewhere.
    pub fn on_channels(n_channels: usize, channels: &[usize], amplitude: f64) -> Self {
        let mut weights = vec![0.0; n_channels];
        for &c in channels {
            weights[c] = 1.0;
        }
        Self {
            weights,
            center_hz: 10.0,
            bandwidth_hz: 2.0,
            amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSignature {
    pub success: BandSignature,
    pub failure: BandSignature,
}

impl LabelSignature {
    pub fn for_label(&self, label: Label) -> &BandSignature {
        match label {
            Label::Success => &self.success,
            Label::Failure => &self.failure,
        }
    }
}

/// Background noise: per-bin variance proportional to `f^-exponent + floor`,
/// scaled so the total variance per channel equals `power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub exponent: f64,
    pub floor: f64,
    pub power: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            exponent: 1.0,
            floor: 0.01,
            power: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub layout: ChannelLayout,
    pub groups: Vec<Group>,
    /// Participants per group.
    pub n_participants: usize,
    pub trials_per_participant: usize,
    pub trials_per_block: usize,
    pub fs: f64,
    pub window_seconds: f64,
    /// Indexed by [`Group::index`].
    pub signatures: [LabelSignature; 4],
    /// Shared by every group on top of its own signature.
    pub common: Option<LabelSignature>,
    pub noise: NoiseSpec,
    pub funnel_halfwidth_deg: f64,
    pub margin_deg: f64,
    pub seed: u64,
}

/// The four planted channels of `group`: a contiguous (cyclic) run starting at `3 * index`.
pub fn signature_channels(group: Group, n_channels: usize) -> Vec<usize> {
    (0..4.min(n_channels))
        .map(|i| (3 * group.index() + i) % n_channels)
        .collect()
}

impl SyntheticSpec {
    /// Four planted channels per group, 10 Hz / 2 Hz band, [`DEFAULT_AMPLITUDE`] on
    /// successes and a silent source on failures.
    pub fn new(layout: ChannelLayout, fs: f64, window_seconds: f64, seed: u64) -> Self {
        let c = layout.len();
        let signatures = Group::ALL.map(|g| LabelSignature {
            success: BandSignature::on_channels(c, &signature_channels(g, c), DEFAULT_AMPLITUDE),
            failure: BandSignature::on_channels(c, &signature_channels(g, c), 0.0),
        });
        Self {
            layout,
            groups: Group::ALL.to_vec(),
            n_participants: 10,
            trials_per_participant: 40,
            trials_per_block: 10,
            fs,
            window_seconds,
            signatures,
            common: None,
            noise: NoiseSpec::default(),
            funnel_halfwidth_deg: 3.0,
            margin_deg: 2.0,
            seed,
        }
    }

    pub fn n_times(&self) -> usize {
        (self.fs * self.window_seconds).round() as usize
    }

    /// Sets every group's success amplitude.
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        for s in &mut self.signatures {
            s.success.amplitude = amplitude;
        }
        self
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::BadSpec(m));
        if !(self.fs.is_finite() && self.fs > 0.0) {
            return Err(DataError::BadSamplingRate(self.fs));
        }
        if self.n_times() < 4 {
            return bad(format!("window of {} samples is too short", self.n_times()));
        }
        if self.n_participants == 0
            || self.trials_per_participant == 0
            || self.trials_per_block == 0
        {
            return bad("participant, trial and block counts must be positive".into());
        }
        if self.groups.len() * self.n_participants > u16::MAX as usize + 1
            || self.trials_per_participant / self.trials_per_block > u16::MAX as usize
            || self.trials_per_block >= u16::MAX as usize
        {
            return bad("participant or trial counts exceed the 16-bit id range".into());
        }
        let c = self.layout.len();
        let all = self.signatures.iter().chain(self.common.as_ref());
        for s in all.flat_map(|s| [&s.success, &s.failure]) {
            if s.weights.len() != c {
                return bad(format!(
                    "signature has {} weights for {c} channels",
                    s.weights.len()
                ));
            }
            if s.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || s.weights.iter().all(|&w| w == 0.0)
            {
                return bad("signature weights must be nonnegative and not all zero".into());
            }
            if !(s.amplitude.is_finite() && s.amplitude >= 0.0) {
                return bad(format!("amplitude {} must be nonnegative", s.amplitude));
            }
            if !(s.bandwidth_hz > 0.0 && s.center_hz > 0.0 && s.center_hz < self.fs / 2.0) {
                return bad(
                    "signature band must lie strictly inside (0, fs/2) with positive width".into(),
                );
            }
        }
        if !(self.noise.power >= 0.0 && self.noise.floor >= 0.0 && self.noise.exponent.is_finite())
        {
            return bad("noise power and floor must be nonnegative".into());
        }
        if !(self.funnel_halfwidth_deg > 0.0 && self.margin_deg >= 0.0) {
            return bad("funnel half-width must be positive and margin nonnegative".into());
        }
        Ok(())
    }
}

/// Frequencies of the non-DC, non-Nyquist bins `1..ceil(T/2)`.
fn bin_freqs(n: usize, fs: f64) -> Vec<f64> {
    (1..n.div_ceil(2))
        .map(|k| k as f64 * fs / n as f64)
        .collect()
}

fn normalized(mut v: Vec<f64>, total: f64) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x *= total / s);
    }
    v
}

fn noise_spectrum(freqs: &[f64], noise: &NoiseSpec) -> Vec<f64> {
    normalized(
        freqs
            .iter()
            .map(|f| f.powf(-noise.exponent) + noise.floor)
            .collect(),
        noise.power,
    )
}

fn band_spectrum(freqs: &[f64], sig: &BandSignature) -> Vec<f64> {
    let sd = sig.bandwidth_hz / 2.0;
    let raw: Vec<f64> = freqs
        .iter()
        .map(|f| (-(f - sig.center_hz).powi(2) / (2.0 * sd * sd)).exp())
        .collect();
    normalized(raw, sig.amplitude * sig.amplitude)
}

/// Real Gaussian series whose bin `k` carries variance `spectrum[k-1]`:
/// `x[t] = Σ_k a_k cos(ω_k t) + b_k sin(ω_k t)` with `a_k, b_k ~ N(0, S_k)`.
struct Colorer {
    n: usize,
    fft: std::sync::Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
}

impl Colorer {
    fn new(n: usize) -> Self {
        Self {
            n,
            fft: FftPlanner::new().plan_fft_inverse(n),
            buf: vec![Complex::default(); n],
        }
    }

    fn sample<R: Rng + ?Sized>(&mut self, spectrum: &[f64], rng: &mut R) -> Vec<f64> {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        self.buf.iter_mut().for_each(|z| *z = Complex::default());
        for (i, &s) in spectrum.iter().enumerate() {
            let k = i + 1;
            let sd = s.sqrt();
            let a: f64 = std.sample(rng) * sd;
            let b: f64 = std.sample(rng) * sd;
            self.buf[k] = Complex::new(a / 2.0, -b / 2.0);
            self.buf[self.n - k] = Complex::new(a / 2.0, b / 2.0);
        }
        self.fft.process(&mut self.buf);
        self.buf.iter().map(|z| z.re).collect()
    }
}

/// Generates a labelled dataset: per-channel coloured noise plus narrowband sources
/// for the epoch's group (and the optional common signature) mixed through channel
/// weights. Labels are exactly balanced per participant when the trial count is even.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EpochDataset, DataError> {
    spec.validate()?;
    let (c, t) = (spec.layout.len(), spec.n_times());
    let freqs = bin_freqs(t, spec.fs);
    let noise = noise_spectrum(&freqs, &spec.noise);
    let mut colorer = Colorer::new(t);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let hw = spec.funnel_halfwidth_deg;
    let fail_lo = hw + spec.margin_deg;
    let mut epochs = Vec::new();

    for &group in &spec.groups {
        let mut sources = vec![&spec.signatures[group.index()]];
        sources.extend(spec.common.as_ref());
        let spectra: Vec<[Vec<f64>; 2]> = sources
            .iter()
            .map(|s| {
                [
                    band_spectrum(&freqs, &s.failure),
                    band_spectrum(&freqs, &s.success),
                ]
            })
            .collect();
        for p in 0..spec.n_participants {
            let participant = (group.index() * spec.n_participants + p) as u16;
            let n = spec.trials_per_participant;
            let mut labels: Vec<Label> = (0..n)
                .map(|i| {
                    if i < n / 2 {
                        Label::Success
                    } else {
                        Label::Failure
                    }
                })
                .collect();
            labels.shuffle(&mut rng);
            for (trial, &label) in labels.iter().enumerate() {
                let mut signal = vec![0.0; c * t];
                for ch in 0..c {
                    let x = colorer.sample(&noise, &mut rng);
                    signal[ch * t..(ch + 1) * t].copy_from_slice(&x);
                }
                for (src, spec_pair) in sources.iter().zip(&spectra) {
                    let sig = src.for_label(label);
                    if sig.amplitude == 0.0 {
                        continue;
                    }
                    let s = colorer.sample(&spec_pair[label.class()], &mut rng);
                    for (ch, &w) in sig.weights.iter().enumerate() {
                        if w != 0.0 {
                            for (dst, v) in signal[ch * t..(ch + 1) * t].iter_mut().zip(&s) {
                                *dst += w * v;
                            }
                        }
                    }
                }
                let angular_error_deg = match label {
                    Label::Success => rng.random_range(-hw..=hw),
                    Label::Failure => {
                        let mag = rng.random_range(fail_lo..fail_lo + 15.0);
                        if rng.random::<bool>() {
                            mag
                        } else {
                            -mag
                        }
                    }
                };
                epochs.push(TrialEpoch {
                    signal: Tensor::new(vec![c, t], signal).expect("sized above"),
                    label,
                    participant,
                    group,
                    angular_error_deg,
                    block_index: (trial / spec.trials_per_block) as u16,
                    trial_index: (trial % spec.trials_per_block + 1) as u16,
                });
            }
        }
    }
    EpochDataset::new(epochs, spec.fs, spec.layout.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{balance_dataset, BalanceOptions};

    fn small(seed: u64) -> SyntheticSpec {
        let mut s = SyntheticSpec::new(ChannelLayout::standard_12(), 32.0, 2.0, seed);
        s.n_participants = 2;
        s.trials_per_participant = 10;
        s
    }

    #[test]
    fn deterministic_and_balanced() {
        let a = generate_synthetic(&small(3)).unwrap();
        let b = generate_synthetic(&small(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(&small(4)).unwrap());
        assert_eq!(a.len(), 80);
        assert_eq!(a.class_counts(), [40, 40]);
        for p in a.participants() {
            assert_eq!(a.filtered(|e| e.participant == p).class_counts(), [5, 5]);
        }
        assert_eq!(a.n_times(), 64);
    }

    #[test]
    fn labels_agree_with_the_funnel_and_balancing_is_identity() {
        let d = generate_synthetic(&small(5)).unwrap();
        for e in d.epochs() {
            match e.label {
                Label::Success => assert!(e.angular_error_deg.abs() <= 3.0),
                Label::Failure => assert!(e.angular_error_deg.abs() >= 5.0),
            }
        }
        assert_eq!(balance_dataset(&d, BalanceOptions::default()).unwrap(), d);
    }

    #[test]
    fn noise_variance_matches_power() {
        let mut spec = small(6).with_amplitude(0.0);
        spec.n_participants = 10;
        let d = generate_synthetic(&spec).unwrap();
        let all: Vec<f64> = d
            .epochs()
            .iter()
            .flat_map(|e| e.signal.data().iter().copied())
            .collect();
        let var = all.iter().map(|v| v * v).sum::<f64>() / all.len() as f64;
        assert!((var - 1.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small(1);
        s.signatures[0].success.weights = vec![0.0; 12];
        assert!(matches!(generate_synthetic(&s), Err(DataError::BadSpec(_))));
        let mut s = small(1);
        s.signatures[1].success.center_hz = 20.0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = small(1);
        s.signatures[2].failure.amplitude = -1.0;
        assert!(generate_synthetic(&s).is_err());
    }
}
