//! Bar-stimulus / spiking-population simulator.
//!
//! Stimuli are small grayscale images that may contain a horizontal bar, a
//! vertical bar, both or neither. A population of Izhikevich regular-spiking
//! neurons responds: the top half receives a brief strong pulse with
//! probability `p_pulse` when an h-bar is present, and a 30 Hz oscillatory
//! drive with probability `p_rhythm` when a v-bar is present, with
//! independent coin flips. The bottom half receives a synchronized slower
//! rhythm with probability `p_distractor`, regardless of the stimulus.
//! Responses are spike counts in 10 ms bins, with neuron order shuffled by a
//! permutation fixed per simulator.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{CausalDataset, Mode, TruthTable};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{permutation, seeded, Rng64};

/// Stimulus class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    None,
    HBar,
    VBar,
    Both,
}

impl Cause {
    pub const ALL: [Cause; 4] = [Cause::None, Cause::HBar, Cause::VBar, Cause::Both];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Cause> {
        Cause::ALL.get(k).copied()
    }

    pub fn from_bars(h: bool, v: bool) -> Cause {
        match (h, v) {
            (false, false) => Cause::None,
            (true, false) => Cause::HBar,
            (false, true) => Cause::VBar,
            (true, true) => Cause::Both,
        }
    }

    pub fn has_hbar(self) -> bool {
        matches!(self, Cause::HBar | Cause::Both)
    }

    pub fn has_vbar(self) -> bool {
        matches!(self, Cause::VBar | Cause::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            Cause::None => "none",
            Cause::HBar => "hbar",
            Cause::VBar => "vbar",
            Cause::Both => "both",
        }
    }
}

/// Which drives a trial received.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectFlags {
    pub pulse: bool,
    pub rhythm: bool,
    pub distractor: bool,
}

impl EffectFlags {
    /// Stimulus-driven effect class: 0 neither, 1 pulse, 2 rhythm, 3 both.
    pub fn class(self) -> usize {
        usize::from(self.pulse) + 2 * usize::from(self.rhythm)
    }
}

pub const EFFECT_NAMES: [&str; 4] = ["neither", "pulse", "rhythm", "both"];

/// `P(effect class | do(cause))` for independent pulse and rhythm mechanisms.
pub fn ground_truth_table_for(p_pulse: f64, p_rhythm: f64) -> Vec<Vec<f64>> {
    Cause::ALL
        .iter()
        .map(|c| {
            let pp = if c.has_hbar() { p_pulse } else { 0.0 };
            let pr = if c.has_vbar() { p_rhythm } else { 0.0 };
            vec![(1.0 - pp) * (1.0 - pr), pp * (1.0 - pr), (1.0 - pp) * pr, pp * pr]
        })
        .collect()
}

/// The table for the default probabilities (0.8 / 0.8).
pub fn ground_truth_table() -> Vec<Vec<f64>> {
    let p = NeuronParams::default();
    ground_truth_table_for(p.p_pulse, p.p_rhythm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StimulusConfig {
    pub side: usize,
    pub bar_thickness: usize,
    /// Background pixels are uniform on `[0, noise_max)`.
    pub noise_max: f32,
    pub contrast: f32,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        StimulusConfig {
            side: 20,
            bar_thickness: 2,
            noise_max: 0.5,
            contrast: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusImage {
    pub side: usize,
    /// Row-major `side × side`, values in `[0, 1]`.
    pub pixels: Vec<f32>,
    pub cause: Cause,
    pub hbar_row: Option<usize>,
    pub vbar_col: Option<usize>,
}

pub fn generate_stimulus(cause: Cause, seed: u64) -> StimulusImage {
    generate_stimulus_with(&StimulusConfig::default(), cause, seed)
}

pub fn generate_stimulus_with(cfg: &StimulusConfig, cause: Cause, seed: u64) -> StimulusImage {
    let mut rng = seeded(seed);
    let side = cfg.side;
    let mut noise: Vec<f32> = (0..side * side)
        .map(|_| rng.random::<f32>() * cfg.noise_max)
        .collect();
    let positions = side.saturating_sub(cfg.bar_thickness) + 1;
    let hbar_row = cause.has_hbar().then(|| rng.random_range(0..positions));
    let vbar_col = cause.has_vbar().then(|| rng.random_range(0..positions));
    let on_bar = |r: usize, c: usize| {
        hbar_row.is_some_and(|h| (h..h + cfg.bar_thickness).contains(&r))
            || vbar_col.is_some_and(|v| (v..v + cfg.bar_thickness).contains(&c))
    };
    for r in 0..side {
        for c in 0..side {
            if on_bar(r, c) {
                noise[r * side + c] = (noise[r * side + c] + cfg.contrast).min(1.0);
            }
        }
    }
    StimulusImage {
        side,
        pixels: noise,
        cause,
        hbar_row,
        vbar_col,
    }
}

fn count_runs(flags: &[bool]) -> usize {
    flags
        .iter()
        .enumerate()
        .filter(|&(k, &f)| f && (k == 0 || !flags[k - 1]))
        .count()
}

/// Numbers of bright row bands and column bands (runs of consecutive rows or
/// columns whose mean exceeds `threshold`).
pub fn count_bands(pixels: &[f32], side: usize, threshold: f32) -> (usize, usize) {
    let rows: Vec<bool> = (0..side)
        .map(|r| pixels[r * side..(r + 1) * side].iter().sum::<f32>() / side as f32 > threshold)
        .collect();
    let cols: Vec<bool> = (0..side)
        .map(|c| (0..side).map(|r| pixels[r * side + c]).sum::<f32>() / side as f32 > threshold)
        .collect();
    (count_runs(&rows), count_runs(&cols))
}

/// Bar content read off the pixels, with the midpoint between background
/// and bar brightness as threshold.
pub fn detect_cause(pixels: &[f32], cfg: &StimulusConfig) -> Cause {
    let threshold = cfg.noise_max / 2.0 + cfg.contrast / 2.0;
    let (h, v) = count_bands(pixels, cfg.side, threshold);
    Cause::from_bars(h > 0, v > 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeuronParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Integration step (ms).
    pub dt: f64,
    pub duration_ms: f64,
    pub n_neurons: usize,
    pub bin_ms: f64,
    /// Background input: mean and standard deviation, redrawn every ms.
    pub noise_mean: f64,
    pub noise_std: f64,
    pub pulse_onset_ms: f64,
    pub pulse_width_ms: f64,
    pub pulse_amp: f64,
    pub rhythm_freq: f64,
    pub rhythm_amp: f64,
    pub distractor_freq: f64,
    pub distractor_amp: f64,
    /// Start the distractor rhythm at a random phase each trial instead of
    /// locking it to trial onset.
    pub distractor_random_phase: bool,
    pub p_pulse: f64,
    pub p_rhythm: f64,
    pub p_distractor: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            a: 0.02,
            b: 0.2,
            c: -65.0,
            d: 8.0,
            dt: 0.5,
            duration_ms: 1000.0,
            n_neurons: 100,
            bin_ms: 10.0,
            noise_mean: 0.0,
            noise_std: 5.0,
            pulse_onset_ms: 100.0,
            pulse_width_ms: 50.0,
            pulse_amp: 20.0,
            rhythm_freq: 30.0,
            rhythm_amp: 20.0,
            distractor_freq: 11.0,
            distractor_amp: 20.0,
            distractor_random_phase: false,
            p_pulse: 0.8,
            p_rhythm: 0.8,
            p_distractor: 0.5,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration_ms > 0.0) || !(self.bin_ms >= self.dt) {
            return Err(Error::invalid("dt, duration and bin width must be positive with bin >= dt"));
        }
        if self.n_neurons < 2 {
            return Err(Error::invalid("need at least two neurons"));
        }
        for p in [self.p_pulse, self.p_rhythm, self.p_distractor] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("probabilities must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.duration_ms / self.bin_ms).round() as usize
    }

    fn steps_per_bin(&self) -> usize {
        (self.bin_ms / self.dt).round() as usize
    }

    fn steps_per_ms(&self) -> usize {
        ((1.0 / self.dt).round() as usize).max(1)
    }

    /// Size of the stimulus-driven (top) population.
    pub fn n_top(&self) -> usize {
        self.n_neurons / 2
    }
}

/// Binned activity of one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterResponse {
    pub n_neurons: usize,
    pub n_bins: usize,
    /// `n_neurons × n_bins`, rows in shuffled order; spikes per ms in each bin.
    pub activity: Vec<f32>,
    pub flags: EffectFlags,
}

/// A simulated population with a fixed neuron shuffle.
#[derive(Clone, Debug)]
pub struct NeuroSimulator {
    params: NeuronParams,
    stimulus: StimulusConfig,
    /// Output row `r` holds neuron `permutation[r]`.
    permutation: Vec<usize>,
}

impl NeuroSimulator {
    pub fn new(params: NeuronParams, run_seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = seeded(run_seed ^ 0x0a11_ce11);
        let permutation = permutation(&mut rng, params.n_neurons);
        Ok(NeuroSimulator {
            params,
            stimulus: StimulusConfig::default(),
            permutation,
        })
    }

    pub fn with_stimulus_config(mut self, cfg: StimulusConfig) -> Self {
        self.stimulus = cfg;
        self
    }

    pub fn params(&self) -> &NeuronParams {
        &self.params
    }

    pub fn stimulus_config(&self) -> &StimulusConfig {
        &self.stimulus
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn response_dim(&self) -> usize {
        self.params.n_neurons * self.params.n_bins()
    }

    /// Draws which drives are active for a stimulus with the given bars.
    fn draw_flags(&self, cause: Cause, rng: &mut Rng64) -> EffectFlags {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        EffectFlags {
            pulse: cause.has_hbar() && u1 < self.params.p_pulse,
            rhythm: cause.has_vbar() && u2 < self.params.p_rhythm,
            distractor: u3 < self.params.p_distractor,
        }
    }

    /// Simulates one trial. The drives depend only on the bars visible in
    /// the pixels.
    pub fn simulate_response(&self, stimulus: &StimulusImage, trial_seed: u64) -> RasterResponse {
        self.simulate_pixels(&stimulus.pixels, trial_seed)
    }

    pub fn simulate_pixels(&self, pixels: &[f32], trial_seed: u64) -> RasterResponse {
        let cause = detect_cause(pixels, &self.stimulus);
        let mut rng = seeded(trial_seed);
        let flags = self.draw_flags(cause, &mut rng);
        // Drawn either way so the rest of the trial stream does not depend on
        // the phase setting.
        let u = rng.random::<f64>();
        let phase = if self.params.distractor_random_phase { u * std::f64::consts::TAU } else { 0.0 };
        self.integrate(flags, phase, &mut rng)
    }

    /// Runs the network for given drives; distractor rhythm starts at `phase`.
    pub fn integrate(&self, flags: EffectFlags, distractor_phase: f64, rng: &mut Rng64) -> RasterResponse {
        let p = &self.params;
        let n = p.n_neurons;
        let n_top = p.n_top();
        let n_bins = p.n_bins();
        let steps_per_bin = p.steps_per_bin();
        let steps_per_ms = p.steps_per_ms();
        let total_steps = n_bins * steps_per_bin;
        let mut v = vec![p.c; n];
        let mut u = vec![p.b * p.c; n];
        let mut input = vec![0.0; n];
        let mut counts = vec![0u16; n * n_bins];
        let tau = std::f64::consts::TAU;
        for step in 0..total_steps {
            let t = step as f64 * p.dt;
            if step % steps_per_ms == 0 {
                for x in input.iter_mut() {
                    let g: f64 = StandardNormal.sample(rng);
                    *x = p.noise_mean + p.noise_std * g;
                }
            }
            let mut top_drive = 0.0;
            if flags.pulse && t >= p.pulse_onset_ms && t < p.pulse_onset_ms + p.pulse_width_ms {
                top_drive += p.pulse_amp;
            }
            if flags.rhythm {
                top_drive += p.rhythm_amp * (tau * p.rhythm_freq * t / 1000.0).sin();
            }
            let bottom_drive = if flags.distractor {
                p.distractor_amp * (tau * p.distractor_freq * t / 1000.0 + distractor_phase).sin()
            } else {
                0.0
            };
            let bin = step / steps_per_bin;
            for k in 0..n {
                let current = input[k] + if k < n_top { top_drive } else { bottom_drive };
                let (mut vk, mut uk) = (v[k], u[k]);
                // Two half-steps on v for stability, one step on u.
                for _ in 0..2 {
                    vk += 0.5 * p.dt * (0.04 * vk * vk + 5.0 * vk + 140.0 - uk + current);
                }
                uk += p.dt * p.a * (p.b * vk - uk);
                if vk >= 30.0 {
                    counts[k * n_bins + bin] += 1;
                    vk = p.c;
                    uk += p.d;
                }
                v[k] = vk;
                u[k] = uk;
            }
        }
        let mut activity = vec![0.0f32; n * n_bins];
        for (row, &neuron) in self.permutation.iter().enumerate() {
            for b in 0..n_bins {
                activity[row * n_bins + b] = counts[neuron * n_bins + b] as f32 / p.bin_ms as f32;
            }
        }
        RasterResponse {
            n_neurons: n,
            n_bins,
            activity,
            flags,
        }
    }

    /// Rows of the response restored to neuron order (for validation only).
    pub fn unshuffle(&self, activity: &[f32]) -> Vec<f32> {
        let nb = self.params.n_bins();
        let mut out = vec![0.0; activity.len()];
        for (row, &neuron) in self.permutation.iter().enumerate() {
            out[neuron * nb..(neuron + 1) * nb].copy_from_slice(&activity[row * nb..(row + 1) * nb]);
        }
        out
    }

    /// Mean activity of the top population per bin.
    fn top_mean(&self, activity: &[f32]) -> Vec<f64> {
        let nb = self.params.n_bins();
        let ordered = self.unshuffle(activity);
        let n_top = self.params.n_top();
        (0..nb)
            .map(|b| (0..n_top).map(|k| ordered[k * nb + b] as f64).sum::<f64>() / n_top as f64)
            .collect()
    }

    /// Pulse detector: mean top-population rate during the pulse window
    /// exceeds `factor` times the rate elsewhere (plus a small floor).
    pub fn detect_pulse(&self, activity: &[f32], factor: f64) -> bool {
        let p = &self.params;
        let m = self.top_mean(activity);
        let lo = (p.pulse_onset_ms / p.bin_ms) as usize;
        let hi = (((p.pulse_onset_ms + p.pulse_width_ms) / p.bin_ms) as usize).min(m.len());
        let inside = m[lo..hi].iter().sum::<f64>() / (hi - lo).max(1) as f64;
        let outside: Vec<f64> = m
            .iter()
            .enumerate()
            .filter(|(b, _)| *b < lo || *b >= hi)
            .map(|(_, v)| *v)
            .collect();
        let base = outside.iter().sum::<f64>() / outside.len().max(1) as f64;
        inside > factor * base + 0.01
    }

    /// Rhythm detector: spectral power of the top-population mean near the
    /// rhythm frequency (± 3 Hz), computed after the pulse window, exceeds
    /// `factor` times the mean power of the other frequencies.
    pub fn detect_rhythm(&self, activity: &[f32], factor: f64) -> bool {
        let p = &self.params;
        let m = self.top_mean(activity);
        let start = (((p.pulse_onset_ms + p.pulse_width_ms) / p.bin_ms).ceil() as usize + 5).min(m.len());
        let x = &m[start..];
        let len = x.len();
        if len < 8 {
            return false;
        }
        let mean = x.iter().sum::<f64>() / len as f64;
        let fs = 1000.0 / p.bin_ms;
        let mut band = 0.0f64;
        let mut others = Vec::new();
        for f_idx in 1..len / 2 {
            let freq = f_idx as f64 * fs / len as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &xv) in x.iter().enumerate() {
                let ang = std::f64::consts::TAU * f_idx as f64 * t as f64 / len as f64;
                re += (xv - mean) * ang.cos();
                im -= (xv - mean) * ang.sin();
            }
            let power = re * re + im * im;
            if (freq - p.rhythm_freq).abs() <= 3.0 {
                band = band.max(power);
            } else {
                others.push(power);
            }
        }
        let mean_other = others.iter().sum::<f64>() / others.len().max(1) as f64;
        band > factor * mean_other && band > 1e-6
    }

    /// Balanced experiment: trial `t` shows class `t mod 4`. Returns the
    /// learner-facing dataset and the ground-truth sidecar.
    pub fn run_experiment(&self, n_per_class: usize, seed: u64) -> Result<(CausalDataset, TruthTable)> {
        if n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be at least 1"));
        }
        let n = 4 * n_per_class;
        let side = self.stimulus.side;
        let trials = exec::map_range(n, |t| {
            let cause = Cause::ALL[t % 4];
            let stim = generate_stimulus_with(&self.stimulus, cause, exec::split_seed(seed, 2 * t as u64));
            let resp = self.simulate_response(&stim, exec::split_seed(seed, 2 * t as u64 + 1));
            (stim, resp)
        });
        let mut causes = Vec::with_capacity(n * side * side);
        let mut effects = Vec::with_capacity(n * self.response_dim());
        let mut truth = TruthTable::new(&["index", "cause", "pulse", "rhythm", "distractor", "hbar_row", "vbar_col"]);
        for (t, (stim, resp)) in trials.into_iter().enumerate() {
            causes.extend_from_slice(&stim.pixels);
            effects.extend_from_slice(&resp.activity);
            truth.push(vec![
                t as i64,
                stim.cause.index() as i64,
                resp.flags.pulse as i64,
                resp.flags.rhythm as i64,
                resp.flags.distractor as i64,
                stim.hbar_row.map_or(-1, |r| r as i64),
                stim.vbar_col.map_or(-1, |c| c as i64),
            ])?;
        }
        let data = CausalDataset::new(Mode::Experimental, seed, side * side, self.response_dim(), causes, effects)?;
        Ok((data, truth))
    }
}

/// Convenience wrapper: default parameters, simulator seeded by `seed`.
pub fn run_experiment(n_per_class: usize, seed: u64) -> Result<(CausalDataset, TruthTable)> {
    NeuroSimulator::new(NeuronParams::default(), seed)?.run_experiment(n_per_class, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stimuli_have_the_requested_bars() {
        let cfg = StimulusConfig::default();
        for seed in 0..200 {
            for cause in Cause::ALL {
                let s = generate_stimulus(cause, seed);
                assert!(s.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
                let (h, v) = count_bands(&s.pixels, 20, 0.5);
                assert_eq!(h, usize::from(cause.has_hbar()));
                assert_eq!(v, usize::from(cause.has_vbar()));
                assert_eq!(detect_cause(&s.pixels, &cfg), cause);
            }
        }
    }

    #[test]
    fn bar_pixels_exceed_background_by_contrast() {
        let s = generate_stimulus(Cause::HBar, 3);
        let row = s.hbar_row.unwrap();
        for c in 0..20 {
            assert!(s.pixels[row * 20 + c] >= 0.5);
        }
        let other = (row + 5) % 18;
        assert!((0..20).all(|c| s.pixels[other * 20 + c] < 0.5));
    }

    #[test]
    fn table_is_product_of_mechanisms() {
        let t = ground_truth_table();
        let expect = [
            [1.0, 0.0, 0.0, 0.0],
            [0.2, 0.8, 0.0, 0.0],
            [0.2, 0.0, 0.8, 0.0],
            [0.04, 0.16, 0.16, 0.64],
        ];
        for (row, e) in t.iter().zip(expect) {
            for (a, b) in row.iter().zip(e) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_deterministic_and_shaped() {
        let sim = NeuroSimulator::new(NeuronParams::default(), 1).unwrap();
        let stim = generate_stimulus(Cause::Both, 2);
        let a = sim.simulate_response(&stim, 9);
        let b = sim.simulate_response(&stim, 9);
        assert_eq!(a, b);
        assert_eq!(a.activity.len(), 100 * 100);
        assert!(a.activity.iter().all(|x| *x >= 0.0));
        let mut sorted = sim.permutation().to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn no_bars_means_no_stimulus_drives() {
        let sim = NeuroSimulator::new(NeuronParams::default(), 4).unwrap();
        for t in 0..50 {
            let r = sim.simulate_response(&generate_stimulus(Cause::None, t), t + 100);
            assert!(!r.flags.pulse && !r.flags.rhythm);
        }
    }

    #[test]
    fn detectors_agree_with_drives() {
        let sim = NeuroSimulator::new(NeuronParams::default(), 5).unwrap();
        let mut rng = seeded(6);
        for flags in [
            EffectFlags::default(),
            EffectFlags { pulse: true, ..Default::default() },
            EffectFlags { rhythm: true, ..Default::default() },
            EffectFlags { pulse: true, rhythm: true, distractor: true },
            EffectFlags { distractor: true, ..Default::default() },
        ] {
            for _ in 0..5 {
                let r = sim.integrate(flags, 1.0, &mut rng);
                assert_eq!(sim.detect_pulse(&r.activity, 3.0), flags.pulse, "{flags:?}");
                assert_eq!(sim.detect_rhythm(&r.activity, 20.0), flags.rhythm, "{flags:?}");
            }
        }
    }

    #[test]
    fn baseline_rate_is_low() {
        let sim = NeuroSimulator::new(NeuronParams::default(), 7).unwrap();
        let mut rng = seeded(8);
        let r = sim.integrate(EffectFlags::default(), 0.0, &mut rng);
        // Spikes per neuron per second.
        let rate = r.activity.iter().map(|&x| x as f64 * 10.0).sum::<f64>() / 100.0;
        assert!(rate > 0.5 && rate < 15.0, "baseline {rate} Hz");
    }

    #[test]
    fn experiment_is_balanced() {
        let (data, truth) = run_experiment(1, 3).unwrap();
        assert_eq!(data.len(), 4);
        assert_eq!(truth.column("cause").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(data.d_i(), 400);
        assert_eq!(data.d_j(), 10_000);
        assert!(run_experiment(0, 3).is_err());
    }
}
