use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::SensorWindow;
use crate::error::{Error, Result};
use crate::model::Domain;
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

pub const MAX_CONDITION: f64 = 20.0;

const HARMONICS: usize = 3;
const TEMPLATE_SEED: u64 = 0x7e3a_11c5;

/// Noise-free class signal: a sinusoid bank at `freq` cycles per window with
/// per-channel harmonic amplitudes and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub freq: f64,
    /// `[channel][harmonic]`
    pub amps: Vec<[f64; HARMONICS]>,
    pub phases: Vec<[f64; HARMONICS]>,
}

/// Templates shared by every subject of an `M`-class, `C`-channel task.
/// Class `m` has fundamental `2 + 2m` cycles per window.
pub fn class_templates(n_classes: usize, channels: usize) -> Vec<ClassTemplate> {
    let mut rng = Rng::stream(
        TEMPLATE_SEED ^ ((n_classes as u64) << 32 | channels as u64),
        Stream::Data,
    );
    (0..n_classes)
        .map(|m| {
            let mut amps = Vec::with_capacity(channels);
            let mut phases = Vec::with_capacity(channels);
            for _ in 0..channels {
                let mut a = [0.0; HARMONICS];
                let mut p = [0.0; HARMONICS];
                for h in 0..HARMONICS {
                    a[h] = rng.uniform_range(0.3, 1.0) / (h + 1) as f64;
                    p[h] = rng.uniform_range(0.0, 2.0 * PI);
                }
                amps.push(a);
                phases.push(p);
            }
            ClassTemplate {
                freq: 2.0 + 2.0 * m as f64,
                amps,
                phases,
            }
        })
        .collect()
}

/// Person-specific transform applied to every window of one subject:
/// per-channel time shift, then channel mixing, per-channel scaling, offset
/// and additive Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSpec {
    pub subject_id: i32,
    pub scale: Vec<f64>,
    /// Per-channel shift in radians of the fundamental.
    pub phase: Vec<f64>,
    /// `C×C`, applied as `x ← mixing · x`.
    pub mixing: Tensor,
    pub offset: Vec<f64>,
    pub noise_std: f64,
    /// Width in radians of the uniform start-phase distribution of windows.
    pub phase_jitter: f64,
}

impl SubjectSpec {
    pub fn identity(subject_id: i32, channels: usize, noise_std: f64) -> Self {
        let mut mixing = Tensor::zeros(&[channels, channels]);
        for c in 0..channels {
            mixing.data_mut()[c * channels + c] = 1.0;
        }
        SubjectSpec {
            subject_id,
            scale: vec![1.0; channels],
            phase: vec![0.0; channels],
            mixing,
            offset: vec![0.0; channels],
            noise_std,
            phase_jitter: 2.0 * PI,
        }
    }

    /// Random transform whose distance from the identity grows with
    /// `magnitude`. The random directions depend only on `rng`, so two specs
    /// drawn from equal streams differ only in how far they move.
    pub fn random(
        subject_id: i32,
        channels: usize,
        magnitude: f64,
        noise_std: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut spec = SubjectSpec::identity(subject_id, channels, noise_std);
        let mut draw = |n: usize| (0..n).map(|_| rng.normal()).collect::<Vec<f64>>();
        let (u_scale, u_phase, u_offset, g) = (
            draw(channels),
            draw(channels),
            draw(channels),
            draw(channels * channels),
        );
        spec.scale = u_scale
            .iter()
            .map(|u| (0.4 * magnitude * u).exp())
            .collect();
        spec.phase = u_phase.iter().map(|u| 0.5 * magnitude * u).collect();
        spec.offset = u_offset.iter().map(|u| 0.8 * magnitude * u).collect();
        // I + a·G/‖G‖₂ keeps singular values in [1-a, 1+a], a < 0.9.
        let gm = DMatrix::from_row_slice(channels, channels, &g);
        let norm = gm.singular_values().max().max(1e-12);
        let a = 0.9 * (1.0 - (-0.5 * magnitude).exp());
        for (i, v) in spec.mixing.data_mut().iter_mut().enumerate() {
            *v += a * g[i] / norm;
        }
        spec
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn condition_number(&self) -> f64 {
        let c = self.channels();
        let sv = DMatrix::from_row_slice(c, c, self.mixing.data()).singular_values();
        sv.max() / sv.min()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.phase.len() != c || self.offset.len() != c || self.mixing.shape() != [c, c] {
            return Err(Error::shape(
                "SubjectSpec",
                "channels",
                c,
                format!(
                    "{}/{}/{:?}",
                    self.phase.len(),
                    self.offset.len(),
                    self.mixing.shape()
                ),
            ));
        }
        if !(self.phase_jitter >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "phase_jitter must be non-negative, got {}",
                self.phase_jitter
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        let k = self.condition_number();
        if !(k <= MAX_CONDITION) {
            return Err(Error::InvalidArgument(format!(
                "subject {} mixing matrix condition number {k:.3} exceeds {MAX_CONDITION}",
                self.subject_id
            )));
        }
        Ok(())
    }
}

/// `n_per_class` windows of each class for one subject, class-major order.
/// Each window starts at a phase drawn uniformly from `[0, phase_jitter)`.
pub fn generate_subject(
    spec: &SubjectSpec,
    n_per_class: usize,
    n_classes: usize,
    channels: usize,
    window_len: usize,
    rng: &mut Rng,
) -> Result<Vec<SensorWindow>> {
    if n_per_class == 0 {
        return Err(Error::InvalidArgument(
            "n_per_class must be at least 1".into(),
        ));
    }
    if spec.channels() != channels {
        return Err(Error::shape(
            "generate_subject",
            "channels",
            channels,
            spec.channels(),
        ));
    }
    spec.validate()?;
    let templates = class_templates(n_classes, channels);
    let mut out = Vec::with_capacity(n_classes * n_per_class);
    let mut base = vec![0.0; channels * window_len];
    for (m, tpl) in templates.iter().enumerate() {
        for _ in 0..n_per_class {
            let psi = rng.uniform_range(0.0, spec.phase_jitter);
            for c in 0..channels {
                for t in 0..window_len {
                    let arg =
                        2.0 * PI * tpl.freq * t as f64 / window_len as f64 + psi + spec.phase[c];
                    base[c * window_len + t] = (0..HARMONICS)
                        .map(|h| tpl.amps[c][h] * ((h + 1) as f64 * arg + tpl.phases[c][h]).sin())
                        .sum();
                }
            }
            let mut x = vec![0.0; channels * window_len];
            for r in 0..channels {
                let row = &mut x[r * window_len..(r + 1) * window_len];
                for c in 0..channels {
                    let w = spec.mixing.data()[r * channels + c];
                    for (v, b) in row
                        .iter_mut()
                        .zip(&base[c * window_len..(c + 1) * window_len])
                    {
                        *v += w * b;
                    }
                }
                for v in row.iter_mut() {
                    *v = spec.scale[r] * *v + spec.offset[r] + spec.noise_std * rng.normal();
                }
            }
            out.push(SensorWindow {
                subject_id: spec.subject_id,
                s: Domain::Labeled,
                x: Tensor::new(vec![channels, window_len], x)?,
                label: Some(m),
            });
        }
    }
    Ok(out)
}

/// The benchmark task: shared class templates, one random transform per
/// subject, and the window budget per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub channels: usize,
    pub window_len: usize,
    pub n_classes: usize,
    pub n_per_class: usize,
    pub noise_std: f64,
    /// Subject transform magnitude (0 = no person-specific shift).
    pub shift: f64,
    pub phase_jitter: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            channels: 4,
            window_len: 128,
            n_classes: 4,
            n_per_class: 100,
            noise_std: 0.1,
            shift: 0.95,
            phase_jitter: 0.5,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn subject_spec(&self, subject_id: i32) -> SubjectSpec {
        let mut rng = Rng::stream(self.seed, Stream::Custom(subject_id as u64));
        SubjectSpec {
            phase_jitter: self.phase_jitter,
            ..SubjectSpec::random(
                subject_id,
                self.channels,
                self.shift,
                self.noise_std,
                &mut rng,
            )
        }
    }

    /// Windows of subject `subject_id`, reproducible from the task seed alone.
    pub fn generate(&self, subject_id: i32) -> Result<Vec<SensorWindow>> {
        let spec = self.subject_spec(subject_id);
        let mut rng = Rng::stream(self.seed, Stream::Custom(0x8000_0000 + subject_id as u64));
        generate_subject(
            &spec,
            self.n_per_class,
            self.n_classes,
            self.channels,
            self.window_len,
            &mut rng,
        )
    }
}
