//! Disturbance waveforms, the three injection sites, and physical-parameter
//! randomization.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::dynamics::{CartPoleParams, QuadrotorParams};
use crate::error::{config, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Site {
    Observation,
    Action,
    Dynamics,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Observation, Site::Action, Site::Dynamics];

    pub fn name(self) -> &'static str {
        match self {
            Site::Observation => "obs",
            Site::Action => "act",
            Site::Dynamics => "dyn",
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Site {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obs" | "observation" => Ok(Site::Observation),
            "act" | "action" => Ok(Site::Action),
            "dyn" | "dynamics" => Ok(Site::Dynamics),
            _ => Err(config(format!("unknown site '{s}' (expected obs, act or dyn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Waveform {
    None,
    WhiteNoise,
    UniformNoise,
    Step,
    Impulse,
    Sawtooth,
    Triangle,
}

impl Waveform {
    pub fn name(self) -> &'static str {
        match self {
            Waveform::None => "none",
            Waveform::WhiteNoise => "white",
            Waveform::UniformNoise => "uniform",
            Waveform::Step => "step",
            Waveform::Impulse => "impulse",
            Waveform::Sawtooth => "sawtooth",
            Waveform::Triangle => "triangle",
        }
    }

    pub fn is_noise(self) -> bool {
        matches!(self, Waveform::WhiteNoise | Waveform::UniformNoise)
    }
}

impl fmt::Display for Waveform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Waveform {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Waveform::None,
            "white" | "white_noise" | "normal" => Waveform::WhiteNoise,
            "uniform" | "uniform_noise" => Waveform::UniformNoise,
            "step" => Waveform::Step,
            "impulse" => Waveform::Impulse,
            "sawtooth" => Waveform::Sawtooth,
            "triangle" => Waveform::Triangle,
            _ => return Err(config(format!("unknown disturbance kind '{s}'"))),
        })
    }
}

pub const DEFAULT_ONSET: usize = 2;
pub const DEFAULT_WIDTH: usize = 2;
pub const DEFAULT_PERIOD: usize = 50;

/// One disturbance channel. `direction = None` means the site default chosen
/// by the environment.
#[derive(Clone, Debug, PartialEq)]
pub struct DisturbanceSpec {
    pub site: Site,
    pub kind: Waveform,
    /// Standard deviation for white noise, half-width for uniform noise,
    /// amplitude otherwise (site units).
    pub level: f64,
    pub onset: usize,
    pub width: usize,
    pub period: usize,
    pub direction: Option<Vec<f64>>,
}

impl DisturbanceSpec {
    pub fn new(site: Site, kind: Waveform, level: f64) -> Self {
        Self {
            site,
            kind,
            level,
            onset: DEFAULT_ONSET,
            width: DEFAULT_WIDTH,
            period: DEFAULT_PERIOD,
            direction: None,
        }
    }

    pub fn none(site: Site) -> Self {
        Self::new(site, Waveform::None, 0.0)
    }

    pub fn with_level(&self, level: f64) -> Self {
        Self { level, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level.is_finite() && self.level >= 0.0) {
            return Err(config(format!("disturbance.level must be >= 0, got {}", self.level)));
        }
        if self.width < 1 {
            return Err(config("disturbance.width must be >= 1"));
        }
        if self.period < 2 {
            return Err(config("disturbance.period must be >= 2"));
        }
        if let Some(d) = &self.direction {
            check_unit(d)?;
        }
        Ok(())
    }

    /// Binds this disturbance to a site dimension, resolving the direction.
    pub fn bind(&self, dim: usize, default_direction: &[f64]) -> Result<Disturbance> {
        self.validate()?;
        let direction = self.direction.clone().unwrap_or_else(|| default_direction.to_vec());
        if direction.len() != dim {
            return Err(config(format!(
                "{} disturbance direction has {} components, site dimension is {dim}",
                self.site,
                direction.len()
            )));
        }
        check_unit(&direction)?;
        Ok(Disturbance {
            spec: self.clone(),
            direction,
        })
    }
}

fn check_unit(d: &[f64]) -> Result<()> {
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if d.is_empty() || !((norm - 1.0).abs() <= 1e-9) {
        return Err(config(format!("disturbance.direction must be a unit vector, got {d:?}")));
    }
    Ok(())
}

/// Uniform unit vector `(1/sqrt(n), ...)`.
pub fn isotropic_direction(n: usize) -> Vec<f64> {
    vec![1.0 / (n as f64).sqrt(); n]
}

/// Scalar envelope of a deterministic waveform at step `i`, in [0, 1].
pub fn envelope(kind: Waveform, onset: usize, width: usize, period: usize, i: usize) -> f64 {
    if i < onset {
        return 0.0;
    }
    let k = i - onset;
    match kind {
        Waveform::Step => 1.0,
        Waveform::Impulse => {
            if k < width {
                1.0
            } else {
                0.0
            }
        }
        Waveform::Sawtooth => (k % period) as f64 / period as f64,
        Waveform::Triangle => {
            let k = k % period;
            let up = 2 * k;
            if up <= period {
                up as f64 / period as f64
            } else {
                (2 * (period - k)) as f64 / period as f64
            }
        }
        Waveform::None | Waveform::WhiteNoise | Waveform::UniformNoise => 0.0,
    }
}

/// A validated disturbance bound to a site dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Disturbance {
    spec: DisturbanceSpec,
    direction: Vec<f64>,
}

impl Disturbance {
    pub fn spec(&self) -> &DisturbanceSpec {
        &self.spec
    }

    pub fn site(&self) -> Site {
        self.spec.site
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    /// Disturbance vector at step `i`. Noise draws come only from `rng`.
    pub fn sample(&self, i: usize, rng: &mut Rng) -> Vec<f64> {
        let s = &self.spec;
        let n = self.dim();
        if s.level == 0.0 || s.kind == Waveform::None {
            return vec![0.0; n];
        }
        match s.kind {
            Waveform::WhiteNoise => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    s.level * z
                })
                .collect(),
            Waveform::UniformNoise => (0..n).map(|_| rng.random_range(-s.level..=s.level)).collect(),
            _ => {
                let e = envelope(s.kind, s.onset, s.width, s.period, i);
                self.direction.iter().map(|d| s.level * e * d).collect()
            }
        }
    }
}

/// Compose a nominal site vector with a disturbance. For the dynamics site
/// the nominal vector is zero and the result is the external force.
pub fn apply(nominal: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    if nominal.len() != d.len() {
        return Err(config(format!(
            "disturbance dimension {} does not match site dimension {}",
            d.len(),
            nominal.len()
        )));
    }
    Ok(nominal.iter().zip(d).map(|(a, b)| a + b).collect())
}

/// Closed interval `[lo, hi]` with `lo > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi) {
            return Err(config(format!("{name} interval must satisfy 0 < lo <= hi, got [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            Uniform::new_inclusive(self.lo, self.hi).expect("validated interval").sample(rng)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamSet {
    CartPole(CartPoleParams),
    Quadrotor(QuadrotorParams),
}

impl ParamSet {
    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSet::CartPole(p) => p.validate(),
            ParamSet::Quadrotor(p) => p.validate(),
        }
    }

    /// Multiply every randomizable parameter by `factor` (mismatch tests).
    pub fn scaled(&self, factor: f64) -> Self {
        match *self {
            ParamSet::CartPole(p) => ParamSet::CartPole(CartPoleParams {
                pole_length: p.pole_length * factor,
                pole_mass: p.pole_mass * factor,
                cart_mass: p.cart_mass * factor,
                ..p
            }),
            ParamSet::Quadrotor(p) => ParamSet::Quadrotor(QuadrotorParams {
                mass: p.mass * factor,
                inertia_yy: p.inertia_yy * factor,
                ..p
            }),
        }
    }
}

/// Per-parameter sampling intervals for domain randomization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamRandomization {
    CartPole {
        pole_length: Interval,
        pole_mass: Interval,
        cart_mass: Interval,
    },
    Quadrotor {
        mass: Interval,
        inertia_yy: Interval,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DrRange {
    Default,
    Low,
    Mid,
    High,
}

impl DrRange {
    pub const ALL: [DrRange; 4] = [DrRange::Default, DrRange::Low, DrRange::Mid, DrRange::High];

    pub fn name(self) -> &'static str {
        match self {
            DrRange::Default => "default",
            DrRange::Low => "low",
            DrRange::Mid => "mid",
            DrRange::High => "high",
        }
    }
}

impl FromStr for DrRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(DrRange::Default),
            "low" => Ok(DrRange::Low),
            "mid" => Ok(DrRange::Mid),
            "high" => Ok(DrRange::High),
            _ => Err(config(format!("unknown randomization range '{s}'"))),
        }
    }
}

impl ParamRandomization {
    /// Cart-pole randomization presets; `Default` is the nominal point.
    pub fn cartpole(range: DrRange) -> Self {
        let (l, m, c) = match range {
            DrRange::Default => (Interval::point(0.5), Interval::point(0.1), Interval::point(1.0)),
            DrRange::Low => (Interval::new(0.3, 0.7), Interval::new(0.05, 0.2), Interval::new(0.7, 1.3)),
            DrRange::Mid => (Interval::new(0.1, 1.0), Interval::new(0.01, 0.5), Interval::new(0.1, 2.0)),
            DrRange::High => (Interval::new(0.1, 3.0), Interval::new(0.01, 2.0), Interval::new(0.1, 4.0)),
        };
        ParamRandomization::CartPole {
            pole_length: l,
            pole_mass: m,
            cart_mass: c,
        }
    }

    /// Degenerate intervals at the given parameters.
    pub fn fixed(params: &ParamSet) -> Self {
        match params {
            ParamSet::CartPole(p) => ParamRandomization::CartPole {
                pole_length: Interval::point(p.pole_length),
                pole_mass: Interval::point(p.pole_mass),
                cart_mass: Interval::point(p.cart_mass),
            },
            ParamSet::Quadrotor(p) => ParamRandomization::Quadrotor {
                mass: Interval::point(p.mass),
                inertia_yy: Interval::point(p.inertia_yy),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ParamRandomization::CartPole {
                pole_length,
                pole_mass,
                cart_mass,
            } => {
                pole_length.validate("pole_length")?;
                pole_mass.validate("pole_mass")?;
                cart_mass.validate("cart_mass")
            }
            ParamRandomization::Quadrotor { mass, inertia_yy } => {
                mass.validate("mass")?;
                inertia_yy.validate("inertia_yy")
            }
        }
    }

    /// Draw each randomized parameter independently; all other fields come
    /// from `base`.
    pub fn sample(&self, base: &ParamSet, rng: &mut Rng) -> Result<ParamSet> {
        self.validate()?;
        match (self, base) {
            (
                ParamRandomization::CartPole {
                    pole_length,
                    pole_mass,
                    cart_mass,
                },
                ParamSet::CartPole(p),
            ) => Ok(ParamSet::CartPole(CartPoleParams {
                pole_length: pole_length.draw(rng),
                pole_mass: pole_mass.draw(rng),
                cart_mass: cart_mass.draw(rng),
                ..*p
            })),
            (ParamRandomization::Quadrotor { mass, inertia_yy }, ParamSet::Quadrotor(p)) => {
                Ok(ParamSet::Quadrotor(QuadrotorParams {
                    mass: mass.draw(rng),
                    inertia_yy: inertia_yy.draw(rng),
                    ..*p
                }))
            }
            _ => Err(config("randomization spec does not match the task's parameter set")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;

    fn bound(kind: Waveform, level: f64, dim: usize) -> Disturbance {
        DisturbanceSpec::new(Site::Action, kind, level)
            .bind(dim, &isotropic_direction(dim))
            .unwrap()
    }

    #[test]
    fn step_onset_at_index_two() {
        let d = bound(Waveform::Step, 5.0, 1);
        let mut rng = substream(0, &[]);
        assert_eq!(d.sample(0, &mut rng), vec![0.0]);
        assert_eq!(d.sample(1, &mut rng), vec![0.0]);
        assert_eq!(d.sample(2, &mut rng), vec![5.0]);
        assert_eq!(d.sample(200, &mut rng), vec![5.0]);
    }

    #[test]
    fn impulse_is_two_steps_wide() {
        let d = bound(Waveform::Impulse, 3.0, 1);
        let mut rng = substream(0, &[]);
        let v: Vec<f64> = (0..8).map(|i| d.sample(i, &mut rng)[0]).collect();
        assert_eq!(v, vec![0.0, 0.0, 3.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_level_noise_is_exact_zero() {
        let d = bound(Waveform::WhiteNoise, 0.0, 4);
        let mut rng = substream(1, &[]);
        for i in 0..50 {
            assert!(d.sample(i, &mut rng).iter().all(|v| v.to_bits() == 0));
        }
    }

    #[test]
    fn uniform_noise_within_level() {
        let d = bound(Waveform::UniformNoise, 0.3, 2);
        let mut rng = substream(2, &[]);
        for i in 0..1000 {
            assert!(d.sample(i, &mut rng).iter().all(|v| v.abs() <= 0.3));
        }
    }

    #[test]
    fn white_noise_moments() {
        let d = bound(Waveform::WhiteNoise, 2.0, 1);
        let mut rng = substream(3, &[]);
        let xs: Vec<f64> = (0..100_000).map(|i| d.sample(i, &mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var.sqrt() - 2.0).abs() < 0.03);
    }

    #[test]
    fn seed_determinism() {
        let d = bound(Waveform::WhiteNoise, 1.0, 3);
        let a: Vec<_> = {
            let mut r = substream(9, &[1]);
            (0..250).map(|i| d.sample(i, &mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = substream(9, &[1]);
            (0..250).map(|i| d.sample(i, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_direction_dimension_is_config_error() {
        let mut s = DisturbanceSpec::new(Site::Observation, Waveform::Step, 1.0);
        s.direction = Some(vec![1.0, 0.0]);
        assert!(matches!(s.bind(4, &isotropic_direction(4)), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = DisturbanceSpec::new(Site::Action, Waveform::Step, -1.0);
        assert!(s.validate().is_err());
        s.level = 1.0;
        s.period = 1;
        assert!(s.validate().is_err());
        s.period = 50;
        s.width = 0;
        assert!(s.validate().is_err());
        s.width = 2;
        s.direction = Some(vec![0.5]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn apply_is_additive() {
        assert_eq!(apply(&[3.0], &[0.0]).unwrap(), vec![3.0]);
        assert_eq!(apply(&[2.0], &[5.0]).unwrap(), vec![7.0]);
        assert_eq!(apply(&[0.0; 4], &[0.1, 0.0, 0.0, 0.0]).unwrap(), vec![0.1, 0.0, 0.0, 0.0]);
        assert!(apply(&[0.0; 4], &[0.0]).is_err());
    }

    #[test]
    fn degenerate_interval_is_constant() {
        let spec = ParamRandomization::cartpole(DrRange::Default);
        let base = ParamSet::CartPole(CartPoleParams::default());
        let mut rng = substream(4, &[]);
        for _ in 0..100 {
            assert_eq!(spec.sample(&base, &mut rng).unwrap(), base);
        }
    }

    #[test]
    fn low_range_bounds() {
        let spec = ParamRandomization::cartpole(DrRange::Low);
        let base = ParamSet::CartPole(CartPoleParams::default());
        let mut rng = substream(5, &[]);
        for _ in 0..10_000 {
            let ParamSet::CartPole(p) = spec.sample(&base, &mut rng).unwrap() else { unreachable!() };
            assert!((0.3..=0.7).contains(&p.pole_length));
            assert!((0.05..=0.2).contains(&p.pole_mass));
            assert!((0.7..=1.3).contains(&p.cart_mass));
        }
    }

    #[test]
    fn high_range_pole_length_bounds() {
        let spec = ParamRandomization::cartpole(DrRange::High);
        let base = ParamSet::CartPole(CartPoleParams::default());
        let mut rng = substream(6, &[]);
        for _ in 0..10_000 {
            let ParamSet::CartPole(p) = spec.sample(&base, &mut rng).unwrap() else { unreachable!() };
            assert!((0.1..=3.0).contains(&p.pole_length));
        }
    }

    #[test]
    fn mid_range_mean_pole_length() {
        let spec = ParamRandomization::cartpole(DrRange::Mid);
        let base = ParamSet::CartPole(CartPoleParams::default());
        let mut rng = substream(7, &[]);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let ParamSet::CartPole(p) = spec.sample(&base, &mut rng).unwrap() else { unreachable!() };
            sum += p.pole_length;
        }
        assert!((sum / n as f64 - 0.55).abs() <= 0.01);
    }

    #[test]
    fn mismatched_randomization_rejected() {
        let spec = ParamRandomization::cartpole(DrRange::Low);
        let base = ParamSet::Quadrotor(QuadrotorParams::default());
        assert!(spec.sample(&base, &mut substream(0, &[])).is_err());
        let bad = ParamRandomization::CartPole {
            pole_length: Interval::new(0.0, 1.0),
            pole_mass: Interval::point(0.1),
            cart_mass: Interval::point(1.0),
        };
        assert!(bad.validate().is_err());
    }

    const DETERMINISTIC: [Waveform; 4] = [Waveform::Step, Waveform::Impulse, Waveform::Sawtooth, Waveform::Triangle];

    proptest! {
        #[test]
        fn periodic_kinds_repeat(onset in 0usize..10, period in 2usize..80, i in 0usize..500, tri in any::<bool>()) {
            let kind = if tri { Waveform::Triangle } else { Waveform::Sawtooth };
            let i = i + onset;
            prop_assert_eq!(envelope(kind, onset, 2, period, i), envelope(kind, onset, 2, period, i + period));
        }

        #[test]
        fn triangle_symmetric(half in 1usize..40, k in 0usize..80) {
            let period = 2 * half;
            let k = k % (period + 1);
            prop_assert_eq!(envelope(Waveform::Triangle, 0, 2, period, k), envelope(Waveform::Triangle, 0, 2, period, period - k));
        }

        #[test]
        fn deterministic_kinds_scale_linearly(which in 0usize..4, level in 0.0f64..100.0, i in 0usize..300, dim in 1usize..7) {
            let kind = DETERMINISTIC[which];
            let a = bound(kind, level, dim);
            let b = bound(kind, 2.0 * level, dim);
            let mut r = substream(0, &[]);
            let va = a.sample(i, &mut r);
            let vb = b.sample(i, &mut r);
            for (x, y) in va.iter().zip(&vb) {
                prop_assert_eq!(2.0 * x, *y);
            }
        }

        #[test]
        fn envelope_in_unit_interval(which in 0usize..4, onset in 0usize..10, period in 2usize..80, i in 0usize..500) {
            let e = envelope(DETERMINISTIC[which], onset, 2, period, i);
            prop_assert!((0.0..=1.0).contains(&e));
        }
    }
}
