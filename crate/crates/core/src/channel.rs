//! Fading multiple-access channel with analog (over-the-air) aggregation.
//!
//! Each gradient is split into `M` contiguous segments, one per orthogonal
//! sub-channel. A scheduled worker pre-scales segment `m` by `σ / h_m` so
//! that after the channel every worker arrives with the same gain `σ`; the
//! receiver sees `σ · Σ g_m + z_m` and divides by `B·σ` to recover the mean
//! gradient plus attenuated noise. The cost of that inversion is the
//! transmit energy `Σ_m (σ/h_m)² ‖g_m‖²`.
//!
//! Channels are modelled as real positive amplitudes: the magnitude of a
//! standard complex normal draw, with the phase assumed pre-compensated.

use std::f64::consts::FRAC_1_SQRT_2;
use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{apply_update, GradientVector, ParamVector};
use crate::rng::RngStream;

/// Amplitude gains for one round, `M` sub-channels by `N` workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRound {
    subchannels: usize,
    workers: usize,
    /// Worker-major: worker `n`'s `M` gains are contiguous.
    gains: Vec<f64>,
}

impl ChannelRound {
    pub fn from_gains(subchannels: usize, workers: usize, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != subchannels * workers {
            return Err(Error::LengthMismatch {
                expected: subchannels * workers,
                actual: gains.len(),
            });
        }
        if gains.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Precondition("channel gains must be positive and finite".into()));
        }
        Ok(Self {
            subchannels,
            workers,
            gains,
        })
    }

    pub fn subchannels(&self) -> usize {
        self.subchannels
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn gain(&self, m: usize, n: usize) -> f64 {
        self.gains[n * self.subchannels + m]
    }

    /// Gains seen by worker `n` across all sub-channels.
    pub fn worker_gains(&self, n: usize) -> &[f64] {
        &self.gains[n * self.subchannels..(n + 1) * self.subchannels]
    }
}

/// `|CN(0, 1)|`: Rayleigh with scale `1/√2`, so `E|h|² = 1`.
pub fn draw_gain(rng: &mut impl Rng) -> f64 {
    loop {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let h = FRAC_1_SQRT_2 * re.hypot(im);
        if h > 0.0 {
            return h;
        }
    }
}

/// Draws all gains for one round, worker by worker.
pub fn draw_channel(subchannels: usize, workers: usize, stream: &mut RngStream) -> ChannelRound {
    let gains = (0..subchannels * workers).map(|_| draw_gain(stream)).collect();
    ChannelRound {
        subchannels,
        workers,
        gains,
    }
}

/// How a length-`s` vector is cut into `M` contiguous segments: the first
/// `s mod M` segments get `⌈s/M⌉` entries, the rest `⌊s/M⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentLayout {
    len: usize,
    segments: usize,
}

impl SegmentLayout {
    pub fn new(len: usize, segments: usize) -> Result<Self> {
        if segments == 0 || segments > len {
            return Err(Error::TooManySubchannels {
                subchannels: segments,
                params: len,
            });
        }
        Ok(Self { len, segments })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn range(&self, m: usize) -> Range<usize> {
        let base = self.len / self.segments;
        let extra = self.len % self.segments;
        let start = m * base + m.min(extra);
        let size = base + usize::from(m < extra);
        start..start + size
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.segments).map(|m| self.range(m))
    }
}

/// A gradient viewed as `M` sub-channel segments.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSegments {
    layout: SegmentLayout,
    values: Vec<f64>,
}

impl GradientSegments {
    pub fn layout(&self) -> SegmentLayout {
        self.layout
    }

    pub fn segment(&self, m: usize) -> &[f64] {
        &self.values[self.layout.range(m)]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.layout.ranges().map(|r| &self.values[r])
    }

    /// Concatenation of all segments, i.e. the original gradient.
    pub fn concat(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }
}

pub fn segment(g: GradientVector, subchannels: usize) -> Result<GradientSegments> {
    let layout = SegmentLayout::new(g.values.len(), subchannels)?;
    Ok(GradientSegments {
        layout,
        values: g.values,
    })
}

/// Transmit energy with channel inversion: `Σ_m (σ/h_m)² · ‖g_m‖²`.
pub fn worker_energy(power_scalar: f64, gains: &[f64], segs: &GradientSegments) -> Result<f64> {
    if gains.len() != segs.layout.segments() {
        return Err(Error::LengthMismatch {
            expected: segs.layout.segments(),
            actual: gains.len(),
        });
    }
    let energy: f64 = gains
        .iter()
        .zip(segs.iter())
        .map(|(&h, seg)| {
            let amp = power_scalar / h;
            amp * amp * seg.iter().map(|v| v * v).sum::<f64>()
        })
        .sum();
    if !energy.is_finite() {
        return Err(Error::NonFinite { what: "energy" });
    }
    Ok(energy)
}

/// What the receiver sees on every sub-channel after superposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedSignal {
    layout: SegmentLayout,
    values: Vec<f64>,
    noise_std: f64,
}

impl ReceivedSignal {
    pub fn segment(&self, m: usize) -> &[f64] {
        &self.values[self.layout.range(m)]
    }

    pub fn layout(&self) -> SegmentLayout {
        self.layout
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Superposes the scheduled workers' aligned signals: `y_m = σ·Σ g_m + z_m`.
/// Gains cancel under channel inversion, so they do not appear here. Noise
/// entries are i.i.d. standard normal, drawn in flat order from `noise`.
pub fn mac_aggregate(
    scheduled: &[&GradientSegments],
    power_scalar: f64,
    noise: Option<&mut RngStream>,
) -> Result<ReceivedSignal> {
    let first = scheduled.first().ok_or(Error::NothingScheduled)?;
    let layout = first.layout;
    if let Some(bad) = scheduled.iter().find(|s| s.layout != layout) {
        return Err(Error::LengthMismatch {
            expected: layout.len(),
            actual: bad.layout.len(),
        });
    }
    let mut values = vec![0.0; layout.len()];
    for segs in scheduled {
        for (y, g) in values.iter_mut().zip(&segs.values) {
            *y += g;
        }
    }
    for y in &mut values {
        *y *= power_scalar;
    }
    let noise_std = match noise {
        Some(rng) => {
            for y in &mut values {
                *y += rng.sample::<f64, _>(StandardNormal);
            }
            1.0
        }
        None => 0.0,
    };
    Ok(ReceivedSignal {
        layout,
        values,
        noise_std,
    })
}

/// Recovers `ĝ = y / (B·σ)`.
pub fn descale(y: &ReceivedSignal, power_scalar: f64, scheduled_count: usize) -> Result<Vec<f64>> {
    if scheduled_count == 0 {
        return Err(Error::NothingScheduled);
    }
    let denom = scheduled_count as f64 * power_scalar;
    Ok(y.values.iter().map(|v| v / denom).collect())
}

/// Parameter-server step from the received signal: descale, then the
/// momentum update from [`apply_update`]. Returns the estimate `ĝ` used.
pub fn ps_descale_update(
    w: &mut ParamVector,
    y: &ReceivedSignal,
    power_scalar: f64,
    scheduled_count: usize,
    learning_rate: f64,
    velocity: &mut [f64],
    momentum: f64,
) -> Result<Vec<f64>> {
    let g_hat = descale(y, power_scalar, scheduled_count)?;
    apply_update(w, &g_hat, learning_rate, velocity, momentum)?;
    Ok(g_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_stream, StreamTag};
    use proptest::prelude::*;

    fn grad(values: Vec<f64>) -> GradientVector {
        GradientVector {
            sample_count: 1,
            values,
        }
    }

    #[test]
    fn segment_lengths() {
        let l = SegmentLayout::new(50890, 100).unwrap();
        let lens: Vec<usize> = l.ranges().map(|r| r.len()).collect();
        assert_eq!(lens.iter().filter(|&&n| n == 509).count(), 90);
        assert_eq!(lens.iter().filter(|&&n| n == 508).count(), 10);
        assert!(lens[..90].iter().all(|&n| n == 509));

        let l = SegmentLayout::new(10, 3).unwrap();
        assert_eq!(l.ranges().map(|r| r.len()).collect::<Vec<_>>(), vec![4, 3, 3]);

        let s = segment(grad(vec![1.0, 2.0, 3.0]), 1).unwrap();
        assert_eq!(s.segment(0), &[1.0, 2.0, 3.0]);
        assert!(matches!(segment(grad(vec![1.0]), 2), Err(Error::TooManySubchannels { .. })));
    }

    #[test]
    fn energy_examples() {
        let s = segment(grad(vec![2.0, 2.0]), 1).unwrap();
        assert_eq!(worker_energy(1.0, &[2.0], &s).unwrap(), 2.0);
        let z = segment(grad(vec![0.0; 4]), 2).unwrap();
        assert_eq!(worker_energy(1.0, &[0.3, 0.7], &z).unwrap(), 0.0);

        let g = segment(grad(vec![0.3, -1.2, 0.5, 2.0, 0.1]), 2).unwrap();
        let e1 = worker_energy(1.5, &[0.4, 1.3], &g).unwrap();
        let e2 = worker_energy(3.0, &[0.4, 1.3], &g).unwrap();
        assert!((e2 - 4.0 * e1).abs() <= 1e-12 * e2);
    }

    #[test]
    fn deep_fade_is_reported_not_clamped() {
        let g = segment(grad(vec![1e200, 1e200]), 1).unwrap();
        assert!(matches!(worker_energy(1.0, &[1e-200], &g), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn aggregate_examples() {
        let g = segment(grad(vec![1.0, -2.0, 3.0]), 2).unwrap();
        let neg = segment(grad(vec![-1.0, 2.0, -3.0]), 2).unwrap();
        let y = mac_aggregate(&[&g], 2.5, None).unwrap();
        assert_eq!(y.as_slice(), &[2.5, -5.0, 7.5]);
        let y = mac_aggregate(&[&g, &neg], 1.0, None).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        let y = mac_aggregate(&[&g, &g, &g, &g], 1.0, None).unwrap();
        assert_eq!(y.as_slice(), &[4.0, -8.0, 12.0]);
        assert_eq!(y.noise_std(), 0.0);
        assert!(matches!(mac_aggregate(&[], 1.0, None), Err(Error::NothingScheduled)));

        let other = segment(grad(vec![1.0, 2.0]), 2).unwrap();
        assert!(mac_aggregate(&[&g, &other], 1.0, None).is_err());
    }

    #[test]
    fn descale_mean_of_two() {
        let g = segment(grad(vec![0.5, -1.0]), 1).unwrap();
        let y = mac_aggregate(&[&g, &g], 3.0, None).unwrap();
        assert_eq!(descale(&y, 3.0, 2).unwrap(), vec![0.5, -1.0]);
        assert!(descale(&y, 3.0, 0).is_err());
    }

    #[test]
    fn rayleigh_power_has_unit_mean() {
        let mut s = derive_stream(5, StreamTag::Channel, None, Some(0));
        let ch = draw_channel(100, 1000, &mut s);
        let mean: f64 = ch.gains.iter().map(|h| h * h).sum::<f64>() / ch.gains.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(ch.gains.iter().all(|&h| h > 0.0));
        let again = draw_channel(100, 1000, &mut derive_stream(5, StreamTag::Channel, None, Some(0)));
        assert_eq!(ch, again);
    }

    #[test]
    fn from_gains_rejects_nonpositive() {
        assert!(ChannelRound::from_gains(1, 2, vec![1.0, 0.0]).is_err());
        assert!(ChannelRound::from_gains(1, 2, vec![1.0]).is_err());
        let ch = ChannelRound::from_gains(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(ch.gain(1, 1), 4.0);
        assert_eq!(ch.worker_gains(0), &[1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn segmentation_round_trips(values in prop::collection::vec(-10.0f64..10.0, 1..300), m in 1usize..300) {
            let m = m.min(values.len());
            let s = segment(grad(values.clone()), m).unwrap();
            let joined: Vec<f64> = s.iter().flat_map(|seg| seg.iter().copied()).collect();
            prop_assert_eq!(joined, values.clone());
            let long = s.layout().ranges().filter(|r| r.len() == values.len().div_ceil(m)).count();
            if values.len() % m != 0 {
                prop_assert_eq!(long, values.len() % m);
            }
        }

        #[test]
        fn energy_matches_direct_formula(
            values in prop::collection::vec(-3.0f64..3.0, 4..64),
            m in 1usize..4,
            sigma in 0.1f64..5.0,
            seed in any::<u64>(),
        ) {
            let mut s = derive_stream(seed, StreamTag::Channel, None, Some(0));
            let ch = draw_channel(m, 1, &mut s);
            let segs = segment(grad(values.clone()), m).unwrap();
            let e = worker_energy(sigma, ch.worker_gains(0), &segs).unwrap();
            // independent route: per-coordinate sum σ²·g_i²/h²
            let layout = SegmentLayout::new(values.len(), m).unwrap();
            let mut direct = 0.0;
            for (mi, r) in layout.ranges().enumerate() {
                let h = ch.gain(mi, 0);
                for i in r {
                    direct += sigma * sigma * values[i] * values[i] / (h * h);
                }
            }
            prop_assert!((e - direct).abs() <= 1e-12 * direct.max(1e-300));
        }
    }
}
