//! Position and jerk error measures.
//!
//! Jerk is the backward third difference per frame,
//! `j_t = z_t - 3 z_{t-1} + 3 z_{t-2} - z_{t-3}` (m/frame³), defined for
//! `t ≥ 3`. The jerk error of a component is `|j_t - j_t^truth|`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Encoding, JointId, SkeletonSequence, POSE_DIM};

pub const HISTOGRAM_BINS: usize = 10;
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.03;

pub type ComponentVector = [f64; POSE_DIM];

fn check_pair(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<()> {
    pred.expect_encoding(Encoding::Absolute)?;
    truth.expect_encoding(Encoding::Absolute)?;
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    Ok(())
}

/// Mean Euclidean joint distance over all frames and joints (meters).
pub fn ape(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(position_error_sum(pred, truth) / (pred.len() * JointId::ALL.len()) as f64)
}

fn position_error_sum(pred: &SkeletonSequence, truth: &SkeletonSequence) -> f64 {
    let mut sum = 0.0;
    for (p, q) in pred.frames().iter().zip(truth.frames()) {
        for j in JointId::ALL {
            let a = p.joint(j);
            let b = q.joint(j);
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
    }
    sum
}

pub fn jerk(seq: &SkeletonSequence) -> Result<Vec<ComponentVector>> {
    seq.expect_encoding(Encoding::Absolute)?;
    if seq.len() < 4 {
        return Err(Error::InsufficientFrames {
            needed: 4,
            got: seq.len(),
        });
    }
    Ok(seq
        .frames()
        .windows(4)
        .map(|w| {
            let (a, b, c, d) = (w[3].coords(), w[2].coords(), w[1].coords(), w[0].coords());
            let mut j = [0.0; POSE_DIM];
            for k in 0..POSE_DIM {
                j[k] = a[k] - 3.0 * b[k] + 3.0 * c[k] - d[k];
            }
            j
        })
        .collect())
}

/// Jerk in m/s³, for reporting.
pub fn jerk_physical(seq: &SkeletonSequence) -> Result<Vec<ComponentVector>> {
    let k = seq.frame_rate_hz().powi(3);
    Ok(jerk(seq)?
        .into_iter()
        .map(|mut j| {
            j.iter_mut().for_each(|v| *v *= k);
            j
        })
        .collect())
}

pub fn jerk_error(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<Vec<ComponentVector>> {
    check_pair(pred, truth)?;
    let jp = jerk(pred)?;
    let jt = jerk(truth)?;
    Ok(jp
        .iter()
        .zip(&jt)
        .map(|(a, b)| {
            let mut e = [0.0; POSE_DIM];
            for k in 0..POSE_DIM {
                e[k] = (a[k] - b[k]).abs();
            }
            e
        })
        .collect())
}

/// Mean jerk error over every component of every frame with a defined jerk.
pub fn aje(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<f64> {
    let je = jerk_error(pred, truth)?;
    let m = je.len() * POSE_DIM;
    Ok(je.iter().flatten().sum::<f64>() / m as f64)
}

/// Bin of a jerk error value: nine bins of width 0.03 over `[0, 0.27)`,
/// then `[0.27, ∞)`.
pub fn histogram_bin(je: f64) -> usize {
    let edge = |b: usize| HISTOGRAM_BIN_WIDTH * b as f64;
    let mut b = ((je / HISTOGRAM_BIN_WIDTH) as usize).min(HISTOGRAM_BINS - 1);
    while b > 0 && je < edge(b) {
        b -= 1;
    }
    while b < HISTOGRAM_BINS - 1 && je >= edge(b + 1) {
        b += 1;
    }
    b
}

pub fn bin_bounds(bin: usize) -> (f64, f64) {
    let lower = HISTOGRAM_BIN_WIDTH * bin as f64;
    let upper = if bin + 1 == HISTOGRAM_BINS {
        f64::INFINITY
    } else {
        HISTOGRAM_BIN_WIDTH * (bin + 1) as f64
    };
    (lower, upper)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AjeHistogram {
    /// Per-bin jerk-error sum divided by `m`.
    pub bins: [f64; HISTOGRAM_BINS],
    /// Normalisation count: 48 × frames with a defined jerk.
    pub m: usize,
}

impl AjeHistogram {
    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }
}

pub fn aje_histogram(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<AjeHistogram> {
    let mut acc = Accumulator::default();
    acc.add(pred, truth)?;
    Ok(acc.report().histogram())
}

/// Quality of a prediction against ground truth, pooled over one or more sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Average position error (m).
    pub ape: f64,
    /// Average jerk error (m/frame³).
    pub aje: f64,
    pub histogram: [f64; HISTOGRAM_BINS],
    /// 48 × frames that carry a jerk value.
    #[serde(rename = "M")]
    pub m: usize,
    pub frames: usize,
}

impl EvalReport {
    pub fn histogram(&self) -> AjeHistogram {
        AjeHistogram {
            bins: self.histogram,
            m: self.m,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `bin_lower,bin_upper,value` rows; the open last bin has upper `inf`.
    pub fn write_histogram_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_lower,bin_upper,value")?;
        for (b, v) in self.histogram.iter().enumerate() {
            let (lo, hi) = bin_bounds(b);
            writeln!(w, "{lo},{hi},{v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pools APE and jerk-error sums across sequences.
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    position_sum: f64,
    frames: usize,
    jerk_sum: f64,
    bin_sums: [f64; HISTOGRAM_BINS],
    jerk_frames: usize,
}

impl Accumulator {
    pub fn add(&mut self, pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<()> {
        let je = jerk_error(pred, truth)?;
        self.position_sum += position_error_sum(pred, truth);
        self.frames += pred.len();
        for frame in &je {
            for &e in frame {
                self.jerk_sum += e;
                self.bin_sums[histogram_bin(e)] += e;
            }
        }
        self.jerk_frames += je.len();
        Ok(())
    }

    pub fn report(&self) -> EvalReport {
        let m = self.jerk_frames * POSE_DIM;
        let mf = m.max(1) as f64;
        let mut histogram = [0.0; HISTOGRAM_BINS];
        for (h, s) in histogram.iter_mut().zip(&self.bin_sums) {
            *h = s / mf;
        }
        EvalReport {
            ape: self.position_sum / (self.frames.max(1) * JointId::ALL.len()) as f64,
            aje: self.jerk_sum / mf,
            histogram,
            m,
            frames: self.frames,
        }
    }
}

pub fn evaluate(pred: &SkeletonSequence, truth: &SkeletonSequence) -> Result<EvalReport> {
    evaluate_many(std::iter::once((pred, truth)))
}

pub fn evaluate_many<'a>(
    pairs: impl IntoIterator<Item = (&'a SkeletonSequence, &'a SkeletonSequence)>,
) -> Result<EvalReport> {
    let mut acc = Accumulator::default();
    for (p, t) in pairs {
        acc.add(p, t)?;
    }
    if acc.frames == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    Ok(acc.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SkeletonPose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq_from(f: impl Fn(usize, usize) -> f64, n: usize) -> SkeletonSequence {
        let frames = (0..n)
            .map(|t| {
                let mut c = [0.0; POSE_DIM];
                for (k, v) in c.iter_mut().enumerate() {
                    *v = f(t, k);
                }
                SkeletonPose::new(c, Encoding::Absolute).unwrap()
            })
            .collect();
        SkeletonSequence::new(frames, 30.0).unwrap()
    }

    fn random_seq(seed: u64, n: usize) -> SkeletonSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * POSE_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
        seq_from(|t, k| vals[t * POSE_DIM + k], n)
    }

    #[test]
    fn ape_cases() {
        let truth = random_seq(1, 10);
        assert_eq!(ape(&truth, &truth).unwrap(), 0.0);
        let shifted = seq_from(
            |t, k| truth.frames()[t].coords()[k] + if k % 3 == 0 { 0.03 } else { 0.0 },
            10,
        );
        assert!((ape(&shifted, &truth).unwrap() - 0.03).abs() < 1e-12);

        let pred = random_seq(2, 10);
        let mut oracle = 0.0;
        for t in 0..10 {
            for j in 0..16 {
                let mut s = 0.0;
                for a in 0..3 {
                    let d = pred.frames()[t].coords()[3 * j + a] - truth.frames()[t].coords()[3 * j + a];
                    s += d * d;
                }
                oracle += s.sqrt();
            }
        }
        oracle /= 160.0;
        assert!((ape(&pred, &truth).unwrap() - oracle).abs() < 1e-12);
        assert!(ape(&pred, &random_seq(3, 9)).is_err());
    }

    #[test]
    fn third_difference_annihilates_quadratics() {
        let q = seq_from(|t, k| 0.3 + 0.01 * k as f64 * t as f64 - 0.002 * (t * t) as f64, 12);
        for j in jerk(&q).unwrap() {
            assert!(j.iter().all(|v| v.abs() < 1e-12));
        }
        let cubic = seq_from(|t, _| (t * t * t) as f64, 8);
        let j = jerk(&cubic).unwrap();
        assert_eq!(j.len(), 5);
        for frame in j {
            assert!(frame.iter().all(|v| (v - 6.0).abs() < 1e-9));
        }
    }

    #[test]
    fn jerk_matches_convolution() {
        let s = random_seq(4, 15);
        let j = jerk(&s).unwrap();
        let kernel = [1.0, -3.0, 3.0, -1.0];
        for t in 3..15 {
            for k in 0..POSE_DIM {
                let oracle: f64 = (0..4).map(|i| kernel[i] * s.frames()[t - i].coords()[k]).sum();
                assert!((j[t - 3][k] - oracle).abs() < 1e-12);
            }
        }
        assert!(matches!(
            jerk(&random_seq(4, 3)),
            Err(Error::InsufficientFrames { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn jerk_error_cases() {
        let truth = random_seq(5, 12);
        assert!(jerk_error(&truth, &truth).unwrap().iter().flatten().all(|&e| e == 0.0));
        let offset = seq_from(|t, k| truth.frames()[t].coords()[k] + 0.2, 12);
        assert!(jerk_error(&offset, &truth).unwrap().iter().flatten().all(|&e| e < 1e-12));

        // ±a alternation on component 7: Δ³ of (-1)^t a has magnitude 8a.
        let a = 0.004;
        let alt = seq_from(
            |t, k| truth.frames()[t].coords()[k] + if k == 7 { a * if t % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 },
            12,
        );
        let je = jerk_error(&alt, &truth).unwrap();
        for frame in &je {
            for (k, &e) in frame.iter().enumerate() {
                if k == 7 {
                    assert!((e - 8.0 * a).abs() < 1e-12);
                } else {
                    assert!(e < 1e-12);
                }
            }
        }
        assert!(jerk_error(&alt, &random_seq(5, 11)).is_err());
    }

    #[test]
    fn aje_flat_loop_oracle() {
        let p = random_seq(6, 20);
        let t = random_seq(7, 20);
        let mut sum = 0.0;
        for f in 3..20 {
            for k in 0..POSE_DIM {
                let jp = p.frames()[f].coords()[k] - 3.0 * p.frames()[f - 1].coords()[k]
                    + 3.0 * p.frames()[f - 2].coords()[k]
                    - p.frames()[f - 3].coords()[k];
                let jt = t.frames()[f].coords()[k] - 3.0 * t.frames()[f - 1].coords()[k]
                    + 3.0 * t.frames()[f - 2].coords()[k]
                    - t.frames()[f - 3].coords()[k];
                sum += (jp - jt).abs();
            }
        }
        let oracle = sum / (17.0 * 48.0);
        assert!((aje(&p, &t).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(aje(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn bins_follow_edges() {
        assert_eq!(histogram_bin(0.0), 0);
        assert_eq!(histogram_bin(0.0299), 0);
        assert_eq!(histogram_bin(0.03), 1);
        assert_eq!(histogram_bin(0.06), 2);
        assert_eq!(histogram_bin(0.2699), 8);
        assert_eq!(histogram_bin(0.27), 9);
        assert_eq!(histogram_bin(5.0), 9);
        for b in 0..10 {
            let (lo, hi) = bin_bounds(b);
            assert_eq!(histogram_bin(lo), b);
            if hi.is_finite() {
                assert_eq!(histogram_bin(hi), b + 1);
            }
        }
    }

    #[test]
    fn single_large_error_lands_in_last_bin() {
        // One component of one frame gets a jerk error of exactly 0.5.
        let truth = seq_from(|_, _| 0.0, 10);
        let pred = seq_from(|t, k| if t == 9 && k == 0 { 0.5 } else { 0.0 }, 10);
        let h = aje_histogram(&pred, &truth).unwrap();
        assert_eq!(h.m, 7 * 48);
        for (b, v) in h.bins.iter().enumerate() {
            if b == 9 {
                assert!((v - 0.5 / h.m as f64).abs() < 1e-15);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        let perfect = aje_histogram(&truth, &truth).unwrap();
        assert!(perfect.bins.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bins_sum_to_aje() {
        let p = seq_from(|t, k| ((t * 7 + k * 13) % 17) as f64 * 0.05, 40);
        let t = random_seq(8, 40);
        let h = aje_histogram(&p, &t).unwrap();
        let a = aje(&p, &t).unwrap();
        assert!((h.total() - a).abs() < 1e-12);
        assert!(h.bins.iter().filter(|&&v| v > 0.0).count() > 3);
    }

    #[test]
    fn pooled_report_matches_concatenated_counts() {
        let (p1, t1) = (random_seq(9, 10), random_seq(10, 10));
        let (p2, t2) = (random_seq(11, 6), random_seq(12, 6));
        let r = evaluate_many([(&p1, &t1), (&p2, &t2)]).unwrap();
        assert_eq!(r.m, (7 + 3) * 48);
        assert_eq!(r.frames, 16);
        let j1: f64 = jerk_error(&p1, &t1).unwrap().iter().flatten().sum();
        let j2: f64 = jerk_error(&p2, &t2).unwrap().iter().flatten().sum();
        assert!((r.aje - (j1 + j2) / r.m as f64).abs() < 1e-12);
        assert!((r.histogram().total() - r.aje).abs() < 1e-12);

        let single = evaluate(&p1, &t1).unwrap();
        assert!((single.ape - ape(&p1, &t1).unwrap()).abs() < 1e-15);
        assert!((single.aje - aje(&p1, &t1).unwrap()).abs() < 1e-15);

        let mut csv = Vec::new();
        r.write_histogram_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 11);
        assert!(text.lines().last().unwrap().starts_with("0.27,inf,"));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"M\""));
    }

    #[test]
    fn physical_jerk_scales_by_cubed_rate() {
        let s = random_seq(13, 8);
        let a = jerk(&s).unwrap();
        let b = jerk_physical(&s).unwrap();
        assert!((b[2][5] - a[2][5] * 27000.0).abs() < 1e-9);
    }
}
