//! Quick invariant checks runnable from the command line.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::beats::map_rpeak_to_frames;
use crate::data::{BeatClass, Signal};
use crate::error::Result;
use crate::loss::{ntxent, ntxent_oracle, ntxent_with_grad, Context, ProjectionBatch};
use crate::nn::PROJECTION_DIM;
use crate::seeds::rng_for;
use crate::stats::{bonferroni, wilcoxon_enumeration, wilcoxon_signed_rank};
use crate::targets::{beat_hard_targets, hard_targets, soft1_targets, soft2_targets, TargetMatrix};
use crate::vcg::{rotate_vcg, KorsTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match run() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
    }
}

fn random_signal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Signal {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Signal::from_vec(rows, cols, data).expect("shape")
}

fn random_batch(rng: &mut ChaCha8Rng, s: usize, spread: f64) -> ProjectionBatch {
    let z = (0..s).map(|_| (0..PROJECTION_DIM).map(|_| rng.random_range(-spread..spread)).collect()).collect();
    ProjectionBatch::new(z, Context::Rhythm).expect("valid batch")
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..f).map(|_| rng.random_range(0.1..1.0)).collect()).collect()
}

/// One target matrix of each kind for `s = 2n` rows.
fn all_targets(rng: &mut ChaCha8Rng, n: usize) -> Result<Vec<TargetMatrix>> {
    let feats = random_features(rng, n, 4);
    let classes: Vec<BeatClass> = (0..2 * n).map(|_| BeatClass::ALL[rng.random_range(0..3)]).collect();
    Ok(vec![
        hard_targets(n)?,
        soft1_targets(&feats, 5.0)?,
        soft2_targets(&feats, (n - 1).clamp(1, 3), 2.0)?,
        beat_hard_targets(&classes)?,
    ])
}

fn kors() -> Check {
    check("kors identity and round trip", || {
        let k = KorsTransform::new();
        let residual = k.identity_residual();
        let mut rng = rng_for(1, &[]);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let v = random_signal(&mut rng, 3, 50);
            let back = k.ecg_to_vcg(&k.vcg_to_ecg(&v)?)?;
            let err = back.as_slice().iter().zip(v.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(err / v.frobenius_norm());
        }
        Ok((residual < 1e-10 && worst < 1e-9, format!("|MM+ - I| = {residual:.2e}, round trip {worst:.2e}")))
    })
}

fn rotation() -> Check {
    check("rotation preserves VCG norms", || {
        let mut rng = rng_for(2, &[]);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let v = random_signal(&mut rng, 3, 40);
            let axis = {
                let a: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
                let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
                [a[0] / n, a[1] / n, a[2] / n]
            };
            let r = rotate_vcg(&v, rng.random_range(-180.0..180.0), axis)?;
            for t in 0..v.samples() {
                let n0 = v.column(t).iter().map(|x| x * x).sum::<f64>().sqrt();
                let n1 = r.column(t).iter().map(|x| x * x).sum::<f64>().sqrt();
                worst = worst.max((n1 - n0).abs() / n0);
            }
        }
        Ok((worst < 1e-9, format!("max relative norm change {worst:.2e}")))
    })
}

fn loss_oracle() -> Check {
    check("loss matches scalar oracle", || {
        let mut rng = rng_for(3, &[]);
        let mut worst = 0.0f64;
        for _ in 0..10 {
            let n = rng.random_range(2..=8);
            for t in all_targets(&mut rng, n)? {
                let b = random_batch(&mut rng, 2 * n, 1.0);
                let fast = ntxent(&b, &t, 0.1)?;
                let slow = ntxent_oracle(&b.z, &t, 0.1)?;
                worst = worst.max((fast - slow).abs() / slow.abs().max(1e-12));
            }
        }
        Ok((worst < 1e-6, format!("max relative difference {worst:.2e}")))
    })
}

fn loss_gradient() -> Check {
    check("loss gradient matches finite differences", || {
        let mut rng = rng_for(4, &[]);
        let h = 1e-5;
        let mut worst = 0.0f64;
        for (case, tau) in [0.5, 0.1, 0.01].into_iter().enumerate() {
            let n = 2 + case;
            let t = soft1_targets(&random_features(&mut rng, n, 3), 2.0)?;
            let b = random_batch(&mut rng, 2 * n, 1.0);
            let (_, g) = ntxent_with_grad(&b, &t, tau)?;
            for _ in 0..20 {
                let (i, d) = (rng.random_range(0..2 * n), rng.random_range(0..PROJECTION_DIM));
                let mut plus = b.clone();
                plus.z[i][d] += h;
                let mut minus = b.clone();
                minus.z[i][d] -= h;
                let fd = (ntxent(&plus, &t, tau)? - ntxent(&minus, &t, tau)?) / (2.0 * h);
                worst = worst.max((fd - g[i][d]).abs() / fd.abs().max(g[i][d].abs()).max(1e-3));
            }
        }
        Ok((worst < 1e-4, format!("max relative error {worst:.2e}")))
    })
}

fn targets() -> Check {
    check("target matrices are well formed", || {
        let mut rng = rng_for(5, &[]);
        let mut bad = 0;
        for _ in 0..20 {
            let n = rng.random_range(2..=6);
            for t in all_targets(&mut rng, n)? {
                bad += usize::from(t.validate(1e-9).is_err());
            }
        }
        Ok((bad == 0, format!("{bad} invalid matrices out of 80")))
    })
}

fn wilcoxon() -> Check {
    check("wilcoxon matches enumeration", || {
        let mut rng = rng_for(6, &[]);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let n = rng.random_range(1..=10);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
            worst = worst.max((wilcoxon_signed_rank(&a, &b)?.p_value - wilcoxon_enumeration(&a, &b)).abs());
        }
        let p5 = wilcoxon_signed_rank(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5])?.p_value;
        let adj = bonferroni(&[0.01, 0.2, 0.6], 3)?;
        let monotone = adj.iter().zip([0.01, 0.2, 0.6]).all(|(q, p)| *q >= p);
        Ok((worst < 1e-12 && p5 == 0.0625 && monotone, format!("max |dp| {worst:.2e}, n=5 all-positive p = {p5}")))
    })
}

fn frame_shift() -> Check {
    check("beat frame mapping shift law", || {
        let mut violations = 0;
        for stride in [1, 2, 4, 8, 16] {
            let n_frames = 10_000;
            for n in (2..=64).step_by(2) {
                for r in 0..200 {
                    let (a0, a1) = map_rpeak_to_frames(r + n, n, stride, n_frames);
                    let (b0, b1) = map_rpeak_to_frames(r + n + stride, n, stride, n_frames);
                    violations += usize::from(b0 != a0 + 1 || b1 != a1 + 1);
                }
            }
        }
        Ok((violations == 0, format!("{violations} violations")))
    })
}

/// Runs every check; the run passes when all of them do.
pub fn run_selftest() -> Vec<Check> {
    vec![kors(), rotation(), loss_oracle(), loss_gradient(), targets(), wilcoxon(), frame_shift()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
