//! Quick invariant sweep on random instances, exposed through `markov-rsm selftest`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::centering::{center_uniform, centering_residuals, ProbVector};
use crate::error::Result;
use crate::eval::{kendall_tau, spearman};
use crate::kernels::{distance_rsm, linear_rsm, max_abs, rbf_rsm, Kernel, RepMatrix, Rsm};
use crate::markov::{markov_embed_with_alpha, matrix_power, RepresentationSet};
use crate::measures::{
    ad_cka, ad_distcorr, cka, cka_via_markov, distcorr, distcorr_via_markov, ms_cka, ms_distcorr,
};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_rep(rng: &mut ChaCha8Rng, n: usize, d: usize) -> RepMatrix {
    RepMatrix::new(Array2::from_shape_fn((n, d), |_| {
        rng.random_range(-1.0..1.0)
    }))
    .expect("finite, n >= 2")
}

fn random_rsm(rng: &mut ChaCha8Rng, n: usize) -> Result<Rsm> {
    let d = rng.random_range(1..=8);
    let r = random_rep(rng, n, d);
    match rng.random_range(0..3) {
        0 => Ok(linear_rsm(&r)),
        1 => rbf_rsm(&r, None),
        _ => Ok(distance_rsm(&r)),
    }
}

fn random_q(rng: &mut ChaCha8Rng, n: usize) -> ProbVector {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let mut q = Array1::from(w) / total;
    q[0] += 1.0 - q.sum();
    ProbVector::new(q).expect("normalized")
}

/// Worst observed error and whether it stays within `tol`.
fn check(name: &'static str, tol: f64, f: impl FnOnce() -> Result<f64>) -> CheckResult {
    match f() {
        Ok(err) => CheckResult {
            name,
            passed: err <= tol,
            detail: format!("max error {err:.3e} (tol {tol:.0e})"),
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run(seed: u64, trials: usize) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(check("centering_lemma", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let n = rng.random_range(2..=16);
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-10.0..10.0));
            let q = random_q(&mut rng, n);
            worst = worst.max(centering_residuals(m.view(), &q)?.max());
        }
        Ok(worst)
    }));

    out.push(check("markov_embedding", 1e-12, || {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let n = [3, 8, 16][rng.random_range(0..3)];
            let s = random_rsm(&mut rng, n)?;
            let q = ProbVector::uniform(n);
            let (p, a) = markov_embed_with_alpha(&s, &q)?;
            p.validate()?;
            let bound = 2.0 / n as f64;
            let over = p
                .data()
                .iter()
                .fold(0.0f64, |m, &v| m.max(v - bound).max(-v));
            let centered = center_uniform(s.view())? * a.unwrap_or(1.0);
            let diff = &center_uniform(p.view())? - &centered;
            let rel = max_abs(diff.view()) / max_abs(centered.view()).max(f64::MIN_POSITIVE);
            worst = worst.max(over).max(rel);
        }
        Ok(worst)
    }));

    out.push(check("markov_equivalence", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..trials {
            let n = [4, 16][rng.random_range(0..2)];
            let (s1, s2) = (random_rsm(&mut rng, n)?, random_rsm(&mut rng, n)?);
            worst = worst
                .max((cka(&s1, &s2)?.value - cka_via_markov(&s1, &s2)?.value).abs())
                .max((distcorr(&s1, &s2)?.value - distcorr_via_markov(&s1, &s2)?.value).abs());
        }
        Ok(worst)
    }));

    out.push(check("reductions", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..trials.min(50) {
            let n = 12;
            let (r1, r2) = (random_rep(&mut rng, n, 4), random_rep(&mut rng, n, 5));
            let (s1, s2) = (linear_rsm(&r1), linear_rsm(&r2));
            let base = cka(&s1, &s2)?.value;
            let dbase = distcorr(&s1, &s2)?.value;
            let a1 = RepresentationSet::new(vec![r1])?;
            let a2 = RepresentationSet::new(vec![r2])?;
            worst = worst
                .max((ms_cka(&s1, &s2, 1)?.value - base).abs())
                .max((ms_distcorr(&s1, &s2, 1)?.value - dbase).abs())
                .max((ad_cka(&a1, &a2, Kernel::Linear)?.value - base).abs())
                .max((ad_distcorr(&a1, &a2, Kernel::Linear)?.value - dbase).abs());
        }
        Ok(worst)
    }));

    out.push(check("power_vs_naive", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..trials.min(50) {
            let s = random_rsm(&mut rng, 10)?;
            let (p, _) = markov_embed_with_alpha(&s, &ProbVector::uniform(10))?;
            let t = rng.random_range(1..=8u32);
            let mut naive = p.data().clone();
            for _ in 1..t {
                naive = naive.dot(p.data());
            }
            let fast = matrix_power(&p, t)?;
            worst = worst.max(max_abs((fast.data() - &naive).view()));
        }
        Ok(worst)
    }));

    out.push(check("scale_invariance", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..trials.min(50) {
            let (s1, s2) = (random_rsm(&mut rng, 10)?, random_rsm(&mut rng, 10)?);
            let (a, b) = (0.01, 100.0);
            let (x1, x2) = (s1.scaled(a), s2.scaled(b));
            worst = worst
                .max((cka(&s1, &s2)?.value - cka(&x1, &x2)?.value).abs())
                .max((distcorr(&s1, &s2)?.value - distcorr(&x1, &x2)?.value).abs())
                .max((ms_cka(&s1, &s2, 3)?.value - ms_cka(&x1, &x2, 3)?.value).abs())
                .max((ms_distcorr(&s1, &s2, 3)?.value - ms_distcorr(&x1, &x2, 3)?.value).abs());
        }
        Ok(worst)
    }));

    out.push(check("rank_correlations", 0.0, || {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 1.0, 4.0, 3.0];
        Ok((spearman(&xs, &ys)? - 0.6).abs() + (kendall_tau(&xs, &ys)? * 3.0 - 1.0).abs())
    }));

    out
}
