use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};

/// Adams–Bashforth combinations `(numerators, denominator)` indexed by history length,
/// most recent output first. Shorter histories cover the warmup steps.
pub const LMS_COEFFICIENTS: [(&[f64], f64); 4] = [
    (&[1.0], 1.0),
    (&[3.0, -1.0], 2.0),
    (&[23.0, -16.0, 5.0], 12.0),
    (&[55.0, -59.0, 37.0, -9.0], 24.0),
];

/// `e′` from up to four past model outputs, most recent first.
pub fn lms_combination(history: &[&[f64]]) -> Result<Vec<f64>> {
    if history.is_empty() {
        return Err(Error::InvalidParameter("PNDM needs at least one model output".into()));
    }
    let order = history.len().min(4);
    let (coeffs, denom) = LMS_COEFFICIENTS[order - 1];
    let d = history[0].len();
    if let Some(h) = history[..order].iter().find(|h| h.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: h.len(),
        });
    }
    Ok((0..d)
        .map(|k| {
            coeffs
                .iter()
                .zip(&history[..order])
                .map(|(c, h)| c * h[k])
                .sum::<f64>()
                / denom
        })
        .collect())
}

/// Pseudo-numerical hop from `t` to `t_next`:
///
/// ```text
/// x_next = (√ᾱ_next/√ᾱ_t)·x − (1/√ᾱ_t)·α′·e′
/// α′     = (ᾱ_next − ᾱ_t) / (√((1−ᾱ_next)·ᾱ_t) + √((1−ᾱ_t)·ᾱ_next))
/// ```
pub fn pndm_step(
    schedule: &NoiseSchedule,
    x: &[f64],
    history: &[&[f64]],
    t: usize,
    t_next: usize,
) -> Result<Vec<f64>> {
    let e_prime = lms_combination(history)?;
    if e_prime.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: e_prime.len(),
        });
    }
    Ok(pndm_update(
        schedule.alpha_bar(t),
        schedule.alpha_bar(t_next),
        x,
        &e_prime,
    ))
}

fn pndm_update(ab_t: f64, ab_next: f64, x: &[f64], e_prime: &[f64]) -> Vec<f64> {
    let alpha_prime =
        (ab_next - ab_t) / (((1.0 - ab_next) * ab_t).sqrt() + ((1.0 - ab_t) * ab_next).sqrt());
    let x_coeff = ab_next.sqrt() / ab_t.sqrt();
    let e_coeff = alpha_prime / ab_t.sqrt();
    x.iter()
        .zip(e_prime)
        .map(|(xi, ei)| x_coeff * xi - e_coeff * ei)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_linear_schedule;
    use crate::schedulers::ddim::ddim_update;

    #[test]
    fn fourth_order_table() {
        let (c, denom) = LMS_COEFFICIENTS[3];
        assert_eq!(c, &[55.0, -59.0, 37.0, -9.0]);
        assert_eq!(denom, 24.0);
        for (c, denom) in LMS_COEFFICIENTS {
            assert_eq!(c.iter().sum::<f64>(), denom);
        }
    }

    #[test]
    fn constant_history_is_reproduced() {
        let e = [0.5, -1.25, 3.0];
        for len in 1..=5 {
            let h = vec![&e[..]; len];
            assert_eq!(lms_combination(&h).unwrap(), e.to_vec());
        }
    }

    #[test]
    fn warmup_orders() {
        let (a, b, c) = ([4.0], [2.0], [1.0]);
        assert_eq!(lms_combination(&[&a, &b]).unwrap(), vec![5.0]);
        assert_eq!(lms_combination(&[&a, &b, &c]).unwrap(), vec![(92.0 - 32.0 + 5.0) / 12.0]);
        assert!(lms_combination(&[]).is_err());
    }

    #[test]
    fn equal_alpha_bar_is_identity() {
        let x = [1.5, -2.0];
        assert_eq!(pndm_update(0.4, 0.4, &x, &[7.0, 7.0]), x.to_vec());
    }

    #[test]
    fn first_order_agrees_with_ddim() {
        let s = make_linear_schedule(200, 1e-4, 0.02).unwrap();
        let x = [0.4, -0.9, 1.3];
        let e = [1.1, 0.2, -0.7];
        for (t, tn) in [(200, 150), (150, 60), (60, 0)] {
            let p = pndm_step(&s, &x, &[&e], t, tn).unwrap();
            let d = ddim_update(s.alpha_bar(t), s.alpha_bar(tn), &x, &e);
            for (a, b) in p.iter().zip(&d) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
