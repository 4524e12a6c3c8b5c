use crate::diffusion::NoiseSchedule;

/// Deterministic DDIM hop from `t` to `t_next < t`:
///
/// ```text
/// x_next = √ᾱ_next·(x − √(1−ᾱ_t)·e)/√ᾱ_t + √(1−ᾱ_next)·e
/// ```
///
/// With `t_next = t − 1` this is bit-identical to the teacher's deterministic step.
pub fn ddim_step(schedule: &NoiseSchedule, x: &[f64], e: &[f64], t: usize, t_next: usize) -> Vec<f64> {
    ddim_update(schedule.alpha_bar(t), schedule.alpha_bar(t_next), x, e)
}

pub(crate) fn ddim_update(ab_t: f64, ab_next: f64, x: &[f64], e: &[f64]) -> Vec<f64> {
    let sqrt_ab_t = ab_t.sqrt();
    let sqrt_one_minus_ab_t = (1.0 - ab_t).sqrt();
    let sqrt_ab_next = ab_next.sqrt();
    let direction = (1.0 - ab_next).sqrt();
    x.iter()
        .zip(e)
        .map(|(xi, ei)| {
            let pred_x0 = (xi - sqrt_one_minus_ab_t * ei) / sqrt_ab_t;
            sqrt_ab_next * pred_x0 + direction * ei
        })
        .collect()
}
