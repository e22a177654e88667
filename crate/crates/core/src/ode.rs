//! Adaptive Dormand–Prince 5(4) integration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("right-hand side is singular or non-finite at x = {x}")]
    Singularity { x: f64 },
    #[error("step size underflow at x = {x}")]
    StepUnderflow { x: f64 },
    #[error("step budget exhausted at x = {x}")]
    TooManySteps { x: f64 },
}

#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(x, y)` from `(x0, y0)` and return the state at each
/// output point. Output points must be monotone in the direction of
/// integration; steps land exactly on them.
pub fn integrate<F>(
    mut f: F,
    x0: f64,
    y0: &[f64],
    outputs: &[f64],
    tol: &Tolerances,
) -> Result<Vec<Vec<f64>>, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> bool,
{
    let dim = y0.len();
    let mut rhs = |x: f64, y: &[f64], out: &mut [f64]| -> Result<(), OdeError> {
        if f(x, y, out) && out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(OdeError::Singularity { x })
        }
    };
    let mut x = x0;
    let mut y = y0.to_vec();
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    rhs(x, &y, &mut k[0])?;
    let mut result = Vec::with_capacity(outputs.len());
    let span = outputs
        .iter()
        .map(|o| (o - x0).abs())
        .fold(0.0, f64::max);
    let mut h = initial_step(&y, &k[0], span, tol);
    let mut steps = 0usize;
    let mut ytmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    for &target in outputs {
        let dir = if target >= x { 1.0 } else { -1.0 };
        while (target - x) * dir > 0.0 {
            steps += 1;
            if steps > tol.max_steps {
                return Err(OdeError::TooManySteps { x });
            }
            let remaining = (target - x).abs();
            let mut last = false;
            let mut hs = h.min(remaining);
            if hs >= remaining * (1.0 - 1e-12) {
                hs = remaining;
                last = true;
            }
            if hs <= 1e-14 * x.abs().max(1.0) {
                return Err(OdeError::StepUnderflow { x });
            }
            let hd = hs * dir;
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += hd * A[s][j] * kj[i];
                    }
                    ytmp[i] = acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                rhs(x + C[s] * hd, &ytmp, &mut tail[0])?;
            }
            // Stage 7 state is the fifth-order solution.
            ynew.copy_from_slice(&ytmp);
            let mut err = 0.0f64;
            for i in 0..dim {
                let mut e = 0.0;
                for (s, ks) in k.iter().enumerate() {
                    e += E[s] * ks[i];
                }
                e *= hd;
                let sc = tol.atol + tol.rtol * y[i].abs().max(ynew[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / dim.max(1) as f64).sqrt();
            if !err.is_finite() {
                h = hs * 0.2;
                continue;
            }
            if err <= 1.0 {
                x = if last { target } else { x + hd };
                y.copy_from_slice(&ynew);
                // First-same-as-last: stage 7 derivative is the next stage 1.
                let k7 = k[6].clone();
                k[0].copy_from_slice(&k7);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = hs * fac;
                }
            } else {
                h = hs * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
        }
        result.push(y.clone());
    }
    Ok(result)
}

fn initial_step(y: &[f64], dy: &[f64], span: f64, tol: &Tolerances) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for i in 0..y.len() {
        let sc = tol.atol + tol.rtol * y[i].abs();
        d0 += (y[i] / sc).powi(2);
        d1 += (dy[i] / sc).powi(2);
    }
    let h = if d0 < 1e-10 || d1 < 1e-10 {
        1e-6
    } else {
        0.01 * (d0 / d1).sqrt()
    };
    let cap = if span > 0.0 { span } else { 1.0 };
    h.min(cap).max(1e-12)
}
