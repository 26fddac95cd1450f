//! Finite-difference gradient oracle evaluated in double-double arithmetic,
//! so the central difference carries truncation error only.

use twofloat::TwoFloat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleActivation {
    Sigmoid,
    Relu,
    Tanh,
    Linear,
}

/// Dense layer: `weights` is row-major `output_size × input_size`.
#[derive(Debug, Clone, Copy)]
pub struct OracleLayer<'a> {
    pub input_size: usize,
    pub output_size: usize,
    pub activation: OracleActivation,
    pub weights: &'a [f64],
    pub biases: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Perturb {
    Weight { layer: usize, index: usize },
    Bias { layer: usize, index: usize },
}

/// exp to roughly 1e-30 relative: reduce by ln 2 and 2^10, sum the Taylor
/// series, square back up.
fn exp(x: TwoFloat) -> TwoFloat {
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - twofloat::consts::LN_2 * k) / 1024.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=12 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// a / b to double-double precision: one Newton step on the reciprocal.
/// (`TwoFloat / TwoFloat` itself only reaches f64 accuracy.)
fn div(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let x0 = 1.0 / b.hi();
    let e = TwoFloat::from(1.0) - b * x0;
    a * (TwoFloat::from(x0) + e * x0)
}

fn activate(a: OracleActivation, z: TwoFloat) -> TwoFloat {
    let one = TwoFloat::from(1.0);
    match a {
        OracleActivation::Linear => z,
        OracleActivation::Relu => {
            if z.hi() > 0.0 {
                z
            } else {
                TwoFloat::from(0.0)
            }
        }
        OracleActivation::Tanh => {
            let e = exp(-2.0 * z.abs());
            let t = div(one - e, one + e);
            if z.hi() < 0.0 {
                -t
            } else {
                t
            }
        }
        OracleActivation::Sigmoid => {
            let e = exp(-z.abs());
            if z.hi() >= 0.0 {
                div(one, one + e)
            } else {
                div(e, one + e)
            }
        }
    }
}

/// Sum-of-squares reconstruction error with one parameter shifted by `delta`.
pub fn perturbed_loss(layers: &[OracleLayer], x: &[f64], at: Perturb, delta: f64) -> TwoFloat {
    let mut a: Vec<TwoFloat> = x.iter().map(|&v| TwoFloat::from(v)).collect();
    for (k, layer) in layers.iter().enumerate() {
        let mut out = Vec::with_capacity(layer.output_size);
        for j in 0..layer.output_size {
            let mut z = TwoFloat::from(layer.biases[j]);
            if at == (Perturb::Bias { layer: k, index: j }) {
                z += delta;
            }
            for (i, ai) in a.iter().enumerate() {
                let idx = j * layer.input_size + i;
                let mut w = TwoFloat::from(layer.weights[idx]);
                if at == (Perturb::Weight { layer: k, index: idx }) {
                    w += delta;
                }
                z += w * *ai;
            }
            out.push(activate(layer.activation, z));
        }
        a = out;
    }
    a.iter().zip(x).fold(TwoFloat::from(0.0), |s, (y, &t)| {
        let d = *y - t;
        s + d * d
    })
}

/// (L(θ + h) − L(θ − h)) / 2h for one parameter.
pub fn central_difference(layers: &[OracleLayer], x: &[f64], at: Perturb, h: f64) -> f64 {
    let up = perturbed_loss(layers, x, at, h);
    let down = perturbed_loss(layers, x, at, -h);
    f64::from((up - down) / (2.0 * h))
}

/// |a − n| / max(|a|, |n|), zero when both are exactly zero.
pub fn relative_error(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_and_div_hold_double_double_precision() {
        let e = exp(TwoFloat::from(1.0));
        assert!(f64::from(e - twofloat::consts::E).abs() < 1e-28);
        let third = div(TwoFloat::from(1.0), TwoFloat::from(3.0));
        assert!(f64::from(third * 3.0 - 1.0).abs() < 1e-30);
    }

    #[test]
    fn linear_layer_difference_is_exact() {
        // L(b) = (b - 1)^2 at b = 0.25 → L' = -1.5
        let layer = OracleLayer {
            input_size: 1,
            output_size: 1,
            activation: OracleActivation::Linear,
            weights: &[0.0],
            biases: &[0.25],
        };
        let d = central_difference(&[layer], &[1.0], Perturb::Bias { layer: 0, index: 0 }, 1e-5);
        assert!((d + 1.5).abs() < 1e-20);
    }
}
