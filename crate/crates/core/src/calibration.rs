//! One-feature logistic calibration of uncertainty scores into the
//! probability that a query's top-1 is wrong.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ridge strength applied to both weight and bias.
pub const RIDGE: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 100;

/// `P(wrong | u) = sigmoid(weight * (u - feature_mean) / feature_std + bias)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    #[serde(rename = "w")]
    pub weight: f64,
    #[serde(rename = "b")]
    pub bias: f64,
    #[serde(rename = "mean")]
    pub feature_mean: f64,
    #[serde(rename = "std")]
    pub feature_std: f64,
}

impl LogisticModel {
    pub fn predict(&self, u: f64) -> f64 {
        predict_prob(self, u)
    }

    /// Coefficients on the unstandardized feature: `sigmoid(w * u + b)`.
    pub fn raw_coefficients(&self) -> (f64, f64) {
        let w = self.weight / self.feature_std;
        (w, self.bias - w * self.feature_mean)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        if !(model.feature_std.is_finite() && model.feature_std > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "model std must be positive, got {}",
                model.feature_std
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::uncertainty::write_json(path, self)
    }
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn predict_prob(model: &LogisticModel, u: f64) -> f64 {
    sigmoid(model.weight * (u - model.feature_mean) / model.feature_std + model.bias)
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: LogisticModel,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective before the first step and after every accepted step.
    pub loss_history: Vec<f64>,
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Problem {
    fn loss(&self, w: f64, b: f64) -> f64 {
        let nll: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| {
                let z = w * x + b;
                softplus(z) - y * z
            })
            .sum();
        nll / self.x.len() as f64 + 0.5 * RIDGE * (w * w + b * b)
    }

    /// Gradient and Hessian of [`Problem::loss`].
    fn derivatives(&self, w: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let n = self.x.len() as f64;
        let (mut gw, mut gb) = (0.0, 0.0);
        let (mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in self.x.iter().zip(&self.y) {
            let p = sigmoid(w * x + b);
            let r = p - y;
            gw += r * x;
            gb += r;
            let s = p * (1.0 - p);
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        (
            [gw / n + RIDGE * w, gb / n + RIDGE * b],
            [[hww / n + RIDGE, hwb / n], [hwb / n, hbb / n + RIDGE]],
        )
    }
}

/// Fits `P(wrong | u)` by damped Newton on the ridge-penalized mean
/// log-loss, starting from zero. `scores` holds `(u, wrong)` pairs.
pub fn fit_logistic(scores: &[(f64, bool)]) -> Result<LogisticModel> {
    fit_logistic_report(scores).map(|r| r.model)
}

pub fn fit_logistic_report(scores: &[(f64, bool)]) -> Result<FitReport> {
    if let Some(&(u, _)) = scores.iter().find(|(u, _)| !u.is_finite()) {
        return Err(Error::NonFinite(format!("uncertainty feature {u}")));
    }
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass {
            positives,
            negatives,
        });
    }

    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.0).sum::<f64>() / n;
    let var = scores.iter().map(|s| (s.0 - mean).powi(2)).sum::<f64>() / n;
    // constant features carry no signal; any positive scale works
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let problem = Problem {
        x: scores.iter().map(|s| (s.0 - mean) / std).collect(),
        y: scores.iter().map(|s| if s.1 { 1.0 } else { 0.0 }).collect(),
    };

    let (mut w, mut b) = (0.0, 0.0);
    let mut loss = problem.loss(w, b);
    let mut history = vec![loss];
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        let (g, h) = problem.derivatives(w, b);
        grad_norm = g[0].hypot(g[1]);
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let step = [
            -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
            -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
        ];
        let slope = g[0] * step[0] + g[1] * step[1];

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (nw, nb) = (w + t * step[0], b + t * step[1]);
            let nl = problem.loss(nw, nb);
            if nl <= loss + 1e-4 * t * slope {
                accepted = Some((nw, nb, nl));
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((nw, nb, nl)) => {
                w = nw;
                b = nb;
                loss = nl;
                history.push(loss);
            }
            // no representable decrease left: at the optimum to machine precision
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        grad_norm = {
            let (g, _) = problem.derivatives(w, b);
            g[0].hypot(g[1])
        };
        converged = grad_norm < GRAD_TOL;
    }

    Ok(FitReport {
        model: LogisticModel {
            weight: w,
            bias: b,
            feature_mean: mean,
            feature_std: std,
        },
        iterations,
        converged,
        grad_norm,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_single_class_and_nan() {
        assert!(matches!(
            fit_logistic(&[(1.0, true), (2.0, true)]),
            Err(Error::SingleClass { positives: 2, negatives: 0 })
        ));
        assert!(matches!(fit_logistic(&[]), Err(Error::SingleClass { .. })));
        assert!(matches!(
            fit_logistic(&[(f64::NAN, true), (2.0, false)]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn centered_point_is_half() {
        let m = LogisticModel {
            weight: 3.0,
            bias: 0.0,
            feature_mean: -12.0,
            feature_std: 4.0,
        };
        assert_eq!(predict_prob(&m, -12.0), 0.5);
        assert!(predict_prob(&m, -12.0 + 100.0 * 4.0) >= 0.999);
        let far = predict_prob(&m, 1e300);
        assert!(far < 1.0 && far > 0.999);
        let low = predict_prob(&m, -1e300);
        assert!(low > 0.0);
    }

    #[test]
    fn independent_labels_give_flat_model() {
        let mut data = Vec::new();
        for i in 0..200 {
            let u = (i as f64 * 0.37).sin() * 5.0;
            data.push((u, true));
            data.push((u, false));
        }
        let r = fit_logistic_report(&data).unwrap();
        assert!(r.converged);
        assert!(r.model.weight.abs() < 0.05);
        for u in [-5.0, 0.0, 5.0] {
            assert!((predict_prob(&r.model, u) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_data_stays_bounded() {
        let data: Vec<_> = (0..50)
            .map(|i| (i as f64, i >= 25))
            .collect();
        let r = fit_logistic_report(&data).unwrap();
        assert!(r.model.weight.is_finite() && r.model.weight > 0.0);
        for pair in r.loss_history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
        let probs: Vec<_> = (0..50).map(|i| predict_prob(&r.model, i as f64)).collect();
        assert!(probs.windows(2).all(|p| p[1] >= p[0]));
        assert!(probs[0] < 0.5 && probs[49] > 0.5);
    }

    #[test]
    fn model_json_field_names() {
        let m = LogisticModel {
            weight: 1.5,
            bias: -0.25,
            feature_mean: 10.0,
            feature_std: 2.0,
        };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"w":1.5,"b":-0.25,"mean":10.0,"std":2.0}"#);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        m.save(&p).unwrap();
        assert_eq!(LogisticModel::load(&p).unwrap(), m);
    }
}
