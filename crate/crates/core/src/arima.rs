//! Classical ARMA baseline fit by conditional sum of squares.
//!
//! The model is
//!
//! ```text
//! y_t = c + Σ_{i=1..p} φ_i · y_{t−i}  −  Σ_{j=1..q} θ_j · ε_{t−j}  +  ε_t
//! ```
//!
//! with the moving-average sum *subtracted* — see [`MaSign`]. Differencing
//! (the "I" of ARIMA) is the preprocess module's job; this module expects an
//! already-stationary series. Fitting minimises the conditional sum of
//! squared one-step residuals (presample residuals pinned at zero) by
//! running Adam over an autodiff graph of the residual recursion, on an
//! internally standardized copy of the series so the optimizer behaves the
//! same at any price scale.

use std::path::Path;

use crate::autodiff::{AdamConfig, AdamState, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::numeric::{mean, population_std};
use crate::preprocess::{fmt_float, join_floats, KvDoc};

/// Which sign the moving-average sum carries in the model equation.
///
/// Subtracting the MA sum is this crate's native convention; most textbooks
/// add it instead. The two are equivalent up to negating every θ — see
/// `negating_thetas_flips_the_convention_exactly` in the tests — so the
/// flag is recorded on every model to keep serialized coefficients
/// unambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaSign {
    /// `y_t = c + Σ φ y − Σ θ ε + ε_t` (this crate's native convention).
    Minus,
    /// `y_t = c + Σ φ y + Σ θ ε + ε_t` (the common textbook convention).
    Plus,
}

impl MaSign {
    fn name(self) -> &'static str {
        match self {
            MaSign::Minus => "minus",
            MaSign::Plus => "plus",
        }
    }

    fn parse(text: &str) -> Option<MaSign> {
        match text {
            "minus" => Some(MaSign::Minus),
            "plus" => Some(MaSign::Plus),
            _ => None,
        }
    }
}

/// A fitted (or hand-built) ARMA(p, q) model.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaModel {
    /// Constant term.
    pub c: f64,
    /// AR coefficients φ_1..φ_p (lag order).
    pub phi: Vec<f64>,
    /// MA coefficients θ_1..θ_q (lag order), interpreted under `sign`.
    pub theta: Vec<f64>,
    /// Sign convention of the MA sum.
    pub sign: MaSign,
    /// One-step in-sample residuals from the fit, same length as the fitted
    /// series; the first p entries are presample zeros.
    pub residuals: Vec<f64>,
}

/// Diagnostics from [`fit_with_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Optimizer iterations actually run.
    pub iterations: usize,
    /// Whether the loss-change tolerance was hit before the iteration cap.
    pub converged: bool,
    /// Final conditional sum-of-squares loss on the raw series scale.
    pub loss: f64,
    /// Non-fatal complaints, e.g. a series shorter than recommended.
    pub warnings: Vec<String>,
}

const MAX_ITERS: usize = 10_000;
const LOSS_TOL: f64 = 1e-10;
const FIT_LR: f64 = 0.05;

impl ArimaModel {
    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    /// One-step-ahead prediction from trailing history, with the unknown
    /// current shock ε_t taken as zero. `y_history` and `eps_history` are
    /// ordered oldest → newest; only the last p / q entries are read.
    pub fn predict_one(&self, y_history: &[f64], eps_history: &[f64]) -> Result<f64> {
        if y_history.len() < self.p() {
            return Err(Error::insufficient(format!(
                "AR order {} needs {} trailing observations, got {}",
                self.p(),
                self.p(),
                y_history.len()
            )));
        }
        if eps_history.len() < self.q() {
            return Err(Error::insufficient(format!(
                "MA order {} needs {} trailing residuals, got {}",
                self.q(),
                self.q(),
                eps_history.len()
            )));
        }
        let mut acc = self.c;
        for (i, phi) in self.phi.iter().enumerate() {
            acc += phi * y_history[y_history.len() - 1 - i];
        }
        for (j, theta) in self.theta.iter().enumerate() {
            let eps = eps_history[eps_history.len() - 1 - j];
            match self.sign {
                MaSign::Minus => acc -= theta * eps,
                MaSign::Plus => acc += theta * eps,
            }
        }
        Ok(acc)
    }

    /// One-step in-sample residuals of this model over `series`, presample
    /// residuals (the first p, and any ε before the series start) zero.
    pub fn compute_residuals(&self, series: &[f64]) -> Result<Vec<f64>> {
        let p = self.p();
        if series.len() <= p {
            return Err(Error::insufficient(format!(
                "computing residuals of an ARMA({p}, {}) model needs more than \
                 {p} observations, got {}",
                self.q(),
                series.len()
            )));
        }
        let mut eps = vec![0.0; series.len()];
        for t in p..series.len() {
            let mut acc = self.c;
            for (i, phi) in self.phi.iter().enumerate() {
                acc += phi * series[t - 1 - i];
            }
            for (j, theta) in self.theta.iter().enumerate() {
                let e = if t >= j + 1 { eps[t - 1 - j] } else { 0.0 };
                match self.sign {
                    MaSign::Minus => acc -= theta * e,
                    MaSign::Plus => acc += theta * e,
                }
            }
            eps[t] = series[t] - acc;
        }
        Ok(eps)
    }

    /// Mean squared one-step residual over the conditioned range (t ≥ p) —
    /// the quantity [`fit`] minimises, evaluated on the raw series scale.
    pub fn css_loss(&self, series: &[f64]) -> Result<f64> {
        let eps = self.compute_residuals(series)?;
        let tail = &eps[self.p()..];
        Ok(tail.iter().map(|e| e * e).sum::<f64>() / tail.len() as f64)
    }

    /// Recursive multi-step forecast past the end of `series`: every future
    /// shock is zero, past residuals come from the model recursion.
    pub fn forecast(&self, series: &[f64], horizon: usize) -> Result<Vec<f64>> {
        if horizon == 0 {
            return Err(Error::config("forecast horizon must be at least 1"));
        }
        let mut y = series.to_vec();
        let mut eps = if self.q() > 0 || self.p() > 0 {
            self.compute_residuals(series)?
        } else {
            vec![0.0; series.len()]
        };
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let yhat = self.predict_one(&y, &eps)?;
            out.push(yhat);
            y.push(yhat);
            eps.push(0.0);
        }
        Ok(out)
    }

    /// Serializes the model to line-oriented `key=value` text; floats carry
    /// 17 significant digits so parsing reproduces them bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("format=fxgan-arima\n");
        out.push_str("version=1\n");
        out.push_str(&format!("p={}\n", self.p()));
        out.push_str(&format!("q={}\n", self.q()));
        out.push_str(&format!("ma_sign={}\n", self.sign.name()));
        out.push_str(&format!("c={}\n", fmt_float(self.c)));
        if !self.phi.is_empty() {
            out.push_str(&format!("phi={}\n", join_floats(&self.phi)));
        }
        if !self.theta.is_empty() {
            out.push_str(&format!("theta={}\n", join_floats(&self.theta)));
        }
        out.push_str(&format!("residuals={}\n", join_floats(&self.residuals)));
        out
    }

    /// Parses the document produced by [`ArimaModel::to_text`].
    pub fn from_text(text: &str) -> Result<ArimaModel> {
        let mut doc = KvDoc::parse(text, "arima-model")?;
        doc.expect("format", "fxgan-arima")?;
        doc.expect("version", "1")?;
        let p: usize = doc.take_parsed("p")?;
        let q: usize = doc.take_parsed("q")?;
        let sign_raw = doc.take("ma_sign")?;
        let sign = MaSign::parse(&sign_raw)
            .ok_or_else(|| doc.error(format!("unknown ma_sign `{sign_raw}`")))?;
        let c: f64 = doc.take_parsed("c")?;
        let phi = if p > 0 { doc.take_floats("phi")? } else { Vec::new() };
        let theta = if q > 0 { doc.take_floats("theta")? } else { Vec::new() };
        let residuals = doc.take_floats("residuals")?;
        if phi.len() != p || theta.len() != q {
            return Err(doc.error(format!(
                "coefficient counts ({}, {}) disagree with orders ({p}, {q})",
                phi.len(),
                theta.len()
            )));
        }
        doc.finish()?;
        Ok(ArimaModel {
            c,
            phi,
            theta,
            sign,
            residuals,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ArimaModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ArimaModel::from_text(&text)
    }
}

/// Builds the conditional sum-of-squares loss over the standardized series.
/// Pure AR models get a vectorized graph; an MA part forces the sequential
/// residual recursion.
fn build_css_loss(
    g: &mut Graph,
    x: &[f64],
    c: NodeId,
    phi: Option<NodeId>,
    theta: Option<NodeId>,
    p: usize,
    q: usize,
) -> Result<NodeId> {
    let n = x.len();
    let m = n - p;
    let eps = if q == 0 {
        let y_main = g.constant(vec![m], x[p..].to_vec())?;
        let mut pred = c;
        if let Some(phi) = phi {
            for i in 1..=p {
                let phi_i = g.slice(phi, i - 1, 1)?;
                let lag = g.constant(vec![m], x[p - i..n - i].to_vec())?;
                let term = g.mul(phi_i, lag)?;
                pred = g.add(pred, term)?;
            }
        }
        let neg_pred = g.neg(pred)?;
        g.add(y_main, neg_pred)?
    } else {
        let mut eps_nodes = Vec::with_capacity(m);
        for t in p..n {
            let mut pred = c;
            if let Some(phi) = phi {
                for i in 1..=p {
                    let phi_i = g.slice(phi, i - 1, 1)?;
                    let lag = g.constant(vec![1], vec![x[t - i]])?;
                    let term = g.mul(phi_i, lag)?;
                    pred = g.add(pred, term)?;
                }
            }
            if let Some(theta) = theta {
                for j in 1..=q {
                    // Residuals before the conditioning start are presample
                    // zeros and contribute nothing.
                    if t < p + j {
                        continue;
                    }
                    let theta_j = g.slice(theta, j - 1, 1)?;
                    let term = g.mul(theta_j, eps_nodes[t - j - p])?;
                    let neg = g.neg(term)?;
                    pred = g.add(pred, neg)?;
                }
            }
            let y_t = g.constant(vec![1], vec![x[t]])?;
            let neg_pred = g.neg(pred)?;
            let eps_t = g.add(y_t, neg_pred)?;
            eps_nodes.push(eps_t);
        }
        g.concat(&eps_nodes)?
    };
    let sq = g.mul(eps, eps)?;
    g.mean(sq)
}

/// Fits an ARMA(p, q) model to `series` by conditional sum of squares,
/// returning optimizer diagnostics alongside the model.
///
/// The optimizer runs on a standardized copy of the series (coefficients are
/// mapped back afterwards) and stops when the loss changes by less than
/// 1e-10 between iterations or after 10,000 iterations. The fitted model
/// uses the native minus-MA sign convention.
pub fn fit_with_report(series: &[f64], p: usize, q: usize) -> Result<(ArimaModel, FitReport)> {
    let n = series.len();
    if n < p + 2 || n < q + 2 {
        return Err(Error::insufficient(format!(
            "fitting ARMA({p}, {q}) needs at least {} observations, got {n}",
            p.max(q) + 2
        )));
    }
    for (i, v) in series.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::domain(format!(
                "series value at index {i} is not finite"
            )));
        }
    }
    let mut warnings = Vec::new();
    let recommended = 10 * (p + q).max(1);
    if n < recommended {
        warnings.push(format!(
            "series has {n} observations; at least {recommended} are \
             recommended for an ARMA({p}, {q}) fit"
        ));
    }

    let ybar = mean(series);
    let sd = population_std(series);
    let scale = if sd > 1e-12 { sd } else { 1.0 };
    let x: Vec<f64> = series.iter().map(|v| (v - ybar) / scale).collect();

    let mut c_t = Tensor::new(vec![1], vec![0.0])?.with_requires_grad();
    let mut phi_t = (p > 0).then(|| {
        Tensor::new(vec![p], vec![0.0; p])
            .expect("shape matches")
            .with_requires_grad()
    });
    let mut theta_t = (q > 0).then(|| {
        Tensor::new(vec![q], vec![0.0; q])
            .expect("shape matches")
            .with_requires_grad()
    });
    let mut sizes = vec![1];
    sizes.extend(phi_t.iter().map(|_| p));
    sizes.extend(theta_t.iter().map(|_| q));
    let mut adam = AdamState::new(
        AdamConfig {
            lr: FIT_LR,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        },
        &sizes,
    )?;

    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    for iter in 0..MAX_ITERS {
        let mut g = Graph::new();
        let c_id = g.param(&c_t)?;
        let phi_id = phi_t.as_ref().map(|t| g.param(t)).transpose()?;
        let theta_id = theta_t.as_ref().map(|t| g.param(t)).transpose()?;
        let loss = build_css_loss(&mut g, &x, c_id, phi_id, theta_id, p, q)?;
        let val = g.value(loss)[0];
        if !val.is_finite() {
            return Err(Error::FitDiverged {
                iteration: iter,
                message: format!("conditional sum of squares became {val}"),
            });
        }
        iterations = iter + 1;
        if (prev - val).abs() < LOSS_TOL {
            converged = true;
            break;
        }
        prev = val;
        g.backward(loss)?;
        let mut pairs = vec![(c_id, &mut c_t)];
        if let (Some(id), Some(t)) = (phi_id, phi_t.as_mut()) {
            pairs.push((id, t));
        }
        if let (Some(id), Some(t)) = (theta_id, theta_t.as_mut()) {
            pairs.push((id, t));
        }
        g.write_grads(&mut pairs)?;
        let mut tensors: Vec<&mut Tensor> = vec![&mut c_t];
        tensors.extend(phi_t.as_mut());
        tensors.extend(theta_t.as_mut());
        adam.step(&mut tensors)?;
    }

    let phi = phi_t.map(|t| t.values().to_vec()).unwrap_or_default();
    let theta = theta_t.map(|t| t.values().to_vec()).unwrap_or_default();
    // Undo the standardization y = ȳ + σ·x: slopes carry over unchanged,
    // the constant picks up the de-centering term.
    let c = scale * c_t.values()[0] + ybar * (1.0 - phi.iter().sum::<f64>());
    let mut model = ArimaModel {
        c,
        phi,
        theta,
        sign: MaSign::Minus,
        residuals: Vec::new(),
    };
    model.residuals = model.compute_residuals(series)?;
    let loss = model.css_loss(series)?;
    Ok((
        model,
        FitReport {
            iterations,
            converged,
            loss,
            warnings,
        },
    ))
}

/// [`fit_with_report`] without the diagnostics.
pub fn fit(series: &[f64], p: usize, q: usize) -> Result<ArimaModel> {
    Ok(fit_with_report(series, p, q)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1(c: f64, phi: f64) -> ArimaModel {
        ArimaModel {
            c,
            phi: vec![phi],
            theta: Vec::new(),
            sign: MaSign::Minus,
            residuals: Vec::new(),
        }
    }

    /// y_t = c + φ y_{t−1} + ε_t with standard-normal shocks.
    fn simulate_ar1(c: f64, phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n);
        let mut prev = c / (1.0 - phi);
        for _ in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            let v = c + phi * prev + e;
            y.push(v);
            prev = v;
        }
        y
    }

    #[test]
    fn predict_one_matches_hand_arithmetic() {
        // AR(1): 0.5 · 2 = 1.
        assert_eq!(ar1(0.0, 0.5).predict_one(&[9.0, 2.0], &[]).unwrap(), 1.0);
        // MA(1) under the minus convention: −0.3 · 1 = −0.3.
        let ma = ArimaModel {
            c: 0.0,
            phi: Vec::new(),
            theta: vec![0.3],
            sign: MaSign::Minus,
            residuals: Vec::new(),
        };
        assert_eq!(ma.predict_one(&[], &[1.0]).unwrap(), -0.3);
        // Constant-only model ignores history entirely.
        let constant = ArimaModel {
            c: 1.0,
            phi: Vec::new(),
            theta: Vec::new(),
            sign: MaSign::Minus,
            residuals: Vec::new(),
        };
        assert_eq!(constant.predict_one(&[5.0, 7.0], &[2.0]).unwrap(), 1.0);
        // Short histories are refused.
        assert!(matches!(
            ar1(0.0, 0.5).predict_one(&[], &[]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            ma.predict_one(&[1.0], &[]),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn negating_thetas_flips_the_convention_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            };
            let minus = ArimaModel {
                c: draw(1)[0],
                phi: draw(2),
                theta: draw(2),
                sign: MaSign::Minus,
                residuals: Vec::new(),
            };
            let plus = ArimaModel {
                theta: minus.theta.iter().map(|t| -t).collect(),
                sign: MaSign::Plus,
                residuals: Vec::new(),
                ..minus.clone()
            };
            let y = draw(6);
            let e = draw(6);
            assert_eq!(
                minus.predict_one(&y, &e).unwrap(),
                plus.predict_one(&y, &e).unwrap()
            );
            assert_eq!(
                minus.compute_residuals(&y).unwrap(),
                plus.compute_residuals(&y).unwrap()
            );
        }
    }

    #[test]
    fn forecast_decays_geometrically() {
        let model = ar1(0.0, 0.5);
        assert_eq!(
            model.forecast(&[1.0, 2.0], 3).unwrap(),
            vec![1.0, 0.5, 0.25]
        );
        let constant = ArimaModel {
            c: 5.0,
            phi: Vec::new(),
            theta: Vec::new(),
            sign: MaSign::Minus,
            residuals: Vec::new(),
        };
        assert_eq!(constant.forecast(&[1.0], 4).unwrap(), vec![5.0; 4]);
        assert!(matches!(
            model.forecast(&[1.0, 2.0], 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn fitted_ar_forecasts_approach_the_long_run_mean() {
        let series = simulate_ar1(0.6, 0.7, 500, 1);
        let model = fit(&series, 1, 0).unwrap();
        let limit = model.c / (1.0 - model.phi[0]);
        let path = model.forecast(&series, 200).unwrap();
        // Deviations from the limit shrink by |φ| each step.
        let d0 = (path[0] - limit).abs();
        let d50 = (path[50] - limit).abs();
        let d199 = (path[199] - limit).abs();
        assert!(d50 < d0 && d199 < 1e-6 * d0.max(1.0), "{d0} {d50} {d199}");
    }

    #[test]
    fn fit_recovers_an_ar1_coefficient() {
        let series = simulate_ar1(0.0, 0.7, 500, 5);
        let (model, report) = fit_with_report(&series, 1, 0).unwrap();
        assert!(
            (0.6..=0.8).contains(&model.phi[0]),
            "phi {} after {} iterations",
            model.phi[0],
            report.iterations
        );
        assert!(report.warnings.is_empty());
        // The in-sample optimum can only beat the generating parameters.
        let truth = ar1(0.0, 0.7);
        assert!(model.css_loss(&series).unwrap() <= truth.css_loss(&series).unwrap() + 1e-6);
    }

    #[test]
    fn fit_on_white_noise_finds_no_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let series: Vec<f64> = (0..500).map(|_| rng.sample(StandardNormal)).collect();
        let model = fit(&series, 1, 0).unwrap();
        assert!(model.phi[0].abs() < 0.15, "phi {}", model.phi[0]);
    }

    #[test]
    fn fit_handles_constant_and_mean_only_cases() {
        let series = vec![110.25; 40];
        let (model, report) = fit_with_report(&series, 1, 1).unwrap();
        assert!((model.c - 110.25).abs() < 1e-6, "c {}", model.c);
        assert!(model.phi[0].abs() < 1e-6 && model.theta[0].abs() < 1e-6);
        assert!(report.converged);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy: Vec<f64> = (0..200)
            .map(|_| 3.0 + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mean_only = fit(&noisy, 0, 0).unwrap();
        let ybar = mean(&noisy);
        assert!((mean_only.c - ybar).abs() < 1e-4, "{} vs {ybar}", mean_only.c);
    }

    #[test]
    fn fit_recovers_an_ma1_coefficient_roughly() {
        // Simulate y_t = ε_t − 0.6 ε_{t−1} (minus convention).
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut eps_prev = 0.0;
        let mut series = Vec::with_capacity(300);
        for _ in 0..300 {
            let e: f64 = rng.sample(StandardNormal);
            series.push(e - 0.6 * eps_prev);
            eps_prev = e;
        }
        let model = fit(&series, 0, 1).unwrap();
        assert!(
            (0.4..=0.8).contains(&model.theta[0]),
            "theta {}",
            model.theta[0]
        );
    }

    #[test]
    fn stored_residuals_match_a_recomputation() {
        let series = simulate_ar1(0.2, 0.5, 120, 9);
        let model = fit(&series, 1, 1).unwrap();
        assert_eq!(model.residuals.len(), series.len());
        let again = model.compute_residuals(&series).unwrap();
        for (a, b) in model.residuals.iter().zip(&again) {
            assert!((a - b).abs() < 1e-9);
        }
        // Presample residuals are zero by construction.
        assert_eq!(model.residuals[0], 0.0);
    }

    #[test]
    fn short_series_warn_and_tiny_series_fail() {
        let (_, report) = fit_with_report(&[1.0, 2.0, 1.5, 2.5, 1.8], 1, 0).unwrap();
        assert_eq!(report.warnings.len(), 1);
        assert!(matches!(
            fit(&[1.0, 2.0], 1, 0),
            Err(Error::InsufficientData { .. })
        ));
        assert!(matches!(
            fit(&[1.0, f64::NAN, 2.0, 3.0], 1, 0),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let series = simulate_ar1(0.3, 0.6, 80, 4);
        let model = fit(&series, 2, 1).unwrap();
        let text = model.to_text();
        let back = ArimaModel::from_text(&text).unwrap();
        assert_eq!(model, back);
        // Unknown keys and wrong formats are rejected.
        assert!(ArimaModel::from_text(&format!("{text}extra=1\n")).is_err());
        assert!(ArimaModel::from_text("format=wrong\n").is_err());
        // A mean-only model round-trips without phi/theta keys.
        let constant = fit(&vec![5.0; 30], 0, 0).unwrap();
        let back = ArimaModel::from_text(&constant.to_text()).unwrap();
        assert_eq!(constant, back);
    }
}
