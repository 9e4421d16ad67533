//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, ParamStore, Tensor};

/// Denominator floor of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central difference formula used for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(L(θ+h) − L(θ−h)) / 2h`, error O(h²).
    #[default]
    ThreePoint,
    /// `(−L(θ+2h) + 8L(θ+h) − 8L(θ−h) + L(θ−2h)) / 12h`, error O(h⁴), twice the evaluations.
    FivePoint,
}

impl std::str::FromStr for Stencil {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three" | "3" => Ok(Stencil::ThreePoint),
            "five" | "5" => Ok(Stencil::FivePoint),
            _ => Err(Error::Argument(format!(
                "unknown stencil `{s}` (expected three or five)"
            ))),
        }
    }
}

/// Compares `analytic` (the gradient of `loss` w.r.t. parameter `name`)
/// against `(L(θ+h) − L(θ−h)) / 2h` and returns the largest relative error.
///
/// `entries` restricts the check to selected flat indices; `None` checks all.
pub fn finite_diff_check<F>(
    params: &ParamStore,
    name: &str,
    analytic: &Tensor,
    h: f64,
    entries: Option<&[usize]>,
    loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut loss = loss;
    finite_diff_check_terms(params, name, analytic, h, entries, Stencil::ThreePoint, |p| {
        Ok(vec![loss(p)?])
    })
}

/// [`finite_diff_check`] for a loss given as terms `L = Σ L_i`.
///
/// The difference is taken term by term, `Σ (L_i(θ+h) − L_i(θ−h)) / 2h`, so
/// rounding scales with the terms rather than with their sum.
pub fn finite_diff_check_terms<F>(
    params: &ParamStore,
    name: &str,
    analytic: &Tensor,
    h: f64,
    entries: Option<&[usize]>,
    stencil: Stencil,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let base = params.get(name)?.clone();
    if base.shape() != analytic.shape() {
        return Err(Error::shape("finite_diff_check", base.shape(), analytic.shape()));
    }
    let all: Vec<usize>;
    let entries = match entries {
        Some(e) => e,
        None => {
            all = (0..base.numel()).collect();
            &all
        }
    };

    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    for &i in entries {
        let mut eval = |delta: f64| -> Result<Vec<f64>> {
            let mut t = base.clone();
            t.data_mut()[i] += delta;
            probe.set(name, t)?;
            let v = loss(&probe)?;
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Evaluation(format!(
                    "loss is {bad} with `{name}`[{i}] perturbed by {delta}"
                )));
            }
            Ok(v)
        };
        let mut diff = |step: f64| -> Result<f64> {
            let plus = eval(step)?;
            let minus = eval(-step)?;
            if plus.len() != minus.len() {
                return Err(Error::Evaluation(format!(
                    "loss has {} terms at +{step} and {} at -{step} for `{name}`[{i}]",
                    plus.len(),
                    minus.len()
                )));
            }
            Ok(plus.iter().zip(&minus).map(|(p, m)| p - m).sum())
        };
        let numeric = match stencil {
            Stencil::ThreePoint => diff(h)? / (2.0 * h),
            Stencil::FivePoint => (8.0 * diff(h)? - diff(2.0 * h)?) / (12.0 * h),
        };
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of every leaf of a graph built by `build`.
///
/// `build` receives a fresh graph and the leaf handles (one per entry of
/// `leaves`, all trainable) and returns a node whose entries are the loss
/// terms. The loss is their sum and is differenced term by term.
pub fn check_graph<F>(leaves: &[Tensor], h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let run = |values: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let terms = build(&mut g, &ids)?;
        Ok((g, ids, terms))
    };
    let (mut g, ids, terms) = run(leaves)?;
    let loss = g.sum(terms);
    let grads = g.backward(loss)?;

    let mut store = ParamStore::new();
    for (k, t) in leaves.iter().enumerate() {
        store.insert(format!("leaf{k}"), t.clone(), true)?;
    }
    let mut worst: f64 = 0.0;
    for (k, id) in ids.iter().enumerate() {
        let analytic = grads.get(*id).ok_or_else(|| Error::Key(format!("leaf{k}")))?;
        let analytic = analytic.reshape(store.get(&format!("leaf{k}"))?.shape())?;
        let name = format!("leaf{k}");
        let err = finite_diff_check_terms(&store, &name, &analytic, h, None, Stencil::ThreePoint, |s| {
            let values: Vec<Tensor> = (0..leaves.len())
                .map(|j| s.get(&format!("leaf{j}")).cloned())
                .collect::<Result<_>>()?;
            let (g, _, terms) = run(&values)?;
            Ok(g.value(terms).data().to_vec())
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_tight() {
        // L = Σ c_i w_i²  →  ∂L/∂w_i = 2 c_i w_i
        let coef = [1.5, -0.25, 3.0];
        let mut store = ParamStore::new();
        store
            .insert("w", Tensor::row(vec![0.7, -1.1, 0.2]).unwrap(), true)
            .unwrap();
        let w = store.get("w").unwrap().data().to_vec();
        let analytic = Tensor::row(w.iter().zip(coef).map(|(w, c)| 2.0 * c * w).collect()).unwrap();
        let err = finite_diff_check(&store, "w", &analytic, 1e-5, None, |s| {
            Ok(s.get("w")?.data().iter().zip(coef).map(|(w, c)| c * w * w).sum())
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn split_terms_agree_with_total() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(vec![0.3, -0.8]).unwrap(), true).unwrap();
        let terms = |s: &ParamStore| {
            let w = s.get("w")?.data().to_vec();
            Ok(vec![(w[0] * w[1]).sin(), w[0].exp(), 1e3])
        };
        let (w0, w1) = (0.3f64, -0.8f64);
        let analytic = Tensor::row(vec![w1 * (w0 * w1).cos() + w0.exp(), w0 * (w0 * w1).cos()]).unwrap();
        let split = finite_diff_check_terms(&store, "w", &analytic, 1e-5, None, Stencil::ThreePoint, terms).unwrap();
        let whole = finite_diff_check(&store, "w", &analytic, 1e-5, None, |s| Ok(terms(s)?.iter().sum())).unwrap();
        assert!(split < 1e-9, "{split}");
        assert!(split < whole, "{split} vs {whole}");
    }

    #[test]
    fn five_point_is_exact_on_quartic() {
        // L⁽⁵⁾ = 0, so only rounding remains even at a coarse step
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.9).unwrap(), true).unwrap();
        let analytic = Tensor::scalar(4.0 * 0.9f64.powi(3)).unwrap();
        let quartic = |s: &ParamStore| Ok(vec![s.get("w")?.item()?.powi(4)]);
        let five = finite_diff_check_terms(&store, "w", &analytic, 1e-2, None, Stencil::FivePoint, quartic).unwrap();
        let three = finite_diff_check_terms(&store, "w", &analytic, 1e-2, None, Stencil::ThreePoint, quartic).unwrap();
        assert!(five < 1e-12, "{five}");
        assert!(three > 1e-5, "{three}");
    }

    #[test]
    fn zero_gradient_uses_floor() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(5.0).unwrap(), true).unwrap();
        // saturated: loss independent of w
        let err = finite_diff_check(&store, "w", &Tensor::scalar(0.0).unwrap(), 1e-5, None, |_| Ok(1.0)).unwrap();
        assert_eq!(err, 0.0);
        assert!((relative_error(0.0, 1e-9) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0).unwrap(), true).unwrap();
        let g = Tensor::scalar(0.0).unwrap();
        assert!(finite_diff_check(&store, "w", &g, 0.0, None, |_| Ok(0.0)).is_err());
        let err = finite_diff_check(&store, "w", &g, 1e-4, None, |_| Ok(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Evaluation(_)));
    }

    #[test]
    fn check_graph_on_softmax_chain() {
        let x = Tensor::from_rows(&[vec![0.2, -0.4, 1.0], vec![0.5, 0.1, -0.3]]).unwrap();
        let w = Tensor::from_rows(&[vec![0.3, -0.7], vec![1.1, 0.4], vec![-0.2, 0.9]]).unwrap();
        let err = check_graph(&[x, w], 1e-6, |g, ids| {
            let h = g.matmul(ids[0], ids[1])?;
            let s = g.softmax(h, None)?;
            Ok(g.tanh(s))
        })
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
