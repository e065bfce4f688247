use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

use super::{Graph, NdError, Result, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Checks at most this many coordinates per input (chosen at random); all when `None`.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
    /// When set, a coordinate whose central differences at `step` and `step / 2`
    /// disagree by more than this relative amount is treated as sitting on a kink
    /// (e.g. a leaky-ReLU input within `step` of zero) and left out of the error.
    pub smoothness_tol: Option<f64>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { step: 1e-5, max_coords_per_input: None, seed: 0, smoothness_tol: None }
    }
}

fn eval<T, F>(f: &F, inputs: &[Tensor<T>]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    if !g.value(out).is_scalar() {
        return Err(NdError::NonScalarLoss(g.shape(out).to_vec()));
    }
    Ok(g.value(out).item())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error over the coordinates that were compared.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped by the smoothness screen.
    pub non_smooth: usize,
}

/// Largest relative error `|a - n| / max(1e-8, |a| + |n|)` between the analytic
/// gradient of the scalar function `f` and central finite differences.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], cfg: &GradCheckConfig) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, inputs, cfg)?.max_rel_error)
}

/// [`grad_check`] with coordinate counts, honouring [`GradCheckConfig::smoothness_tol`].
pub fn grad_check_report<T, F>(f: F, inputs: &[Tensor<T>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| g.grad(*v).map(<[T]>::to_vec).unwrap_or_else(|| vec![T::zero(); t.numel()]))
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = T::lit(cfg.step);
    let mut report = GradCheckReport::default();
    let mut probe: Vec<Tensor<T>> = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = match cfg.max_coords_per_input {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = input.data()[i];
            let mut central = |step: T| -> Result<f64> {
                probe[k].data_mut()[i] = orig + step;
                let plus = eval(&f, &probe)?;
                probe[k].data_mut()[i] = orig - step;
                let minus = eval(&f, &probe)?;
                probe[k].data_mut()[i] = orig;
                Ok(((plus - minus) / (step + step)).to_f64_lossy())
            };
            let numeric = central(h)?;
            if let Some(tol) = cfg.smoothness_tol {
                let half = central(h / T::lit(2.0))?;
                if rel(numeric, half) > tol {
                    report.non_smooth += 1;
                    continue;
                }
            }
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(rel(analytic[k][i].to_f64_lossy(), numeric));
        }
    }
    Ok(report)
}
