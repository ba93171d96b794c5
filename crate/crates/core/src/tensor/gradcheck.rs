use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Which coordinates a gradient check perturbs.
#[derive(Clone, Debug)]
pub enum Probe {
    /// Every coordinate of every input.
    All,
    /// `per_input` coordinates drawn uniformly from each input.
    Sample { per_input: usize, seed: u64 },
    /// Explicit `(input, flat index)` pairs.
    Coords(Vec<(usize, usize)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Finite-difference formula.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error O(h²).
    Central2,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, error O(h⁴).
    Central4,
}

/// Compares taped gradients of the scalar `f` against central differences.
///
/// `f` receives one leaf per entry of `point` (all requiring gradients) and
/// must return a scalar. The error per coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64, probe: Probe) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_stencil(f, point, step, probe, Stencil::Central2)
}

/// [`grad_check`] with a chosen difference formula.
pub fn grad_check_stencil<F>(f: F, point: &[Tensor], step: f64, probe: Probe, stencil: Stencil) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_sweep(f, point, &[step], probe, stencil, 0.0)
}

/// Tries each step in `steps` per coordinate and keeps the smallest error,
/// stopping early once it falls below `good_enough`.
///
/// For objectives with kinks (LeakyReLU) and large dynamic range no single
/// step resolves every coordinate: large steps cross kinks, small ones drown
/// in rounding. A wrong adjoint is off at every step.
pub fn grad_check_sweep<F>(
    mut f: F,
    point: &[Tensor],
    steps: &[f64],
    probe: Probe,
    stencil: Stencil,
    good_enough: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &[Var]) -> Result<Var>,
{
    if steps.is_empty() {
        return Err(Error::invalid("grad_check needs at least one step"));
    }
    let mut g = Graph::new();
    let leaves: Vec<Var> = point.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &leaves)?;
    if g.value(loss).len() != 1 {
        return Err(Error::invalid("grad_check needs a scalar function"));
    }
    g.backward(loss)?;
    let analytic: Vec<Tensor> =
        leaves.iter().map(|&v| g.grad(v).cloned().expect("leaf grads populated")).collect();
    drop(g);

    let coords: Vec<(usize, usize)> = match probe {
        Probe::All => point
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
            .collect(),
        Probe::Sample { per_input, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            point
                .iter()
                .enumerate()
                .flat_map(|(i, t)| {
                    (0..per_input.min(t.len())).map(|_| (i, rng.random_range(0..t.len()))).collect::<Vec<_>>()
                })
                .collect()
        }
        Probe::Coords(c) => c,
    };

    let mut eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &leaves)?;
        Ok(g.value(out).item())
    };

    let mut work = point.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, analytic: 0.0, numeric: 0.0, checked: 0 };
    for (i, j) in coords {
        if i >= work.len() || j >= work[i].len() {
            return Err(Error::invalid(format!("probe coordinate ({i}, {j}) out of range")));
        }
        let orig = work[i].data()[j];
        let a = analytic[i].data()[j];
        let (mut err, mut numeric) = (f64::INFINITY, f64::NAN);
        for &step in steps {
            let mut at = |offset: f64| -> Result<f64> {
                work[i].data_mut()[j] = orig + offset;
                let v = eval(&work);
                work[i].data_mut()[j] = orig;
                v
            };
            let n = match stencil {
                Stencil::Central2 => (at(step)? - at(-step)?) / (2.0 * step),
                Stencil::Central4 => {
                    let (p1, m1, p2, m2) = (at(step)?, at(-step)?, at(2.0 * step)?, at(-2.0 * step)?);
                    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step)
                }
            };
            let e = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
            if e < err || numeric.is_nan() {
                (err, numeric) = (e, n);
            }
            if err < good_enough {
                break;
            }
        }
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report = GradCheckReport { max_rel_error: err, worst: Some((i, j)), analytic: a, numeric, ..report };
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ops;
    use crate::tensor::Backward;

    #[test]
    fn sum_is_exact() {
        let x = Tensor::from_fn(&[5], |i| i as f64 * 0.3 - 0.5);
        let r = grad_check(|g, v| Ok(ops::sum(g, v[0])), &[x], 1e-5, Probe::All).unwrap();
        assert!(r.max_rel_error < 1e-10);
        assert_eq!(r.checked, 5);
    }

    /// Square with a deliberately halved adjoint.
    struct HalfSquare;

    impl Backward for HalfSquare {
        fn name(&self) -> &'static str {
            "half_square"
        }
        fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
            vec![Some(inputs[0].data().iter().zip(g).map(|(x, gv)| x * gv).collect())]
        }
    }

    #[test]
    fn wrong_adjoint_detected() {
        let x = Tensor::from_fn(&[4], |i| 1.0 + i as f64);
        let r = grad_check(
            |g, v| {
                let sq = g.value(v[0]).map(|t| t * t);
                let y = g.record(sq, &[v[0]], HalfSquare);
                Ok(ops::sum(g, y))
            },
            &[x],
            1e-5,
            Probe::All,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-2);
    }

    #[test]
    fn fourth_order_stencil_is_sharper() {
        let x = Tensor::new(vec![1], vec![0.7]).unwrap();
        let cube = |g: &mut Graph, v: &[Var]| {
            let sq = ops::mul(g, v[0], v[0])?;
            let c = ops::mul(g, sq, v[0])?;
            let q = ops::mul(g, c, v[0])?;
            let s = ops::add(g, c, q)?;
            Ok(ops::sum(g, s))
        };
        let two = grad_check_stencil(cube, &[x.clone()], 1e-2, Probe::All, Stencil::Central2).unwrap();
        let four = grad_check_stencil(cube, &[x], 1e-2, Probe::All, Stencil::Central4).unwrap();
        assert!(four.max_rel_error < 1e-3 * two.max_rel_error, "{two:?} {four:?}");
    }
}
