//! Central finite-difference checks of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterStore, Result, Tensor, Var};

/// Relative error used throughout: `|ad - fd| / max(1, |fd|)`.
pub fn rel_err(ad: f64, fd: f64) -> f64 {
    (ad - fd).abs() / fd.abs().max(1.0)
}

/// Max relative error between the autodiff gradient of `f` at `point` and
/// central differences with step `eps`.
pub fn grad_check<Fn_>(f: Fn_, point: &Tensor<f64>, eps: f64) -> Result<f64>
where
    Fn_: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(p.clone())?;
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    };
    let mut g = Graph::new();
    let x = g.input(point.clone())?;
    let y = f(&mut g, x)?;
    let ad = g.backward(y)?.wrt(&g, x);
    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max(rel_err(ad.data()[i], fd));
    }
    Ok(worst)
}

/// Outcome of [`grad_check_params`].
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub coords_checked: usize,
}

/// Gradient check of a scalar loss over the trainable parameters of
/// `store`. At most `per_param` evenly spaced coordinates of each tensor
/// are probed.
pub fn grad_check_params<Fn_>(f: Fn_, store: &ParameterStore<f64>, eps: f64, per_param: usize) -> Result<ParamCheck>
where
    Fn_: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    let grads = g.backward(loss)?.into_named();
    let mut probe = store.clone();
    let mut report = ParamCheck {
        max_rel_err: 0.0,
        worst_param: String::new(),
        coords_checked: 0,
    };
    let names: Vec<String> = store
        .names()
        .filter(|n| store.is_trainable(n))
        .map(str::to_string)
        .collect();
    for name in names {
        let numel = store.get(&name).unwrap().numel();
        let stride = numel.div_ceil(per_param.max(1)).max(1);
        let ad = grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(store.get(&name).unwrap().shape()));
        for i in (0..numel).step_by(stride) {
            let base = store.get(&name).unwrap().clone();
            let mut bumped = base.clone();
            bumped.data_mut()[i] += eps;
            probe.set(name.clone(), bumped.clone());
            let up = eval_loss(&f, &probe)?;
            bumped.data_mut()[i] = base.data()[i] - eps;
            probe.set(name.clone(), bumped);
            let down = eval_loss(&f, &probe)?;
            probe.set(name.clone(), base);
            let fd = (up - down) / (2.0 * eps);
            let err = rel_err(ad.data()[i], fd);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

fn eval_loss<Fn_>(f: &Fn_, store: &ParameterStore<f64>) -> Result<f64>
where
    Fn_: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = f(&mut g, store)?;
    Ok(g.value(loss).item())
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduce an op output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct amount to the loss.
pub fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, g.shape(y), -1.0, 1.0);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

pub type OpFn = fn(&mut Graph<f64>, Var, &Tensor<f64>) -> Result<Var>;

/// Differentiable ops with their probe shapes: (name, input shape, input range, op). The second tensor handed to the op
/// is a fixed random companion of the same shape (or as documented).
pub fn catalogue() -> Vec<(&'static str, Vec<usize>, (f64, f64), OpFn)> {
    fn companion(g: &mut Graph<f64>, t: &Tensor<f64>) -> Result<Var> {
        g.constant(t.clone())
    }
    vec![
        ("add", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            g.add(x, c)
        }),
        ("sub", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            g.sub(c, x)
        }),
        ("mul", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            g.mul(x, c)
        }),
        ("div", vec![3, 4], (0.5, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            let a = g.div(c, x)?;
            let b = g.div(x, c)?;
            g.add(a, b)
        }),
        ("scale", vec![5], (-2.0, 2.0), |g, x, _| g.scale(x, -1.7)),
        ("add_scalar", vec![5], (-2.0, 2.0), |g, x, _| g.add_scalar(x, 0.3)),
        ("add_bcast", vec![3, 4], (-2.0, 2.0), |g, x, _| {
            let b = g.slice(x, 0, 0, 1)?;
            let b = g.reshape(b, &[4])?;
            g.add_bcast(x, b)
        }),
        ("mul_bcast", vec![3, 4], (-2.0, 2.0), |g, x, _| {
            let b = g.slice(x, 0, 1, 2)?;
            let b = g.reshape(b, &[4])?;
            g.mul_bcast(x, b)
        }),
        ("exp", vec![6], (-2.0, 2.0), |g, x, _| g.exp(x)),
        ("log", vec![6], (0.5, 3.0), |g, x, _| g.log(x)),
        ("sqrt", vec![6], (0.5, 3.0), |g, x, _| g.sqrt(x)),
        ("square", vec![6], (-2.0, 2.0), |g, x, _| g.square(x)),
        ("tanh", vec![6], (-2.0, 2.0), |g, x, _| g.tanh(x)),
        ("gelu", vec![6], (-3.0, 3.0), |g, x, _| g.gelu(x)),
        ("sum", vec![2, 3], (-2.0, 2.0), |g, x, _| {
            let s = g.sum(x)?;
            g.square(s)
        }),
        ("mean", vec![2, 3], (-2.0, 2.0), |g, x, _| {
            let s = g.mean(x)?;
            g.square(s)
        }),
        ("sum_last", vec![2, 3, 4], (-2.0, 2.0), |g, x, _| g.sum_last(x)),
        ("mean_last", vec![2, 3, 4], (-2.0, 2.0), |g, x, _| g.mean_last(x)),
        ("expand_last", vec![2, 3], (-2.0, 2.0), |g, x, _| g.expand_last(x, 3)),
        ("reshape", vec![2, 6], (-2.0, 2.0), |g, x, _| g.reshape(x, &[3, 4])),
        ("transpose", vec![3, 5], (-2.0, 2.0), |g, x, _| g.transpose(x)),
        ("slice", vec![3, 4, 2], (-2.0, 2.0), |g, x, _| g.slice(x, 1, 1, 3)),
        ("concat", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            let y = g.concat(&[x, c, x], 1)?;
            g.concat(&[y, y], 0)
        }),
        ("matmul", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let xt = g.transpose(x)?;
            let c = companion(g, c)?;
            let y = g.matmul(c, xt)?;
            g.matmul(y, x)
        }),
        ("softmax", vec![3, 5], (-3.0, 3.0), |g, x, _| g.softmax(x)),
        ("log_softmax", vec![3, 5], (-3.0, 3.0), |g, x, _| g.log_softmax(x)),
        ("layer_norm", vec![3, 8], (-3.0, 3.0), |g, x, _| g.layer_norm(x)),
        ("mse", vec![3, 4], (-2.0, 2.0), |g, x, c| {
            let c = companion(g, c)?;
            g.mse(x, c)
        }),
        ("smooth_l1", vec![4, 4], (-3.0, 3.0), |g, x, c| {
            let c = companion(g, c)?;
            g.smooth_l1(x, c, 1.0)
        }),
        ("embedding", vec![5, 3], (-2.0, 2.0), |g, x, _| g.embedding(x, &[4, 0, 4, 2])),
        ("attention", vec![2, 3, 4], (-2.0, 2.0), |g, x, c| {
            // self attention on x, cross attention with keys from the companion
            let flat = g.reshape(x, &[6, 4])?;
            let c = companion(g, c)?;
            let c = g.reshape(c, &[6, 4])?;
            let a = g.attention(flat, flat, flat, 2, 2)?;
            let b = g.attention(flat, c, flat, 2, 1)?;
            g.add(a, b)
        }),
        ("unfold1d", vec![2, 6, 3], (-2.0, 2.0), |g, x, _| g.unfold1d(x, 4, 2, 1)),
        ("upsample1d", vec![2, 3, 2], (-2.0, 2.0), |g, x, _| g.upsample1d(x, 2)),
    ]
}

/// Worst relative error per catalogued op over `trials` random points.
pub fn check_catalogue(trials: u64, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shape, (lo, hi), op) in catalogue() {
        let mut worst = 0.0f64;
        for trial in 0..trials {
            let x = rand_tensor(&mut rng, &shape, lo, hi);
            let c = rand_tensor(&mut rng, &shape, lo, hi);
            let err = grad_check(
                |g, v| {
                    let y = op(g, v, &c)?;
                    weighted_sum(g, y, 1000 + trial)
                },
                &x,
                1e-5,
            )?;
            worst = worst.max(err);
        }
        out.push((name, worst));
    }
    Ok(out)
}
