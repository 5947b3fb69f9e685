use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bce_with_logit, sigmoid, uniform};

/// Fully connected network with a scalar logit output. Parameters live in
/// one flat vector: for each layer, the `out × in` weights row-major, then
/// the biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-sample buffers: layer activations and dropout masks.
#[derive(Clone, Debug)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl Mlp {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new(input: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut net = Mlp::zeros(input, hidden);
        for l in 0..net.layers() {
            let (w, b, fan_in, out) = net.layout(l);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[w..b + out] {
                *p = uniform(rng, bound);
            }
        }
        net
    }

    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Mlp {
            sizes,
            params: vec![0.0; n],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(weight offset, bias offset, inputs, outputs)` of layer `l`.
    fn layout(&self, l: usize) -> (usize, usize, usize, usize) {
        let w: usize = self.sizes[..=l]
            .windows(2)
            .map(|s| s[0] * s[1] + s[1])
            .sum();
        let (inp, out) = (self.sizes[l], self.sizes[l + 1]);
        (w, w + inp * out, inp, out)
    }

    pub fn scratch(&self) -> Scratch {
        let width = *self.sizes.iter().max().unwrap();
        Scratch {
            acts: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            masks: self.sizes[1..self.sizes.len() - 1]
                .iter()
                .map(|&n| vec![1.0; n])
                .collect(),
            delta: Vec::with_capacity(width),
            next: Vec::with_capacity(width),
        }
    }

    /// Draws inverted-dropout masks: each unit is kept with probability
    /// `1 - p` and scaled by `1 / (1 - p)`.
    pub fn sample_masks(&self, dropout: &[f64], rng: &mut impl Rng, scratch: &mut Scratch) {
        for (mask, &p) in scratch.masks.iter_mut().zip(dropout) {
            let keep = 1.0 / (1.0 - p);
            for m in mask.iter_mut() {
                *m = if rng.random::<f64>() < p { 0.0 } else { keep };
            }
        }
    }

    fn forward_into(&self, x: &[f64], masks: Option<&[Vec<f64>]>, acts: &mut [Vec<f64>]) -> f64 {
        acts[0].copy_from_slice(x);
        let last = self.layers() - 1;
        let mut logit = 0.0;
        for l in 0..self.layers() {
            let (w, b, inp, out) = self.layout(l);
            let (prev, rest) = acts.split_at_mut(l + 1);
            let a = &prev[l];
            for o in 0..out {
                let row = &self.params[w + o * inp..w + (o + 1) * inp];
                let z = self.params[b + o] + row.iter().zip(a).map(|(wi, ai)| wi * ai).sum::<f64>();
                if l == last {
                    logit = z;
                } else {
                    let mask = masks.map_or(1.0, |m| m[l][o]);
                    rest[0][o] = z.max(0.0) * mask;
                }
            }
        }
        logit
    }

    /// Logit for `x` with dropout disabled.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut scratch = self.scratch();
        self.forward_into(x, None, &mut scratch.acts)
    }

    /// Adds the BCE gradient of one sample to `grad` and returns its loss.
    /// With `scratch` given its masks apply; otherwise dropout is off.
    pub fn accumulate(
        &self,
        x: &[f64],
        label: bool,
        scratch: Option<&mut Scratch>,
        grad: &mut [f64],
    ) -> f64 {
        let mut own;
        let (s, use_masks) = match scratch {
            Some(s) => (s, true),
            None => {
                own = self.scratch();
                (&mut own, false)
            }
        };
        let masks = use_masks.then_some(&s.masks[..]);
        let logit = self.forward_into(x, masks, &mut s.acts);
        let loss = bce_with_logit(logit, label);

        s.delta.clear();
        s.delta.push(sigmoid(logit) - f64::from(u8::from(label)));
        for l in (0..self.layers()).rev() {
            let (w, b, inp, out) = self.layout(l);
            let a = &s.acts[l];
            for o in 0..out {
                let d = s.delta[o];
                grad[b + o] += d;
                for (g, ai) in grad[w + o * inp..w + (o + 1) * inp].iter_mut().zip(a) {
                    *g += d * ai;
                }
            }
            if l == 0 {
                break;
            }
            s.next.clear();
            for (i, &ai) in a.iter().enumerate().take(inp) {
                if ai <= 0.0 {
                    s.next.push(0.0);
                    continue;
                }
                let back: f64 = (0..out)
                    .map(|o| self.params[w + o * inp + i] * s.delta[o])
                    .sum();
                let mask = if use_masks { s.masks[l - 1][i] } else { 1.0 };
                s.next.push(back * mask);
            }
            std::mem::swap(&mut s.delta, &mut s.next);
        }
        loss
    }

    /// Mean BCE over a batch with dropout disabled.
    pub fn loss(&self, xs: &[&[f64]], ys: &[bool]) -> f64 {
        xs.iter()
            .zip(ys)
            .map(|(x, &y)| bce_with_logit(self.forward(x), y))
            .sum::<f64>()
            / xs.len() as f64
    }

    /// Mean BCE and its gradient with respect to `params()`, dropout disabled.
    pub fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[bool]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.num_params()];
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total += self.accumulate(x, y, None, &mut grad);
        }
        let n = xs.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (total / n, grad)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(17);
        let net = Mlp::new(4, &[5, 3], &mut rng);
        let xs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let ys = [true, false, true, true, false, false];
        let (_, grad) = net.loss_and_gradient(&xr, &ys);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let numeric = (plus.loss(&xr, &ys) - minus.loss(&xr, &ys)) / (2.0 * h);
            if numeric.abs() > 1e-7 || g.abs() > 1e-7 {
                worst = worst.max(rel_err(numeric, g));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn zero_network_outputs_half() {
        let net = Mlp::zeros(3, &[4]);
        assert_eq!(sigmoid(net.forward(&[1.0, -2.0, 3.0])), 0.5);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 + 1);
    }

    #[test]
    fn masks_scale_kept_units() {
        let mut rng = seed::rng(2);
        let net = Mlp::new(3, &[1000], &mut rng);
        let mut s = net.scratch();
        net.sample_masks(&[0.8], &mut rng, &mut s);
        let kept = s.masks[0].iter().filter(|&&m| m > 0.0).count();
        assert!((150..250).contains(&kept), "{kept}");
        assert!(s.masks[0]
            .iter()
            .all(|&m| m == 0.0 || (m - 5.0).abs() < 1e-12));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut adam = Adam::new(2, 0.001);
        let mut p = [1.0, 1.0];
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.999).abs() < 1e-9);
        assert!((p[1] - 1.001).abs() < 1e-9);
    }
}
