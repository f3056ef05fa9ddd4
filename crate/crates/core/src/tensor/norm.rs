use super::{Tensor, Var};
use crate::error::{dim_err, Result};

/// Batch-normalisation constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Mutable view of a layer's running mean and variance.
#[derive(Debug)]
pub struct RunningStats<'a> {
    pub mean: &'a mut [f64],
    pub var: &'a mut [f64],
}

impl<'t> Var<'t> {
    /// Batch normalisation over channel axis `axis`; every other axis is part
    /// of the statistics population.
    ///
    /// In training mode the batch mean and biased variance normalise the input
    /// and the running statistics move toward the batch mean and unbiased
    /// variance. In eval mode the running statistics are used unchanged.
    pub fn batchnorm(
        &self,
        gamma: &Var<'t>,
        beta: &Var<'t>,
        running: RunningStats<'_>,
        axis: usize,
        training: bool,
        cfg: BatchNormConfig,
    ) -> Result<Var<'t>> {
        let s = self.shape();
        if axis >= s.len() {
            return dim_err("batchnorm", format!("axis {axis} for shape {s:?}"));
        }
        let c = s[axis];
        if gamma.shape() != [c] || beta.shape() != [c] || running.mean.len() != c || running.var.len() != c {
            return dim_err("batchnorm", format!("{c} channels, parameters {:?}", gamma.shape()));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let count = outer * inner;
        let x = self.data();
        // contiguous run of `inner` values for (outer o, channel ch)
        let run = move |o: usize, ch: usize| {
            let base = (o * c + ch) * inner;
            base..base + inner
        };
        let per_channel = |f: &dyn Fn(&[f64], usize) -> f64| -> Vec<f64> {
            let mut acc = vec![0.0; c];
            for o in 0..outer {
                for (ch, a) in acc.iter_mut().enumerate() {
                    *a += f(&x[run(o, ch)], ch);
                }
            }
            acc
        };

        let (mean, var) = if training {
            let n = count as f64;
            let mut mean: Vec<f64> = per_channel(&|r, _| r.iter().sum()).iter().map(|v| v / n).collect();
            // second-pass correction; makes the mean of a constant channel exact
            let m0 = mean.clone();
            let resid = per_channel(&|r, ch| r.iter().map(|v| v - m0[ch]).sum());
            mean.iter_mut().zip(&resid).for_each(|(m, r)| *m += r / n);
            let m1 = mean.clone();
            let var: Vec<f64> = per_channel(&|r, ch| r.iter().map(|v| (v - m1[ch]).powi(2)).sum())
                .iter()
                .map(|v| v / n)
                .collect();
            let unbias = if count > 1 { n / (n - 1.0) } else { 1.0 };
            for ch in 0..c {
                running.mean[ch] = (1.0 - cfg.momentum) * running.mean[ch] + cfg.momentum * mean[ch];
                running.var[ch] = (1.0 - cfg.momentum) * running.var[ch] + cfg.momentum * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (running.mean.to_vec(), running.var.to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + cfg.eps).sqrt()).collect();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for ch in 0..c {
                let r = run(o, ch);
                let (m, is, gc, bc) = (mean[ch], inv_std[ch], gm[ch], bt[ch]);
                for ((h, yv), &xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                    *h = (xv - m) * is;
                    *yv = gc * *h + bc;
                }
            }
        }

        let gamma_v = gm.to_vec();
        self.tape.push(
            "batchnorm",
            Tensor::new(s, y)?,
            &[self, gamma, beta],
            move |g, need| {
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for o in 0..outer {
                    for ch in 0..c {
                        let r = run(o, ch);
                        let (mut a, mut b) = (0.0, 0.0);
                        for (&gi, &h) in g[r.clone()].iter().zip(&xhat[r]) {
                            a += gi;
                            b += gi * h;
                        }
                        sum_g[ch] += a;
                        sum_gx[ch] += b;
                    }
                }
                let gx = need[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    let n = count as f64;
                    for o in 0..outer {
                        for ch in 0..c {
                            let r = run(o, ch);
                            let scale = gamma_v[ch] * inv_std[ch];
                            let dst = gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]);
                            if training {
                                let (sg, sgx) = (sum_g[ch], sum_gx[ch]);
                                for ((d, &gi), &h) in dst {
                                    *d = scale / n * (n * gi - sg - h * sgx);
                                }
                            } else {
                                for ((d, &gi), _) in dst {
                                    *d = gi * scale;
                                }
                            }
                        }
                    }
                    gx
                });
                vec![gx, need[1].then(|| sum_gx.clone()), need[2].then(|| sum_g.clone())]
            },
        )
    }
}
