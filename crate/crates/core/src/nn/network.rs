use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use super::ops::{col_dot, col_sum, for_rows, matmul, matmul_nt, matmul_tn};
use super::params::{BatchNorm, Gradients, Layer, LayerGrads, NetworkParams};
use super::{real, Architecture, Real, BN_EPSILON, BN_MOMENTUM};
use crate::cloud::Vec3;
use crate::error::{Error, Result};

/// Activations kept by a training forward pass for [`NetworkParams::backward`].
#[derive(Debug, Clone)]
pub struct Cache<T> {
    arch: Architecture,
    batch: usize,
    patch_size: usize,
    /// Input of every encoder layer; `enc_inputs[0]` holds the patch points.
    enc_inputs: Vec<Array2<T>>,
    enc_norm: Vec<NormCache<T>>,
    /// Row (within its patch) of each pooled maximum.
    argmax: Array2<usize>,
    /// Input of every decoder layer; `dec_inputs[0]` is the pooled feature.
    dec_inputs: Vec<Array2<T>>,
    dec_norm: Vec<NormCache<T>>,
    output: Array2<T>,
}

#[derive(Debug, Clone)]
struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

fn check_input<T: Real>(input: &ArrayView2<T>, patch_size: usize) -> Result<usize> {
    if input.ncols() != 3 {
        return Err(Error::Shape(format!("expected 3 columns, got {}", input.ncols())));
    }
    if patch_size == 0 || input.nrows() == 0 || !input.nrows().is_multiple_of(patch_size) {
        return Err(Error::Shape(format!(
            "{} input rows do not form whole patches of {patch_size} points",
            input.nrows()
        )));
    }
    if input.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("network input contains a non-finite value".into()));
    }
    Ok(input.nrows() / patch_size)
}

fn check_output<T: Real>(out: &Array2<T>) -> Result<()> {
    if out.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("network output is not finite".into()))
    }
}

fn add_bias<T: Real>(z: &mut Array2<T>, bias: &Array1<T>) {
    for_rows(z, |mut row| row += bias);
}

/// Linear map, batch statistics, running-stat update and ReLU.
fn train_layer<T: Real>(layer: &mut Layer<T>, x: ArrayView2<T>) -> (Array2<T>, NormCache<T>) {
    let rows = x.nrows();
    let n = real::<T>(rows as f64);
    let mut z = matmul(x, layer.weight.view());
    add_bias(&mut z, &layer.bias);
    let mean = col_sum(z.view()) / n;
    for_rows(&mut z, |mut row| row -= &mean);
    let var = col_dot(z.view(), z.view()) / n;
    let inv_std = var.mapv(|v| (v + real(BN_EPSILON)).sqrt().recip());
    for_rows(&mut z, |mut row| row *= &inv_std);
    let xhat = z;

    let bn = layer.norm.as_mut().expect("hidden layers carry batch norm");
    let mut a = xhat.clone();
    for_rows(&mut a, |mut row| {
        Zip::from(&mut row)
            .and(&bn.scale)
            .and(&bn.shift)
            .for_each(|v, &g, &b| *v = (*v * g + b).max(T::zero()));
    });
    update_running(bn, &mean, &var, rows);
    (a, NormCache { xhat, inv_std })
}

fn update_running<T: Real>(bn: &mut BatchNorm<T>, mean: &Array1<T>, var: &Array1<T>, rows: usize) {
    let m = real::<T>(BN_MOMENTUM);
    let keep = T::one() - m;
    let unbias = if rows > 1 {
        real::<T>(rows as f64 / (rows - 1) as f64)
    } else {
        T::one()
    };
    Zip::from(&mut bn.running_mean)
        .and(mean)
        .for_each(|r, &b| *r = keep * *r + m * b);
    Zip::from(&mut bn.running_var)
        .and(var)
        .for_each(|r, &b| *r = keep * *r + m * b * unbias);
}

/// Linear map, running-statistic normalization and ReLU.
fn infer_layer<T: Real>(layer: &Layer<T>, x: ArrayView2<T>) -> Array2<T> {
    let bn = layer.norm.as_ref().expect("hidden layers carry batch norm");
    let eps = real::<T>(BN_EPSILON);
    let mul: Array1<T> = Zip::from(&bn.scale)
        .and(&bn.running_var)
        .map_collect(|&g, &v| g / (v + eps).sqrt());
    let add: Array1<T> = Zip::from(&layer.bias)
        .and(&bn.running_mean)
        .and(&bn.shift)
        .and(&mul)
        .map_collect(|&b, &m, &s, &k| (b - m) * k + s);
    let mut z = matmul(x, layer.weight.view());
    for_rows(&mut z, |mut row| {
        Zip::from(&mut row)
            .and(&mul)
            .and(&add)
            .for_each(|v, &k, &c| *v = (*v * k + c).max(T::zero()));
    });
    z
}

fn output_layer<T: Real>(layer: &Layer<T>, x: ArrayView2<T>) -> Array2<T> {
    let mut z = x.dot(&layer.weight);
    add_bias(&mut z, &layer.bias);
    z.mapv_inplace(|v| v.tanh());
    z
}

/// Channel-wise max over each patch's rows; ties go to the lowest row.
fn max_pool<T: Real>(a: &Array2<T>, patch_size: usize) -> (Array2<T>, Array2<usize>) {
    let batch = a.nrows() / patch_size;
    let channels = a.ncols();
    let mut pooled = Array2::zeros((batch, channels));
    let mut argmax = Array2::zeros((batch, channels));
    pooled
        .outer_iter_mut()
        .into_par_iter()
        .zip(argmax.outer_iter_mut().into_par_iter())
        .zip(a.axis_chunks_iter(Axis(0), patch_size).into_par_iter())
        .for_each(|((mut best, mut at), patch)| {
            best.assign(&patch.row(0));
            for (r, row) in patch.outer_iter().enumerate().skip(1) {
                Zip::from(&mut best).and(&mut at).and(&row).for_each(|b, i, &v| {
                    if v > *b {
                        *b = v;
                        *i = r;
                    }
                });
            }
        });
    (pooled, argmax)
}

/// Batch-norm backward from the post-activation gradient `dy` (already
/// masked by ReLU). Returns `(dz, dscale, dshift)`.
fn norm_backward<T: Real>(
    dy: Array2<T>,
    cache: &NormCache<T>,
    bn: &BatchNorm<T>,
) -> (Array2<T>, Array1<T>, Array1<T>) {
    let n = real::<T>(dy.nrows() as f64);
    let dscale = col_dot(dy.view(), cache.xhat.view());
    let dshift = col_sum(dy.view());
    let k: Array1<T> = Zip::from(&bn.scale)
        .and(&cache.inv_std)
        .map_collect(|&g, &s| g * s / n);
    let mut dz = dy;
    dz.axis_chunks_iter_mut(Axis(0), 256)
        .into_par_iter()
        .zip(cache.xhat.axis_chunks_iter(Axis(0), 256).into_par_iter())
        .for_each(|(mut dz, xhat)| {
            for (mut d, x) in dz.outer_iter_mut().zip(xhat.outer_iter()) {
                Zip::from(&mut d)
                    .and(&x)
                    .and(&k)
                    .and(&dshift)
                    .and(&dscale)
                    .for_each(|d, &x, &k, &db, &dg| *d = k * (n * *d - db - x * dg));
            }
        });
    (dz, dscale, dshift)
}

fn relu_mask<T: Real>(grad: &mut Array2<T>, activation: &Array2<T>) {
    Zip::from(grad).and(activation).par_for_each(|g, &a| {
        if a <= T::zero() {
            *g = T::zero();
        }
    });
}

impl<T: Real> NetworkParams<T> {
    /// Training forward pass on `B * patch_size` stacked patch rows.
    ///
    /// Batch norm uses batch statistics and updates the running statistics.
    /// Returns one displacement row per patch.
    pub fn forward_train(
        &mut self,
        input: ArrayView2<T>,
        patch_size: usize,
    ) -> Result<(Array2<T>, Cache<T>)> {
        let batch = check_input(&input, patch_size)?;
        let mut enc_inputs = vec![input.to_owned()];
        let mut enc_norm = Vec::with_capacity(self.encoder.len());
        let mut last = None;
        let n_enc = self.encoder.len();
        for (k, layer) in self.encoder.iter_mut().enumerate() {
            let (a, c) = train_layer(layer, enc_inputs[k].view());
            enc_norm.push(c);
            if k + 1 < n_enc {
                enc_inputs.push(a);
            } else {
                last = Some(a);
            }
        }
        let (pooled, argmax) = max_pool(&last.expect("non-empty encoder"), patch_size);

        let mut dec_inputs = vec![pooled];
        let mut dec_norm = Vec::new();
        let n_dec = self.decoder.len();
        for (k, layer) in self.decoder.iter_mut().enumerate() {
            if k + 1 < n_dec {
                let (a, c) = train_layer(layer, dec_inputs[k].view());
                dec_norm.push(c);
                dec_inputs.push(a);
            }
        }
        let output = output_layer(&self.decoder[n_dec - 1], dec_inputs[n_dec - 1].view());
        check_output(&output)?;
        let cache = Cache {
            arch: self.arch.clone(),
            batch,
            patch_size,
            enc_inputs,
            enc_norm,
            argmax,
            dec_inputs,
            dec_norm,
            output: output.clone(),
        };
        Ok((output, cache))
    }

    /// Inference forward pass using the running batch-norm statistics.
    pub fn forward_infer(&self, input: ArrayView2<T>, patch_size: usize) -> Result<Array2<T>> {
        check_input(&input, patch_size)?;
        let mut x = input.to_owned();
        for layer in &self.encoder {
            x = infer_layer(layer, x.view());
        }
        let (mut x, _) = max_pool(&x, patch_size);
        let (hidden, last) = self.decoder.split_at(self.decoder.len() - 1);
        for layer in hidden {
            x = infer_layer(layer, x.view());
        }
        let out = output_layer(&last[0], x.view());
        check_output(&out)?;
        Ok(out)
    }

    /// Inference on a single patch.
    pub fn forward_patch(&self, points: &[Vec3]) -> Result<Vec3> {
        let input = Array2::from_shape_fn((points.len(), 3), |(r, c)| real::<T>(points[r][c]));
        let out = self.forward_infer(input.view(), points.len())?;
        Ok(Vec3::from_fn(|c, _| out[(0, c)].to_f64().expect("finite")))
    }

    /// Parameter gradients of a loss whose gradient with respect to the
    /// network output (one row per patch) is `grad_output`.
    pub fn backward(&self, cache: &Cache<T>, grad_output: ArrayView2<T>) -> Result<Gradients<T>> {
        if cache.arch != self.arch {
            return Err(Error::State("cache was produced by a different architecture".into()));
        }
        if grad_output.dim() != (cache.batch, 3) {
            return Err(Error::State(format!(
                "output gradient has shape {:?}, the cached batch expects ({}, 3)",
                grad_output.dim(),
                cache.batch
            )));
        }
        let mut grads = Gradients::zeros_like(self);
        let n_dec = self.decoder.len();

        let mut dz = grad_output.to_owned();
        Zip::from(&mut dz)
            .and(&cache.output)
            .for_each(|g, &y| *g *= T::one() - y * y);
        let x = &cache.dec_inputs[n_dec - 1];
        grads.decoder[n_dec - 1] = LayerGrads {
            weight: x.t().dot(&dz),
            bias: dz.sum_axis(Axis(0)),
            scale: None,
            shift: None,
        };
        let mut dx = dz.dot(&self.decoder[n_dec - 1].weight.t());

        for k in (0..n_dec - 1).rev() {
            relu_mask(&mut dx, &cache.dec_inputs[k + 1]);
            let (dz, layer_grads) = self.layer_backward(
                &self.decoder[k],
                dx,
                &cache.dec_norm[k],
                cache.dec_inputs[k].view(),
            );
            grads.decoder[k] = layer_grads;
            dx = matmul_nt(dz.view(), self.decoder[k].weight.view());
        }

        // Route the pooled gradient back to the maximizing rows. A pooled
        // value of zero means the whole channel sat at or below the ReLU kink.
        let channels = dx.ncols();
        let pooled = &cache.dec_inputs[0];
        let mut dy = Array2::<T>::zeros((cache.batch * cache.patch_size, channels));
        for b in 0..cache.batch {
            for c in 0..channels {
                if pooled[(b, c)] > T::zero() {
                    dy[(b * cache.patch_size + cache.argmax[(b, c)], c)] = dx[(b, c)];
                }
            }
        }

        let n_enc = self.encoder.len();
        for k in (0..n_enc).rev() {
            if k + 1 < n_enc {
                relu_mask(&mut dy, &cache.enc_inputs[k + 1]);
            }
            let (dz, layer_grads) = self.layer_backward(
                &self.encoder[k],
                dy,
                &cache.enc_norm[k],
                cache.enc_inputs[k].view(),
            );
            grads.encoder[k] = layer_grads;
            if k > 0 {
                dy = matmul_nt(dz.view(), self.encoder[k].weight.view());
            } else {
                break;
            }
        }
        Ok(grads)
    }

    fn layer_backward(
        &self,
        layer: &Layer<T>,
        dy: Array2<T>,
        norm: &NormCache<T>,
        input: ArrayView2<T>,
    ) -> (Array2<T>, LayerGrads<T>) {
        let bn = layer.norm.as_ref().expect("hidden layers carry batch norm");
        let (dz, dscale, dshift) = norm_backward(dy, norm, bn);
        let grads = LayerGrads {
            weight: matmul_tn(input, dz.view()),
            bias: col_sum(dz.view()),
            scale: Some(dscale),
            shift: Some(dshift),
        };
        (dz, grads)
    }
}
