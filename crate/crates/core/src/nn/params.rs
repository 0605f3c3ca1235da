use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};

use super::{real, Architecture, Real};
use crate::error::{Error, Result};
use crate::rng::stream;

const FORMAT_MAGIC: &str = "pointfilter-params";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub scale: Array1<T>,
    pub shift: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
}

/// A linear map (`weight` is `fan_in x fan_out`), optionally followed by batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub norm: Option<BatchNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T = f64> {
    pub(crate) arch: Architecture,
    pub encoder: Vec<Layer<T>>,
    pub decoder: Vec<Layer<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub scale: Option<Array1<T>>,
    pub shift: Option<Array1<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f64> {
    pub encoder: Vec<LayerGrads<T>>,
    pub decoder: Vec<LayerGrads<T>>,
}

impl<T: Real> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize, norm: bool) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            norm: norm.then(|| BatchNorm {
                scale: Array1::ones(fan_out),
                shift: Array1::zeros(fan_out),
                running_mean: Array1::zeros(fan_out),
                running_var: Array1::ones(fan_out),
            }),
        }
    }

    fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = vec![slice_mut(&mut self.weight), slice1_mut(&mut self.bias)];
        if let Some(bn) = &mut self.norm {
            out.push(slice1_mut(&mut bn.scale));
            out.push(slice1_mut(&mut bn.shift));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut out = vec![
            ("weight", slice_mut(&mut self.weight)),
            ("bias", slice1_mut(&mut self.bias)),
        ];
        if let Some(bn) = &mut self.norm {
            out.push(("bn_scale", slice1_mut(&mut bn.scale)));
            out.push(("bn_shift", slice1_mut(&mut bn.shift)));
            out.push(("bn_running_mean", slice1_mut(&mut bn.running_mean)));
            out.push(("bn_running_var", slice1_mut(&mut bn.running_var)));
        }
        out
    }

    fn cast<U: Real>(&self) -> Layer<U> {
        let c1 = |a: &Array1<T>| a.mapv(|x| real::<U>(x.to_f64().expect("finite")));
        Layer {
            weight: self.weight.mapv(|x| real::<U>(x.to_f64().expect("finite"))),
            bias: c1(&self.bias),
            norm: self.norm.as_ref().map(|bn| BatchNorm {
                scale: c1(&bn.scale),
                shift: c1(&bn.shift),
                running_mean: c1(&bn.running_mean),
                running_var: c1(&bn.running_var),
            }),
        }
    }
}

fn slice_mut<T>(a: &mut Array2<T>) -> &mut [T] {
    a.as_slice_mut().expect("standard layout")
}

fn slice1_mut<T>(a: &mut Array1<T>) -> &mut [T] {
    a.as_slice_mut().expect("standard layout")
}

impl<T: Real> NetworkParams<T> {
    /// All weights zero, batch norm at identity with unit running variance.
    pub fn zeros(arch: &Architecture) -> Result<Self> {
        arch.validate()?;
        let encoder = arch
            .encoder_shapes()
            .into_iter()
            .map(|(i, o)| Layer::zeros(i, o, true))
            .collect();
        let dec = arch.decoder_shapes();
        let last = dec.len() - 1;
        let decoder = dec
            .into_iter()
            .enumerate()
            .map(|(k, (i, o))| Layer::zeros(i, o, k != last))
            .collect();
        Ok(Self {
            arch: arch.clone(),
            encoder,
            decoder,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.encoder.iter().chain(&self.decoder)
    }

    /// Trainable tensors in a fixed order (encoder then decoder; weight,
    /// bias, scale, shift).
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        self.encoder
            .iter_mut()
            .chain(&mut self.decoder)
            .flat_map(|l| l.trainable_mut())
            .collect()
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        let enc = self.encoder.iter_mut().enumerate().flat_map(|(k, l)| {
            l.tensors_mut().into_iter().map(move |(n, t)| (format!("encoder.{k}.{n}"), t))
        });
        let dec = self.decoder.iter_mut().enumerate().flat_map(|(k, l)| {
            l.tensors_mut().into_iter().map(move |(n, t)| (format!("decoder.{k}.{n}"), t))
        });
        enc.chain(dec).collect()
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(Layer::cast).collect(),
            decoder: self.decoder.iter().map(Layer::cast).collect(),
        }
    }

    /// Zeroes the output layer so the network starts as the identity filter.
    pub fn zero_output_layer(&mut self) {
        let last = self.decoder.last_mut().expect("validated architecture");
        last.weight.fill(T::zero());
        last.bias.fill(T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.layers().all(|l| {
            l.weight.iter().chain(&l.bias).all(|x| x.is_finite())
                && l.norm.as_ref().is_none_or(|bn| {
                    bn.scale
                        .iter()
                        .chain(&bn.shift)
                        .chain(&bn.running_mean)
                        .chain(&bn.running_var)
                        .all(|x| x.is_finite())
                })
        })
    }
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &NetworkParams<T>) -> Self {
        let g = |l: &Layer<T>| LayerGrads {
            weight: Array2::zeros(l.weight.raw_dim()),
            bias: Array1::zeros(l.bias.len()),
            scale: l.norm.as_ref().map(|bn| Array1::zeros(bn.scale.len())),
            shift: l.norm.as_ref().map(|bn| Array1::zeros(bn.shift.len())),
        };
        Self {
            encoder: params.encoder.iter().map(g).collect(),
            decoder: params.decoder.iter().map(g).collect(),
        }
    }

    /// Tensors in the order of [`NetworkParams::trainable_mut`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for g in self.encoder.iter().chain(&self.decoder) {
            out.push(g.weight.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            if let (Some(s), Some(t)) = (&g.scale, &g.shift) {
                out.push(s.as_slice().expect("standard layout"));
                out.push(t.as_slice().expect("standard layout"));
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .into_iter()
            .flatten()
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

/// He-normal weights (variance `2 / fan_in`), zero biases, identity batch norm.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<NetworkParams<f64>> {
    let mut params = NetworkParams::<f64>::zeros(arch)?;
    for (k, layer) in params.encoder.iter_mut().chain(&mut params.decoder).enumerate() {
        let fan_in = layer.weight.nrows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let mut rng = stream(seed, &[k as u64]);
        layer.weight.mapv_inplace(|_| normal.sample(&mut rng));
    }
    Ok(params)
}

/// Writes the versioned text format.
pub fn save_params<T: Real>(params: &NetworkParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_params(params)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn format_params<T: Real>(params: &NetworkParams<T>) -> String {
    let arch = &params.arch;
    let widths = |w: &[usize]| w.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    let mut out = format!("{FORMAT_MAGIC} {FORMAT_VERSION}\n");
    let _ = writeln!(out, "encoder {} {}", arch.encoder_widths.len(), widths(&arch.encoder_widths));
    let _ = writeln!(out, "decoder {} {}", arch.decoder_widths.len(), widths(&arch.decoder_widths));
    let mut params = params.clone();
    let shapes = tensor_shapes(&params.arch);
    for ((name, values), shape) in params.named_tensors_mut().into_iter().zip(shapes) {
        let _ = writeln!(out, "tensor {name} {} {}", shape.len(), widths(&shape));
        let row = *shape.last().expect("non-empty shape");
        for chunk in values.chunks(row) {
            let line: Vec<String> = chunk
                .iter()
                .map(|x| format!("{:.17e}", x.to_f64().expect("finite")))
                .collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out.push_str("end\n");
    out
}

fn tensor_shapes(arch: &Architecture) -> Vec<Vec<usize>> {
    let dec = arch.decoder_shapes();
    let last = dec.len() - 1;
    let layer = |(i, o): (usize, usize), norm: bool| {
        let mut v = vec![vec![i, o], vec![o]];
        if norm {
            v.extend(std::iter::repeat_n(vec![o], 4));
        }
        v
    };
    arch.encoder_shapes()
        .into_iter()
        .flat_map(|s| layer(s, true))
        .chain(dec.into_iter().enumerate().flat_map(|(k, s)| layer(s, k != last)))
        .collect()
}

pub fn load_params(path: impl AsRef<Path>) -> Result<NetworkParams<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_params(&text)
}

struct Tokens<'a> {
    inner: std::str::SplitWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| Error::Format(format!("file truncated while reading {what}")))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let got = self.next(word)?;
        if got != word {
            return Err(Error::Format(format!("expected `{word}`, found `{got}`")));
        }
        Ok(())
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let tok = self.next(what)?;
        tok.parse()
            .map_err(|_| Error::Format(format!("invalid {what} `{tok}`")))
    }

    fn widths(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.usize(what)?;
        (0..n).map(|_| self.usize(what)).collect()
    }
}

fn parse_params(text: &str) -> Result<NetworkParams<f64>> {
    let mut tok = Tokens {
        inner: text.split_whitespace(),
    };
    tok.expect(FORMAT_MAGIC)?;
    let version = tok.usize("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported parameter format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    tok.expect("encoder")?;
    let encoder_widths = tok.widths("encoder width")?;
    tok.expect("decoder")?;
    let decoder_widths = tok.widths("decoder width")?;
    let arch = Architecture {
        encoder_widths,
        decoder_widths,
    };
    arch.validate()
        .map_err(|e| Error::Format(format!("invalid architecture header: {e}")))?;

    let mut params = NetworkParams::<f64>::zeros(&arch)?;
    let shapes = tensor_shapes(&arch);
    for ((name, values), shape) in params.named_tensors_mut().into_iter().zip(shapes) {
        tok.expect("tensor")?;
        let got_name = tok.next("tensor name")?;
        if got_name != name {
            return Err(Error::Format(format!("expected tensor `{name}`, found `{got_name}`")));
        }
        let got_shape = tok.widths("tensor shape")?;
        if got_shape != shape {
            return Err(Error::Format(format!(
                "tensor `{name}` has shape {got_shape:?} but the header architecture implies {shape:?}"
            )));
        }
        for v in values.iter_mut() {
            let t = tok.next(&name)?;
            *v = t
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Format(format!("invalid value `{t}` in tensor `{name}`")))?;
        }
    }
    tok.expect("end")?;
    if params.layers().any(|l| l.norm.as_ref().is_some_and(|bn| bn.running_var.iter().any(|&v| v < 0.0))) {
        return Err(Error::Format("negative running variance".into()));
    }
    Ok(params)
}

/// Random parameters for tests, including non-trivial batch-norm state.
#[cfg(test)]
pub(crate) fn random_params(arch: &Architecture, seed: u64) -> NetworkParams<f64> {
    use rand::Rng;
    let mut p = init_params(arch, seed).unwrap();
    let mut rng = stream(seed, &[u64::MAX]);
    for layer in p.encoder.iter_mut().chain(&mut p.decoder) {
        layer.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        if let Some(bn) = &mut layer.norm {
            bn.scale.mapv_inplace(|_| rng.random_range(0.5..1.5));
            bn.shift.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_mean.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
    }
    p
}
