//! Small layer kit over candle: a named, seeded parameter store and the
//! handful of layers the networks need.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    Normal { std: f64 },
}

/// Named trainable variables, initialized from a seeded stream so that
/// identical seeds give identical networks.
#[derive(Debug)]
pub struct ParamStore {
    device: Device,
    rng: ChaCha8Rng,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(device: &Device, seed: u64) -> Self {
        Self {
            device: device.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: BTreeMap::new(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::config(format!("parameter `{name}` declared twice")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Const(v) => vec![v as f32; n],
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?;
        let var = Var::from_tensor(&t)?;
        let handle = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(handle)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Current values, detached from the graph.
    /// Deep copies of every variable. `Var::set` writes in place, so a
    /// plain detach would keep tracking later updates.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().detach().copy()?)))
            .collect()
    }

    /// Overwrites every variable; names and shapes must match exactly.
    pub fn load(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        if values.len() != self.vars.len() {
            return Err(Error::config(format!(
                "expected {} tensors, got {}",
                self.vars.len(),
                values.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = values
                .get(name)
                .ok_or_else(|| Error::config(format!("missing tensor `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::config(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(DType::F32)?.to_device(&self.device)?)?;
        }
        Ok(())
    }

    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))?;
        var.set(value)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// He-style init for the weight; `bias` is the constant bias value.
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, bias: f64) -> Result<Self> {
        let weight = store.var(
            &format!("{name}.weight"),
            &[outputs, inputs],
            Init::Normal {
                std: (1.0 / inputs as f64).sqrt(),
            },
        )?;
        let bias = store.var(&format!("{name}.bias"), &[outputs], Init::Const(bias))?;
        Ok(Self { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    /// `B×in → B×out`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<Self> {
        let fan_in = (inputs * kernel * kernel) as f64;
        let weight = store.var(
            &format!("{name}.weight"),
            &[outputs, inputs, kernel, kernel],
            Init::Normal {
                std: (2.0 / fan_in).sqrt(),
            },
        )?;
        let bias = store.var(&format!("{name}.bias"), &[outputs], Init::Const(0.0))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding: kernel / 2,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, 0.2)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// `log(1 + exp(x))` written as `max(x, 0) + log(1 + exp(-|x|))` so neither
/// the value nor its gradient overflows.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

/// Global average over the spatial axes: `B×C×H×W → B×C`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean(3)?.mean(2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_stores_agree() {
        let dev = Device::Cpu;
        let mut a = ParamStore::new(&dev, 5);
        let mut b = ParamStore::new(&dev, 5);
        let ta = a.var("w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        let tb = b.var("w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        let d = (ta - tb).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(d, 0.0);
        assert!(a.var("w", &[1], Init::Const(0.0)).is_err());
    }

    #[test]
    fn layer_handles_follow_var_updates() {
        let dev = Device::Cpu;
        let mut store = ParamStore::new(&dev, 0);
        let lin = Linear::new(&mut store, "fc", 2, 1, 0.0).unwrap();
        store.set("fc.weight", &Tensor::new(&[[1f32, 2.0]], &dev).unwrap()).unwrap();
        let y = lin.forward(&Tensor::new(&[[3f32, 4.0]], &dev).unwrap()).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), vec![vec![11.0]]);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        let dev = Device::Cpu;
        let x = Var::new(&[-100f32, -30.0, 0.0, 30.0, 100.0], &dev).unwrap();
        let y = softplus(x.as_tensor()).unwrap();
        let v = y.to_vec1::<f32>().unwrap();
        assert!((v[2] - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((v[4] - 100.0).abs() < 1e-4 && v[0] >= 0.0 && v[0] < 1e-30);
        let g = y.sum_all().unwrap().backward().unwrap();
        let g = g.get(&x).unwrap().to_vec1::<f32>().unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
        assert!((g[2] - 0.5).abs() < 1e-6);
    }
}
