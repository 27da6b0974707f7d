//! Named parameter storage and the small layer vocabulary the networks are
//! built from.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::numerics::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Learned by the optimizer.
    Weight,
    /// Running statistic, updated outside the optimizer.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Entry {
    pub value: Tensor,
    pub role: Role,
    pub frozen: bool,
}

#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(−1/√fan_in, 1/√fan_in)`.
    FanIn(usize),
    Uniform(f64),
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// All named arrays of a model, ordered by name.
///
/// Each weight is initialized from its own RNG stream seeded by
/// `seed ^ fnv1a(name)`, so two models that declare the same name with the
/// same shape start from identical values whatever else they contain.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    seed: u64,
    entries: BTreeMap<String, Entry>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self { seed, entries: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn declare(&mut self, name: &str, shape: &[usize], init: Init) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name.as_bytes()));
        let value = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::ones(shape),
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                Tensor::from_fn(shape, |_| rng.random_range(-b..b))
            }
            Init::Uniform(b) => Tensor::from_fn(shape, |_| rng.random_range(-b..b)),
        };
        self.entries.insert(name.to_string(), Entry { value, role: Role::Weight, frozen: false });
    }

    pub fn declare_buffer(&mut self, name: &str, value: Tensor) {
        self.entries.insert(name.to_string(), Entry { value, role: Role::Buffer, frozen: true });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).map(|e| &e.value).ok_or_else(|| invalid(format!("unknown parameter {name}")))
    }

    pub fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replaces a value, keeping role and freeze flag. Shapes must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let e = self.entries.get_mut(name).ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
        if e.value.shape() != value.shape() {
            return Err(invalid(format!(
                "parameter {name}: shape {:?} does not match {:?}",
                value.shape(),
                e.value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Freezes every weight whose name does not start with one of `prefixes`,
    /// and unfreezes the rest.
    pub fn freeze_except(&mut self, prefixes: &[&str]) {
        for (name, e) in self.entries.iter_mut() {
            if e.role == Role::Weight {
                e.frozen = !prefixes.iter().any(|p| name.starts_with(p));
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        for e in self.entries.values_mut() {
            if e.role == Role::Weight {
                e.frozen = false;
            }
        }
    }

    /// Sum of squares of the values of all entries selected by `pred`.
    pub fn norm_squared(&self, pred: impl Fn(&str) -> bool) -> f64 {
        self.entries.iter().filter(|(k, _)| pred(k)).map(|(_, e)| e.value.data().iter().map(|v| v * v).sum::<f64>()).sum()
    }

    /// Bit pattern of every value selected by `pred`, for equality checks.
    pub fn fingerprint(&self, pred: impl Fn(&str) -> bool) -> Vec<u64> {
        self.entries
            .iter()
            .filter(|(k, _)| pred(k))
            .flat_map(|(_, e)| e.value.data().iter().map(|v| v.to_bits()))
            .collect()
    }
}

/// Forward-pass context: the tape plus read access to the parameters.
pub struct Cx<'a> {
    pub g: &'a mut Graph,
    pub params: &'a ParamStore,
}

impl<'a> Cx<'a> {
    pub fn new(g: &'a mut Graph, params: &'a ParamStore) -> Self {
        Self { g, params }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let e = self.params.entry(name).ok_or_else(|| invalid(format!("unknown parameter {name}")))?;
        Ok(self.g.bind_param(name, &e.value, e.role == Role::Weight && !e.frozen))
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub bias: bool,
    pub zero_init: bool,
}

impl Conv {
    pub fn new(name: impl Into<String>, k: usize, c_in: usize, c_out: usize, stride: usize) -> Self {
        Self { name: name.into(), k, c_in, c_out, stride, bias: true, zero_init: false }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn zeroed(mut self) -> Self {
        self.zero_init = true;
        self
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn declare(&self, store: &mut ParamStore) {
        let init = if self.zero_init { Init::Zeros } else { Init::FanIn(self.k * self.k * self.c_in) };
        store.declare(&self.weight_name(), &[self.k, self.k, self.c_in, self.c_out], init);
        if self.bias {
            store.declare(&self.bias_name(), &[self.c_out], Init::Zeros);
        }
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let w = cx.param(&self.weight_name())?;
        let b = if self.bias { Some(cx.param(&self.bias_name())?) } else { None };
        Ok(cx.g.conv2d(x, w, b, self.stride, self.k / 2)?)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels, momentum: 0.1, eps: 1e-5 }
    }

    pub fn declare(&self, store: &mut ParamStore) {
        let c = self.channels;
        store.declare(&format!("{}.gamma", self.name), &[c], Init::Ones);
        store.declare(&format!("{}.beta", self.name), &[c], Init::Zeros);
        store.declare_buffer(&format!("{}.running_mean", self.name), Tensor::zeros(&[c]));
        store.declare_buffer(&format!("{}.running_var", self.name), Tensor::ones(&[c]));
    }

    /// Training graphs normalize with batch moments and record updated
    /// running statistics; evaluation graphs use the stored statistics.
    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let gamma = cx.param(&format!("{}.gamma", self.name))?;
        let beta = cx.param(&format!("{}.beta", self.name))?;
        let mean_name = format!("{}.running_mean", self.name);
        let var_name = format!("{}.running_var", self.name);
        let rm = cx.params.get(&mean_name)?.data().to_vec();
        let rv = cx.params.get(&var_name)?.data().to_vec();
        if cx.g.is_training() {
            let (y, mean, var) = cx.g.batch_norm_train(x, gamma, beta, self.eps)?;
            let m = self.momentum;
            let blend = |old: &[f64], new: &[f64]| -> Tensor {
                Tensor::from_fn(&[old.len()], |i| (1.0 - m) * old[i] + m * new[i])
            };
            cx.g.record_buffer_update(mean_name, blend(&rm, &mean));
            cx.g.record_buffer_update(var_name, blend(&rv, &var));
            Ok(y)
        } else {
            Ok(cx.g.batch_norm_eval(x, gamma, beta, &rm, &rv, self.eps)?)
        }
    }
}

/// Dense layer on a vector: `[c_in] → [c_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub zero_init: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, c_in: usize, c_out: usize) -> Self {
        Self { name: name.into(), c_in, c_out, zero_init: false }
    }

    pub fn zeroed(mut self) -> Self {
        self.zero_init = true;
        self
    }

    pub fn declare(&self, store: &mut ParamStore) {
        let init = if self.zero_init { Init::Zeros } else { Init::FanIn(self.c_in) };
        store.declare(&format!("{}.weight", self.name), &[self.c_in, self.c_out], init);
        store.declare(&format!("{}.bias", self.name), &[self.c_out], Init::Zeros);
    }

    pub fn forward(&self, cx: &mut Cx, x: Var) -> Result<Var> {
        let w = cx.param(&format!("{}.weight", self.name))?;
        let b = cx.param(&format!("{}.bias", self.name))?;
        let row = cx.g.reshape(x, &[1, self.c_in])?;
        let y = cx.g.matmul(row, w)?;
        let y = cx.g.reshape(y, &[self.c_out])?;
        Ok(cx.g.add_bias(y, b)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initialization_depends_only_on_seed_and_name() {
        let mut a = ParamStore::new(7);
        a.declare("x.weight", &[3, 3, 2, 4], Init::FanIn(18));
        let mut b = ParamStore::new(7);
        b.declare("other", &[5], Init::FanIn(5));
        b.declare("x.weight", &[3, 3, 2, 4], Init::FanIn(18));
        assert_eq!(a.get("x.weight").unwrap(), b.get("x.weight").unwrap());
        let mut c = ParamStore::new(8);
        c.declare("x.weight", &[3, 3, 2, 4], Init::FanIn(18));
        assert_ne!(a.get("x.weight").unwrap(), c.get("x.weight").unwrap());
    }

    #[test]
    fn frozen_weights_do_not_require_grad() {
        let mut s = ParamStore::new(1);
        s.declare("pose.w", &[2], Init::Ones);
        s.declare("fnet.w", &[2], Init::Ones);
        s.freeze_except(&["pose."]);
        let mut g = Graph::new();
        let mut cx = Cx::new(&mut g, &s);
        let p = cx.param("pose.w").unwrap();
        let f = cx.param("fnet.w").unwrap();
        assert!(g.requires_grad(p));
        assert!(!g.requires_grad(f));
    }

    #[test]
    fn batch_norm_switches_on_graph_mode() {
        let mut s = ParamStore::new(1);
        let bn = BatchNorm::new("bn", 2);
        bn.declare(&mut s);
        let x = Tensor::from_fn(&[2, 2, 2], |i| i as f64);
        let mut g = Graph::training();
        let mut cx = Cx::new(&mut g, &s);
        let xv = cx.g.constant(x.clone());
        let y = bn.forward(&mut cx, xv).unwrap();
        assert!(g.value(y).mean().abs() < 1e-12);
        assert_eq!(g.take_buffer_updates().len(), 2);

        let mut g = Graph::new();
        let mut cx = Cx::new(&mut g, &s);
        let xv = cx.g.constant(x.clone());
        let y = bn.forward(&mut cx, xv).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert!((a - b / (1.0f64 + 1e-5).sqrt()).abs() < 1e-12);
        }
    }
}
