//! Parameterized building blocks. Each layer owns [`ParamId`]s into a
//! shared [`ParamStore`]; parameter names are `{prefix}.{w|b|gamma|beta}`.

use matmodal_core::rng::Xoshiro256;

use crate::{Init, ParamId, ParamStore, Result, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        inp: usize,
        out: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let w = store.add(
            &format!("{prefix}.w"),
            vec![inp, out],
            Init::He { fan_in: inp },
            rng,
        )?;
        let b = store.add(&format!("{prefix}.b"), vec![out], Init::Zeros, rng)?;
        Ok(Self { w, b, inp, out })
    }

    /// Rebinds to parameters already present in `store`.
    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w = store.id(&format!("{prefix}.w"))?;
        let b = store.id(&format!("{prefix}.b"))?;
        let shape = store.get(w).shape();
        Ok(Self {
            w,
            b,
            inp: shape[0],
            out: shape[1],
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.linear(x, w, Some(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let w = store.add(
            &format!("{prefix}.w"),
            vec![cout, cin, kernel],
            Init::He {
                fan_in: cin * kernel,
            },
            rng,
        )?;
        let b = store.add(&format!("{prefix}.b"), vec![cout], Init::Zeros, rng)?;
        Ok(Self {
            w,
            b,
            stride,
            padding,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str, stride: usize, padding: usize) -> Result<Self> {
        Ok(Self {
            w: store.id(&format!("{prefix}.w"))?,
            b: store.id(&format!("{prefix}.b"))?,
            stride,
            padding,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv1d(x, w, Some(b), self.stride, self.padding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let gamma = store.add(
            &format!("{prefix}.gamma"),
            vec![dim],
            Init::Constant(1.0),
            rng,
        )?;
        let beta = store.add(&format!("{prefix}.beta"), vec![dim], Init::Zeros, rng)?;
        Ok(Self {
            gamma,
            beta,
            eps: Self::EPS,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            gamma: store.id(&format!("{prefix}.gamma"))?,
            beta: store.id(&format!("{prefix}.beta"))?,
            eps: Self::EPS,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }
}
