//! Modality encoders, the fusion block and task heads.

use matmodal_core::elements::MAX_Z;
use matmodal_core::featurize::FEATURE_LEN;
use matmodal_core::rng::Xoshiro256;
use matmodal_nn::layers::{Conv1d, Dense};
use matmodal_nn::{Init, ParamId, ParamStore, Tape, Var};

use crate::config::{CnnPool, EncoderConfig, MpnnConfig};
use crate::data::{BatchInputs, GraphBatch};
use crate::{ModelError, Result};

fn missing(what: &str) -> ModelError {
    ModelError::Data(format!("batch has no {what} inputs"))
}

/// 1D CNN over a smeared pattern: strided same-padded convolutions with
/// relu, then pooling and a dense projection to `d`.
#[derive(Debug, Clone)]
pub struct XrdCnn {
    convs: Vec<Conv1d>,
    out: Dense,
    pool: CnnPool,
    in_channels: usize,
    n_points: usize,
}

impl XrdCnn {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        n_points: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let c = &cfg.cnn;
        let in_channels = if c.coord_channel { 2 } else { 1 };
        let padding = c.kernel / 2;
        let mut convs = Vec::new();
        let mut cin = in_channels;
        let mut len = n_points;
        for (i, &cout) in c.channels.iter().enumerate() {
            if len + 2 * padding < c.kernel {
                return Err(ModelError::Config(format!(
                    "pattern of {n_points} points too short for {} conv blocks",
                    c.channels.len()
                )));
            }
            convs.push(Conv1d::new(
                store,
                &format!("{prefix}.conv{i}"),
                cin,
                cout,
                c.kernel,
                c.stride,
                padding,
                rng,
            )?);
            len = (len + 2 * padding - c.kernel) / c.stride + 1;
            cin = cout;
        }
        let flat = match c.pool {
            CnnPool::GlobalAvg => cin,
            CnnPool::Flatten => cin * len,
        };
        let out = Dense::new(store, &format!("{prefix}.out"), flat, cfg.d, rng)?;
        Ok(Self {
            convs,
            out,
            pool: c.pool,
            in_channels,
            n_points,
        })
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &BatchInputs) -> Result<Var> {
        let x = inputs.xrd.as_ref().ok_or_else(|| missing("XRD"))?;
        if x.len() != inputs.n * self.in_channels * self.n_points {
            return Err(ModelError::Data(format!(
                "XRD input has {} values, expected {} patterns × {} channels × {} points",
                x.len(),
                inputs.n,
                self.in_channels,
                self.n_points
            )));
        }
        let mut h = tape.constant(vec![inputs.n, self.in_channels, self.n_points], x.clone())?;
        for conv in &self.convs {
            h = conv.forward(tape, h)?;
            h = tape.relu(h);
        }
        let flat = match self.pool {
            CnnPool::GlobalAvg => tape.global_avg_pool(h)?,
            CnnPool::Flatten => {
                let shape = tape.shape(h).to_vec();
                tape.reshape(h, vec![shape[0], shape[1] * shape[2]])?
            }
        };
        Ok(self.out.forward(tape, flat)?)
    }
}

/// Dense relu stack ending in a linear layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        sizes: &[usize],
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(store, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect::<matmodal_nn::Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape, mut h: Var) -> Result<Var> {
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }
}

#[derive(Debug, Clone)]
pub struct CompMlp {
    mlp: Mlp,
}

impl CompMlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let mut sizes = vec![FEATURE_LEN];
        sizes.extend(&cfg.mlp.hidden);
        sizes.push(cfg.d);
        Ok(Self {
            mlp: Mlp::new(store, prefix, &sizes, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &BatchInputs) -> Result<Var> {
        let x = inputs.comp.as_ref().ok_or_else(|| missing("composition"))?;
        let x = tape.constant(vec![inputs.n, FEATURE_LEN], x.clone())?;
        self.mlp.forward(tape, x)
    }
}

/// Gaussian expansion of edge lengths on evenly spaced centres in
/// `[0, cutoff]`, width equal to the centre spacing.
pub fn rbf_expand(distances: &[f64], n_rbf: usize, cutoff: f64) -> Vec<f64> {
    let spacing = if n_rbf > 1 {
        cutoff / (n_rbf - 1) as f64
    } else {
        cutoff
    };
    let inv = 1.0 / (2.0 * spacing * spacing);
    let mut out = Vec::with_capacity(distances.len() * n_rbf);
    for d in distances {
        for k in 0..n_rbf {
            let mu = k as f64 * spacing;
            out.push((-(d - mu) * (d - mu) * inv).exp());
        }
    }
    out
}

/// Distance-only message passing: species embedding, `rounds` residual
/// updates from mean-aggregated edge messages, mean pooling per graph.
#[derive(Debug, Clone)]
pub struct Mpnn {
    embed: ParamId,
    message: Vec<Dense>,
    update: Vec<Dense>,
    out: Dense,
    cfg: MpnnConfig,
}

impl Mpnn {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        let m = &cfg.mpnn;
        let embed = store.add(
            &format!("{prefix}.embed"),
            vec![MAX_Z as usize + 1, m.node_dim],
            Init::Normal { std: 1.0 },
            rng,
        )?;
        let mut message = Vec::new();
        let mut update = Vec::new();
        for r in 0..m.rounds {
            message.push(Dense::new(
                store,
                &format!("{prefix}.msg{r}"),
                2 * m.node_dim + m.n_rbf,
                m.node_dim,
                rng,
            )?);
            update.push(Dense::new(
                store,
                &format!("{prefix}.upd{r}"),
                2 * m.node_dim,
                m.node_dim,
                rng,
            )?);
        }
        let out = Dense::new(store, &format!("{prefix}.out"), m.node_dim, cfg.d, rng)?;
        Ok(Self {
            embed,
            message,
            update,
            out,
            cfg: m.clone(),
        })
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &BatchInputs) -> Result<Var> {
        let g: &GraphBatch = inputs.graph.as_ref().ok_or_else(|| missing("graph"))?;
        let table = tape.param(self.embed);
        let mut h = tape.gather_rows(table, &g.species)?;
        let n_edges = g.src.len();
        let rbf = tape.constant(
            vec![n_edges, self.cfg.n_rbf],
            rbf_expand(&g.distances, self.cfg.n_rbf, self.cfg.cutoff),
        )?;
        for (msg, upd) in self.message.iter().zip(&self.update) {
            let agg = if n_edges > 0 {
                let hs = tape.gather_rows(h, &g.src)?;
                let hd = tape.gather_rows(h, &g.dst)?;
                let m = tape.concat(hd, hs)?;
                let m = tape.concat(m, rbf)?;
                let m = msg.forward(tape, m)?;
                let m = tape.relu(m);
                tape.segment_mean(m, &g.dst, g.n_nodes())?
            } else {
                tape.constant(
                    vec![g.n_nodes(), self.cfg.node_dim],
                    vec![0.0; g.n_nodes() * self.cfg.node_dim],
                )?
            };
            let u = tape.concat(h, agg)?;
            let u = upd.forward(tape, u)?;
            let u = tape.relu(u);
            h = tape.add(h, u)?;
        }
        let pooled = tape.segment_mean(h, &g.node_graph, g.n_graphs)?;
        Ok(self.out.forward(tape, pooled)?)
    }
}

/// Concatenation followed by three dense layers `2d → d → d → d`.
#[derive(Debug, Clone)]
pub struct Fusion {
    mlp: Mlp,
}

impl Fusion {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, prefix, &[2 * d, d, d, d], rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, z1: Var, z2: Var) -> Result<Var> {
        let z = tape.concat(z1, z2)?;
        self.mlp.forward(tape, z)
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }
}

/// `d → hidden → out` with relu in between.
#[derive(Debug, Clone)]
pub struct Head {
    mlp: Mlp,
}

impl Head {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        hidden: usize,
        out: usize,
        rng: &mut Xoshiro256,
    ) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::new(store, prefix, &[d, hidden, out], rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self.mlp.forward(tape, z)
    }
}
