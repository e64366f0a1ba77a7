//! The two-branch network: spatial stems, dilated residual blocks, the
//! all-pairs correlation head and a single-logit classifier.

use aad_autodiff::{
    BatchMoments, BatchNormMode, Conv1dSpec, Graph, Padding, RunningStats, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{dilation, pad_for_causality, Causality, CatcnConfig};
use crate::bundle::{Decision, TrialBundle};
use crate::error::{AadError, Result};
use crate::harness::Decoder;

/// Windows per forward pass during evaluation.
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Eeg,
    Stim,
}

impl Branch {
    fn prefix(self) -> &'static str {
        match self {
            Branch::Eeg => "eeg",
            Branch::Stim => "stim",
        }
    }
}

/// Indices of one block's tensors within the parameter list.
#[derive(Debug, Clone, Copy)]
struct BlockSlots {
    spatial_w: usize,
    spatial_b: usize,
    depth_w: usize,
    depth_b: usize,
    point_w: usize,
    point_b: usize,
    gamma: usize,
    beta: usize,
    dilation: usize,
    causality: Causality,
    /// Index into `CatcnModel::running`.
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    eeg_stem: Option<(usize, usize)>,
    stim_stem: Option<(usize, usize)>,
    classifier: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct CatcnModel {
    pub config: CatcnConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    /// One per block, EEG blocks first.
    pub running: Vec<RunningStats>,
    layout: Layout,
    eeg_blocks: Vec<BlockSlots>,
    stim_blocks: Vec<BlockSlots>,
}

/// Result of one forward pass on a graph.
pub struct ForwardPass {
    /// B×1 logits.
    pub logits: Var,
    /// One leaf per model parameter, aligned with `CatcnModel::params`.
    pub params: Vec<Var>,
    /// Batch moments per block (train mode only), aligned with `running`.
    pub moments: Vec<BatchMoments>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape matches data")
}

struct Builder {
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl Builder {
    fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.params.push(t);
        self.params.len() - 1
    }
}

impl CatcnModel {
    /// Uniform ±(1/fan_in)^½ weights and biases; BN γ = 1, β = 0.
    pub fn new(config: CatcnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
        };
        let (c, cx, cs, k) = (config.c, config.cx, config.cs, config.k);
        let mut stem = |b: &mut Builder, name: &str, cin: usize, cout: usize| {
            let w = b.push(format!("{name}.weight"), uniform(&mut rng, vec![cout, cin, 1], cin));
            let bias = b.push(format!("{name}.bias"), uniform(&mut rng, vec![cout], cin));
            (w, bias)
        };
        let eeg_stem = config.stem.then(|| stem(&mut b, "eeg_stem", c, cx));
        let stim_stem = config.stem.then(|| stem(&mut b, "stim_stem", 1, cs));
        let mut running = Vec::new();
        let mut blocks = |b: &mut Builder, branch: Branch, depth: usize, ch: usize, causality: Causality| {
            (0..depth)
                .map(|n| {
                    let p = format!("{}_block{n}", branch.prefix());
                    let mut conv = |b: &mut Builder, part: &str, shape: Vec<usize>, fan_in: usize| {
                        let w = b.push(format!("{p}.{part}.weight"), uniform(&mut rng, shape, fan_in));
                        let bias = b.push(format!("{p}.{part}.bias"), uniform(&mut rng, vec![ch], fan_in));
                        (w, bias)
                    };
                    let (spatial_w, spatial_b) = conv(b, "spatial", vec![ch, ch, 1], ch);
                    let (depth_w, depth_b) = conv(b, "depthwise", vec![ch, 1, k], k);
                    let (point_w, point_b) = conv(b, "pointwise", vec![ch, ch, 1], ch);
                    let gamma = b.push(format!("{p}.bn.gamma"), Tensor::full(vec![ch], 1.0));
                    let beta = b.push(format!("{p}.bn.beta"), Tensor::zeros(vec![ch]));
                    running.push(RunningStats::new(ch));
                    BlockSlots {
                        spatial_w,
                        spatial_b,
                        depth_w,
                        depth_b,
                        point_w,
                        point_b,
                        gamma,
                        beta,
                        dilation: dilation(n),
                        causality,
                        stats: running.len() - 1,
                    }
                })
                .collect::<Vec<_>>()
        };
        let eeg_blocks = blocks(&mut b, Branch::Eeg, config.nx, cx, config.eeg_causality);
        let stim_blocks = blocks(&mut b, Branch::Stim, config.ns, cs, config.stim_causality);
        let feats = 2 * cx * cs;
        let cw = b.push(
            "classifier.weight".into(),
            uniform(&mut rng, vec![1, feats], feats),
        );
        let cb = b.push("classifier.bias".into(), uniform(&mut rng, vec![1], feats));
        Ok(CatcnModel {
            config,
            names: b.names,
            params: b.params,
            running,
            layout: Layout {
                eeg_stem,
                stim_stem,
                classifier: (cw, cb),
            },
            eeg_blocks,
            stim_blocks,
        })
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Stem weights as Cx rows of C electrode weights.
    pub fn spatial_filters(&self) -> Option<Vec<Vec<f64>>> {
        let (w, _) = self.layout.eeg_stem?;
        let c = self.config.c;
        Some(self.params[w].data().chunks(c).map(<[f64]>::to_vec).collect())
    }

    /// Zero every weight and bias of one block; β stays 0 so the block
    /// reduces to its residual path.
    pub fn zero_block(&mut self, branch: Branch, n: usize) {
        let s = match branch {
            Branch::Eeg => self.eeg_blocks[n],
            Branch::Stim => self.stim_blocks[n],
        };
        for i in [s.spatial_w, s.spatial_b, s.depth_w, s.depth_b, s.point_w, s.point_b, s.beta] {
            self.params[i].data_mut().fill(0.0);
        }
    }

    fn block(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        s: &BlockSlots,
        mode: Mode,
        moments: &mut Vec<(usize, BatchMoments)>,
    ) -> Result<Var> {
        let ch = g.value(x).shape()[1];
        let h = g.conv1d(x, vars[s.spatial_w], Some(vars[s.spatial_b]), Conv1dSpec::default())?;
        let h = g.conv1d(
            h,
            vars[s.depth_w],
            Some(vars[s.depth_b]),
            Conv1dSpec {
                dilation: s.dilation,
                groups: ch,
                padding: pad_for_causality(self.config.k, s.dilation, s.causality),
            },
        )?;
        let h = g.conv1d(h, vars[s.point_w], Some(vars[s.point_b]), Conv1dSpec::default())?;
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval(Some(&self.running[s.stats])),
        };
        let (h, m) = g.batch_norm(h, vars[s.gamma], vars[s.beta], bn_mode)?;
        if let Some(m) = m {
            moments.push((s.stats, m));
        }
        let h = g.elu(h);
        Ok(g.add(x, h)?)
    }

    /// EEG branch alone, B×C×T → B×Cx×T. Registers parameters on `g`.
    pub fn eeg_branch(&self, g: &mut Graph, eeg: Var, mode: Mode) -> Result<(Var, Vec<Var>)> {
        let vars = self.register(g);
        let mut m = Vec::new();
        let e = self.run_eeg(g, &vars, eeg, mode, &mut m)?;
        Ok((e, vars))
    }

    /// Stimulus branch alone, B×1×T → B×Cs×T.
    pub fn stim_branch(&self, g: &mut Graph, env: Var, mode: Mode) -> Result<(Var, Vec<Var>)> {
        let vars = self.register(g);
        let mut m = Vec::new();
        let s = self.run_stim(g, &vars, env, mode, &mut m)?;
        Ok((s, vars))
    }

    fn register(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.param(p.clone())).collect()
    }

    fn run_eeg(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: Mode,
        moments: &mut Vec<(usize, BatchMoments)>,
    ) -> Result<Var> {
        let mut e = match self.layout.eeg_stem {
            Some((w, b)) => g.conv1d(x, vars[w], Some(vars[b]), Conv1dSpec::default())?,
            None => x,
        };
        for s in &self.eeg_blocks {
            e = self.block(g, vars, e, s, mode, moments)?;
        }
        Ok(e)
    }

    fn run_stim(
        &self,
        g: &mut Graph,
        vars: &[Var],
        x: Var,
        mode: Mode,
        moments: &mut Vec<(usize, BatchMoments)>,
    ) -> Result<Var> {
        let mut s = match self.layout.stim_stem {
            Some((w, b)) => g.conv1d(x, vars[w], Some(vars[b]), Conv1dSpec::default())?,
            None => x,
        };
        for blk in &self.stim_blocks {
            s = self.block(g, vars, s, blk, mode, moments)?;
        }
        Ok(s)
    }

    /// Logits for a batch: eeg B×C×T, envelopes B×1×T. Both candidates go
    /// through the shared stimulus path as one 2B batch, so they also share
    /// batch-norm statistics.
    pub fn forward(
        &self,
        g: &mut Graph,
        eeg: &Tensor,
        env_a: &Tensor,
        env_b: &Tensor,
        mode: Mode,
    ) -> Result<ForwardPass> {
        let shape = eeg.shape();
        if shape.len() != 3 || shape[1] != self.config.c {
            return Err(AadError::Contract(format!(
                "expected EEG batch×{}×T, got {shape:?}",
                self.config.c
            )));
        }
        let (batch, t) = (shape[0], shape[2]);
        if t < 2 {
            return Err(AadError::Contract(format!("window of {t} samples; need at least 2")));
        }
        for env in [env_a, env_b] {
            if env.shape() != [batch, 1, t] {
                return Err(AadError::Contract(format!(
                    "envelope shape {:?} does not match EEG {shape:?}",
                    env.shape()
                )));
            }
        }
        let vars = self.register(g);
        let mut moments = Vec::new();
        let x = g.constant(eeg.clone());
        let e = self.run_eeg(g, &vars, x, mode, &mut moments)?;
        let a = g.constant(env_a.clone());
        let b = g.constant(env_b.clone());
        let ab = g.concat_batch(a, b)?;
        let s = self.run_stim(g, &vars, ab, mode, &mut moments)?;
        let sa = g.slice_batch(s, 0, batch)?;
        let sb = g.slice_batch(s, batch, batch)?;
        let ca = g.pearson_pairs(e, sa)?;
        let cb = g.pearson_pairs(e, sb)?;
        let feats = g.concat_features(ca, cb)?;
        let (w, bias) = self.layout.classifier;
        let logits = g.linear(feats, vars[w], Some(vars[bias]))?;
        moments.sort_by_key(|(i, _)| *i);
        Ok(ForwardPass {
            logits,
            params: vars,
            moments: moments.into_iter().map(|(_, m)| m).collect(),
        })
    }

    /// Eval-mode logits as plain numbers.
    pub fn predict(&self, eeg: &Tensor, env_a: &Tensor, env_b: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let fp = self.forward(&mut g, eeg, env_a, env_b, Mode::Eval)?;
        Ok(g.value(fp.logits).data().to_vec())
    }

    pub fn update_running(&mut self, moments: &[BatchMoments]) {
        for (stats, m) in self.running.iter_mut().zip(moments) {
            stats.update(m);
        }
    }

    /// Padding of block `n` in `branch`, for inspection.
    pub fn block_padding(&self, branch: Branch, n: usize) -> Padding {
        let s = match branch {
            Branch::Eeg => self.eeg_blocks[n],
            Branch::Stim => self.stim_blocks[n],
        };
        pad_for_causality(self.config.k, s.dilation, s.causality)
    }
}

/// Stack windows of one trial into (eeg B×C×T, envA B×1×T, envB B×1×T).
pub fn batch_windows(
    trial: &TrialBundle,
    windows: &[(usize, usize, bool)],
) -> (Tensor, Tensor, Tensor) {
    let refs: Vec<(&TrialBundle, usize, usize, bool)> =
        windows.iter().map(|&(s, l, sw)| (trial, s, l, sw)).collect();
    batch_from(&refs)
}

/// Stack (trial, start, len, swapped) windows of equal length.
pub fn batch_from(windows: &[(&TrialBundle, usize, usize, bool)]) -> (Tensor, Tensor, Tensor) {
    let b = windows.len();
    let c = windows[0].0.n_channels();
    let t = windows[0].2;
    let mut eeg = Vec::with_capacity(b * c * t);
    let mut ea = Vec::with_capacity(b * t);
    let mut eb = Vec::with_capacity(b * t);
    for &(trial, start, len, swapped) in windows {
        debug_assert_eq!(len, t);
        for ch in 0..c {
            eeg.extend_from_slice(&trial.eeg.column(ch).as_slice()[start..start + len]);
        }
        let (a, bb) = (&trial.env_a[start..start + len], &trial.env_b[start..start + len]);
        let (a, bb) = if swapped { (bb, a) } else { (a, bb) };
        ea.extend_from_slice(a);
        eb.extend_from_slice(bb);
    }
    (
        Tensor::new(vec![b, c, t], eeg).expect("sizes agree"),
        Tensor::new(vec![b, 1, t], ea).expect("sizes agree"),
        Tensor::new(vec![b, 1, t], eb).expect("sizes agree"),
    )
}

impl Decoder for CatcnModel {
    fn name(&self) -> String {
        "catcn".into()
    }

    /// Each window is processed on its own, zero-padded at its edges.
    fn decide(&self, trial: &TrialBundle, windows: &[(usize, usize)]) -> Result<Vec<Decision>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EVAL_BATCH) {
            let w: Vec<(usize, usize, bool)> = chunk.iter().map(|&(s, l)| (s, l, false)).collect();
            let (eeg, a, b) = batch_windows(trial, &w);
            out.extend(self.predict(&eeg, &a, &b)?.into_iter().map(Decision::from_score));
        }
        Ok(out)
    }
}
