//! Two-stage training: a reconstruction-only network, then a second network
//! trained with perceptual and adversarial losses on top of the frozen
//! first-stage features.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{arg_err, Error, Result};
use crate::harness::checkpoint::{Model, ModelCheckpoint};
use crate::harness::config::TrainConfig;
use crate::harness::data::{shuffle_patches, stack_pairs, Augment, SamplePair};
use crate::losses::{l_adv, l_disc, l_per, l_rec, l_total, l_total_var, ConvPyramid, Discriminator, LossParts, LossWeights};
use crate::network::{prepare, reuse_features, Frozen, Generator, Prepared, Stage};
use crate::par;
use crate::params::{Adam, ParamStore};
use crate::tensor::Tensor;

/// One optimizer step's losses.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub stage: &'static str,
    pub step: usize,
    pub parts: LossParts,
    pub total: f64,
    /// Critic loss and its gradient penalty (second stage only).
    pub disc: Option<(f64, f64)>,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.parts;
        write!(f, "{}\t{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}", self.stage, self.step, p.rec, p.per, p.adv, self.total)?;
        match self.disc {
            Some((d, gp)) => write!(f, "\t{d:.9e}\t{gp:.9e}"),
            None => write!(f, "\t-\t-"),
        }
    }
}

pub const LOG_HEADER: &str = "stage\tstep\trec\tper\tadv\ttotal\tdisc\tgp";

pub fn format_log(records: &[LogRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_string());
        s.push('\n');
    }
    s
}

/// A prepared training batch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub hr: Tensor,
    pub prep: Prepared,
}

/// Diagnostics of one second-stage generator step.
#[derive(Clone, Debug)]
pub struct Stage2Report {
    pub record: LogRecord,
    /// Largest gradient magnitude that reached a reuse tensor.
    pub reuse_grad_max: f64,
    /// Largest gradient magnitude that reached a first-stage parameter.
    pub net1_grad_max: f64,
}

fn grad_max(grads: &crate::autograd::Gradients, vars: impl Iterator<Item = Var>) -> f64 {
    vars.filter_map(|v| grads.get(v)).flat_map(|t| t.data().iter().map(|x| x.abs())).fold(0.0, f64::max)
}

fn check_finite(stage: &'static str, step: usize, parts: LossParts, w: LossWeights) -> Result<f64> {
    l_total(parts, w).map_err(|_| Error::NonFiniteLoss { stage, step, breakdown: parts.to_string() })
}

/// Owns every piece of mutable training state.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub frozen: Frozen,
    pub net1: Model,
    pub net2: Model,
    pub disc: Discriminator,
    pub disc_params: ParamStore,
    phi: ConvPyramid,
    adam1: Adam,
    adam2: Adam,
    adam_d: Adam,
    rng: ChaCha8Rng,
    pub log: Vec<LogRecord>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (n1, p1) = Generator::new(&cfg.net, Stage::Rec, seeds.random())?;
        let (n2, p2) = Generator::new(&cfg.net, Stage::All { reuse: cfg.frf }, seeds.random())?;
        let (disc, disc_params) = Discriminator::build(&cfg.disc_widths, seeds.random())?;
        let phi = ConvPyramid::new(&cfg.perceptual_widths, seeds.random())?;
        let rng = ChaCha8Rng::seed_from_u64(seeds.random());
        Ok(Trainer {
            frozen: Frozen::new(&cfg.net)?,
            net1: Model { net: n1, params: p1 },
            net2: Model { net: n2, params: p2 },
            disc,
            disc_params,
            phi,
            adam1: Adam::new(cfg.adam),
            adam2: Adam::new(cfg.adam),
            adam_d: Adam::new(cfg.adam),
            rng,
            log: Vec::new(),
            cfg,
        })
    }

    /// Draw a batch with replacement, augment it and shuffle the references.
    pub fn sample_batch(&mut self, data: &[SamplePair]) -> Result<Batch> {
        if data.is_empty() {
            return Err(arg_err("train", "empty dataset"));
        }
        let mut picked = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let mut p = data[self.rng.random_range(0..data.len())].clone();
            if self.cfg.augment {
                p = Augment::random(&mut self.rng).apply_pair(&p);
            }
            p.reference = shuffle_patches(&p.reference, self.cfg.shuffle, &mut self.rng)?;
            picked.push(p);
        }
        let (hr, lr, rf) = stack_pairs(&picked.iter().collect::<Vec<_>>())?;
        Ok(Batch { prep: prepare(&self.frozen, &lr, &rf)?, hr })
    }

    pub fn stage1_step(&mut self, batch: &Batch) -> Result<LogRecord> {
        let step = self.adam1.steps() as usize;
        let mut g = Graph::new();
        let b = self.net1.params.bind(&mut g, true);
        let out = self.net1.net.forward(&mut g, &b, &batch.prep, None)?;
        let hr = g.constant(batch.hr.clone());
        let rec = l_rec(&mut g, hr, out.i_sr)?;
        let parts = LossParts { rec: g.value(rec).data()[0], per: 0.0, adv: 0.0 };
        let total = check_finite("rec", step, parts, LossWeights::REC_ONLY)?;
        let grads = g.backward(rec)?;
        self.adam1.step(&mut self.net1.params, &b, &grads)?;
        let record = LogRecord { stage: "rec", step, parts, total, disc: None };
        self.log.push(record.clone());
        Ok(record)
    }

    /// One generator step followed by one critic step. The first-stage
    /// network runs on the same tape with trainable leaves, but its outputs
    /// are detached before entering the second stage and it is never updated.
    pub fn stage2_step(&mut self, batch: &Batch) -> Result<Stage2Report> {
        let step = self.adam2.steps() as usize;
        let w = self.cfg.weights;
        let mut g = Graph::new();
        let b1 = self.net1.params.bind(&mut g, true);
        let reuse = if self.net2.net.expects_reuse() {
            let out1 = self.net1.net.forward(&mut g, &b1, &batch.prep, None)?;
            Some(reuse_features(&mut g, &out1, self.cfg.net.reuse_mode)?)
        } else {
            None
        };
        let b2 = self.net2.params.bind(&mut g, true);
        let bd = self.disc_params.bind(&mut g, false);
        let out = self.net2.net.forward(&mut g, &b2, &batch.prep, reuse.as_deref())?;
        let hr = g.constant(batch.hr.clone());
        let rec = l_rec(&mut g, hr, out.i_sr)?;
        let per = l_per(&mut g, hr, out.i_sr, &self.phi)?;
        let adv = l_adv(&mut g, &bd, out.i_sr, &self.disc)?;
        let parts = LossParts { rec: g.value(rec).data()[0], per: g.value(per).data()[0], adv: g.value(adv).data()[0] };
        let total_v = check_finite("all", step, parts, w)?;
        let total = l_total_var(&mut g, rec, Some(per), Some(adv), w)?;
        let grads = g.backward(total)?;
        let reuse_grad_max = grad_max(&grads, reuse.iter().flatten().copied());
        let net1_grad_max = grad_max(&grads, self.net1.params.names().map(|n| b1.var(n)).collect::<Result<Vec<_>>>()?.into_iter());
        self.adam2.step(&mut self.net2.params, &b2, &grads)?;

        let sr = g.value(out.i_sr).clone();
        let mut gd = Graph::new();
        let bd = self.disc_params.bind(&mut gd, true);
        let sr = gd.constant(sr);
        let hr = gd.constant(batch.hr.clone());
        let dl = l_disc(&mut gd, &bd, sr, hr, &self.disc, self.cfg.lambda_gp, &mut self.rng)?;
        let (d, gp) = (gd.value(dl.total).data()[0], gd.value(dl.penalty).data()[0]);
        if !d.is_finite() {
            return Err(Error::NonFiniteLoss { stage: "disc", step, breakdown: format!("{parts} disc={d} gp={gp}") });
        }
        let dgrads = gd.backward(dl.total)?;
        self.adam_d.step(&mut self.disc_params, &bd, &dgrads)?;

        let record = LogRecord { stage: "all", step, parts, total: total_v, disc: Some((d, gp)) };
        self.log.push(record.clone());
        Ok(Stage2Report { record, reuse_grad_max, net1_grad_max })
    }

    /// Mean first-stage reconstruction loss over `data`, without augmentation
    /// or shuffling.
    pub fn rec_loss(&self, data: &[SamplePair]) -> Result<f64> {
        let losses = par::map_slice(data, |p| -> Result<f64> {
            let prep = prepare(&self.frozen, &p.lr, &p.reference)?;
            let mut g = Graph::new();
            let b = self.net1.params.bind(&mut g, false);
            let out = self.net1.net.forward(&mut g, &b, &prep, None)?;
            let hr = g.constant(p.hr.clone());
            let rec = l_rec(&mut g, hr, out.i_sr)?;
            Ok(g.value(rec).data()[0])
        });
        let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
    }

    pub fn run_stage1(&mut self, data: &[SamplePair], steps: usize) -> Result<()> {
        for _ in 0..steps {
            let batch = self.sample_batch(data)?;
            self.stage1_step(&batch)?;
        }
        Ok(())
    }

    pub fn run_stage2(&mut self, data: &[SamplePair], steps: usize) -> Result<()> {
        for _ in 0..steps {
            let batch = self.sample_batch(data)?;
            self.stage2_step(&batch)?;
        }
        Ok(())
    }

    pub fn rec_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { rec: self.net1.clone(), all: None, disc: None }
    }

    pub fn all_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint { rec: self.net1.clone(), all: Some(self.net2.clone()), disc: Some(self.disc_params.clone()) }
    }
}

/// Result of [`train_two_stage`].
pub struct TrainOutput {
    pub ckpt_rec: ModelCheckpoint,
    pub ckpt_all: ModelCheckpoint,
    pub log: Vec<LogRecord>,
}

pub fn train_two_stage(data: &[SamplePair], cfg: &TrainConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(cfg.clone())?;
    t.run_stage1(data, cfg.steps_rec)?;
    let ckpt_rec = t.rec_checkpoint();
    t.run_stage2(data, cfg.steps_all)?;
    Ok(TrainOutput { ckpt_rec, ckpt_all: t.all_checkpoint(), log: t.log })
}
