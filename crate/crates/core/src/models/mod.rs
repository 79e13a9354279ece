//! Architecture builders and the row executor they share.
//!
//! A [`Model`] is a list of [`Row`]s, one per line of an architecture
//! table. Each row holds the layer itself followed by its post-operations
//! (normalization, activation), plus slot operations for skip connections,
//! residual adds and the progressive fade-in blend. Parameters live in a
//! named [`ParamStore`] so they can be copied across growth stages and
//! written to checkpoints by name.

mod arch;
mod dcgan;
mod progan;
mod srresgan;
mod unet;

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::layers::{self, Activation, Mode, Padding, PoolKind};
use crate::optim::{init_weights, InitScheme};
use crate::tensor::{Real, Tensor};
use crate::Rng;

pub use arch::{ArchConfig, Built};
pub use dcgan::{build_dcgan, DcganConfig};
pub use progan::{build_progan, progan_ladder, Phase, ProganConfig, ProganStage};
pub use srresgan::{build_srresgan, SrresganConfig};
pub use unet::{build_unet, unet_layout, UnetConfig};

/// Output head of a discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Sigmoid,
    Linear,
}

impl Head {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sigmoid" => Some(Self::Sigmoid),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Linear => "linear",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Dense {
        name: String,
        in_f: usize,
        out_f: usize,
        scale: Option<f64>,
    },
    Conv {
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        scale: Option<f64>,
    },
    ConvTranspose {
        name: String,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        scale: Option<f64>,
    },
    Pool(PoolKind),
    Upsample,
    BatchNorm {
        name: String,
        channels: usize,
    },
    PixelNorm,
    PixelShuffle(usize),
    MinibatchStd,
    Act(Activation),
    Dropout(f64),
    /// Per-sample target shape.
    Reshape(Vec<usize>),
    Flatten,
    Save(usize),
    Restore(usize),
    /// Channel concatenation `[current, saved]`.
    Concat(usize),
    AddSaved(usize),
    /// Fade-in: `α·new + (1 - α)·old`, with the saved slot holding the new
    /// path when `saved_is_new`.
    Blend {
        slot: usize,
        saved_is_new: bool,
    },
}

/// Repetition marker used to collapse repeated blocks in table dumps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Repeat {
    pub tag: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub label: String,
    pub act: String,
    pub steps: Vec<Step>,
    pub repeat: Option<Repeat>,
}

impl Row {
    pub fn new(label: impl Into<String>, act: impl Into<String>, steps: Vec<Step>) -> Self {
        Self {
            label: label.into(),
            act: act.into(),
            steps,
            repeat: None,
        }
    }

    fn repeated(mut self, tag: &str, index: usize) -> Self {
        self.repeat = Some(Repeat {
            tag: tag.into(),
            index,
        });
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor<f32>,
    pub trainable: bool,
}

/// Ordered, name-addressed parameter registry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<f32>, trainable: bool) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => {
                self.params[i].tensor = tensor;
                self.params[i].trainable = trainable;
            }
            None => {
                self.index.insert(name.clone(), self.params.len());
                self.params.push(Param {
                    name,
                    tensor,
                    trainable,
                });
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.index.get(name).map(|&i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.index.get(name).map(|&i| &mut self.params[i].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<f32>)> {
        self.params
            .iter_mut()
            .filter(|p| p.trainable)
            .map(|p| (p.name.as_str(), &mut p.tensor))
    }

    pub fn trainable_tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<f32>> {
        self.trainable_mut().map(|(_, t)| t)
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// `(total, trainable)` element counts.
    pub fn count(&self) -> (u64, u64) {
        let total = self.params.iter().map(|p| p.tensor.len() as u64).sum();
        let trainable = self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len() as u64).sum();
        (total, trainable)
    }

    pub fn max_abs_trainable(&self) -> f64 {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.max_abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.all_finite())
    }
}

/// Parameters of one model recorded on a tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Layer {
            layer: name.into(),
            detail: "parameter missing from the bound set".into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Batch statistics produced by a train-mode forward pass.
#[derive(Clone, Debug, Default)]
pub struct Forward {
    pub out: Option<Var>,
    pub stats: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl Forward {
    pub fn out(&self) -> Var {
        self.out.expect("forward produced an output")
    }
}

/// One row of a symbolic shape walk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowShape {
    pub label: String,
    pub act: String,
    pub shape: Vec<usize>,
    pub repeat: Option<Repeat>,
}

impl RowShape {
    /// Per-sample shape as printed in the tables: `C × H × W`, with flat
    /// vectors shown as `F × 1 × 1`.
    pub fn shape_text(&self) -> String {
        let dims: Vec<usize> = if self.shape.len() == 1 {
            vec![self.shape[0], 1, 1]
        } else {
            self.shape.clone()
        };
        dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" × ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeclInit {
    Weight { n_filters: usize, fan_in: usize },
    Const(f32),
}

/// A parameter implied by the rows, before any storage exists.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: DeclInit,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub id: String,
    /// Per-sample input shape.
    pub input_shape: Vec<usize>,
    pub rows: Vec<Row>,
    pub params: ParamStore,
    /// Fade-in weight used by [`Step::Blend`].
    pub alpha: f64,
}

pub(crate) fn conv_row(
    name: &str,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    scale: Option<f64>,
) -> Step {
    Step::Conv {
        name: name.into(),
        in_c,
        out_c,
        k,
        stride,
        padding: Padding::Same,
        scale,
    }
}

impl Model {
    pub fn new(id: impl Into<String>, input_shape: Vec<usize>) -> Self {
        Self {
            id: id.into(),
            input_shape,
            rows: Vec::new(),
            params: ParamStore::default(),
            alpha: 1.0,
        }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    /// Every parameter the rows reference, in creation order.
    pub fn declared(&self) -> Vec<ParamDecl> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>, init: DeclInit, trainable: bool| {
            out.push(ParamDecl {
                name,
                shape,
                init,
                trainable,
            })
        };
        for row in &self.rows {
            for step in &row.steps {
                match step {
                    Step::Dense { name, in_f, out_f, .. } => {
                        push(format!("{name}.w"), vec![*out_f, *in_f], DeclInit::Weight { n_filters: *out_f, fan_in: *in_f }, true);
                        push(format!("{name}.b"), vec![*out_f], DeclInit::Const(0.0), true);
                    }
                    Step::Conv { name, in_c, out_c, k, .. } => {
                        let init = DeclInit::Weight { n_filters: *out_c, fan_in: in_c * k * k };
                        push(format!("{name}.w"), vec![*out_c, *in_c, *k, *k], init, true);
                        push(format!("{name}.b"), vec![*out_c], DeclInit::Const(0.0), true);
                    }
                    Step::ConvTranspose { name, in_c, out_c, k, .. } => {
                        let init = DeclInit::Weight { n_filters: *out_c, fan_in: in_c * k * k };
                        push(format!("{name}.w"), vec![*in_c, *out_c, *k, *k], init, true);
                        push(format!("{name}.b"), vec![*out_c], DeclInit::Const(0.0), true);
                    }
                    Step::BatchNorm { name, channels } => {
                        let c = vec![*channels];
                        push(format!("{name}.gamma"), c.clone(), DeclInit::Const(1.0), true);
                        push(format!("{name}.beta"), c.clone(), DeclInit::Const(0.0), true);
                        push(format!("{name}.moving_mean"), c.clone(), DeclInit::Const(0.0), false);
                        push(format!("{name}.moving_var"), c, DeclInit::Const(1.0), false);
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// `(total, trainable)` counts computed from the rows alone.
    pub fn declared_params(&self) -> (u64, u64) {
        let decl = self.declared();
        let n = |d: &ParamDecl| d.shape.iter().product::<usize>() as u64;
        (
            decl.iter().map(n).sum(),
            decl.iter().filter(|d| d.trainable).map(n).sum(),
        )
    }

    /// Creates every parameter referenced by the rows.
    pub(crate) fn init_params(&mut self, scheme: InitScheme, rng: &mut Rng) {
        let mut store = ParamStore::default();
        for d in self.declared() {
            let t = match d.init {
                DeclInit::Weight { n_filters, fan_in } => init_weights(&d.shape, scheme, n_filters, fan_in, rng),
                DeclInit::Const(v) => Tensor::full(d.shape, v),
            };
            store.insert(d.name, t, d.trainable);
        }
        self.params = store;
    }

    /// `(total, trainable)` parameter counts; BN moving statistics count
    /// towards the total only.
    pub fn count_params(&self) -> (u64, u64) {
        self.params.count()
    }

    /// Copies every parameter of `other` whose name and shape match.
    /// Returns the number of tensors adopted.
    pub fn adopt_params(&mut self, other: &Model) -> usize {
        let mut n = 0;
        for p in other.params.iter() {
            if let Some(mine) = self.params.get_mut(&p.name) {
                if mine.shape() == p.tensor.shape() {
                    *mine = p.tensor.clone();
                    mine.zero_grad();
                    n += 1;
                }
            }
        }
        n
    }

    /// Records the parameters on `tape`; trainable ones become variables
    /// when `with_grad` is set, everything else a constant.
    pub fn bind<T: Real>(&self, tape: &mut Tape<T>, with_grad: bool) -> Bound {
        let mut vars = HashMap::new();
        for p in self.params.iter() {
            if p.name.ends_with(".moving_mean") || p.name.ends_with(".moving_var") {
                continue;
            }
            let t: Tensor<T> = p.tensor.cast();
            let v = if with_grad && p.trainable {
                tape.variable(t)
            } else {
                tape.constant(t)
            };
            vars.insert(p.name.clone(), v);
        }
        Bound { vars }
    }

    /// Adds first-order gradients from a backward pass into the
    /// parameters' gradient slots.
    pub fn accumulate_grads<T: Real>(&mut self, bound: &Bound, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in bound.iter() {
            if let Some(g) = grads.get(var) {
                let g32: Vec<f32> = g.iter().map(|x| x.as_f64() as f32).collect();
                if let Some(p) = self.params.get_mut(name) {
                    p.accumulate_grad(&g32)?;
                }
            }
        }
        Ok(())
    }

    /// Folds train-mode batch statistics into the moving averages.
    pub fn commit_stats(&mut self, fwd: &Forward) {
        for (name, mean, var) in &fwd.stats {
            if let Some(m) = self.params.get_mut(&format!("{name}.moving_mean")) {
                layers::update_moving(m.data_mut(), mean);
            }
            if let Some(v) = self.params.get_mut(&format!("{name}.moving_var")) {
                layers::update_moving(v.data_mut(), var);
            }
        }
    }

    fn weight<T: Real>(tape: &mut Tape<T>, bound: &Bound, name: &str, scale: Option<f64>) -> Result<Var> {
        let w = bound.get(&format!("{name}.w"))?;
        Ok(match scale {
            Some(s) => tape.scale(w, s),
            None => w,
        })
    }

    fn run_step<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        step: &Step,
        cur: Var,
        slots: &mut HashMap<usize, Var>,
        mode: Mode,
        rng: &mut Rng,
        fwd: &mut Forward,
    ) -> Result<Var> {
        let slot = |slots: &HashMap<usize, Var>, s: usize| {
            slots.get(&s).copied().ok_or_else(|| Error::InvalidArgument(format!("slot {s} read before it was saved")))
        };
        Ok(match step {
            Step::Dense { name, scale, .. } => {
                let w = Self::weight(tape, bound, name, *scale)?;
                let b = bound.get(&format!("{name}.b"))?;
                layers::dense(tape, cur, w, Some(b))?
            }
            Step::Conv {
                name,
                stride,
                padding,
                scale,
                ..
            } => {
                let w = Self::weight(tape, bound, name, *scale)?;
                let b = bound.get(&format!("{name}.b"))?;
                layers::conv2d(tape, cur, w, Some(b), *stride, *padding)?
            }
            Step::ConvTranspose {
                name,
                stride,
                padding,
                scale,
                ..
            } => {
                let w = Self::weight(tape, bound, name, *scale)?;
                let b = bound.get(&format!("{name}.b"))?;
                layers::conv_transpose2d(tape, cur, w, Some(b), *stride, *padding)?
            }
            Step::Pool(kind) => layers::pool2d(tape, *kind, cur)?,
            Step::Upsample => layers::upsample_nearest(tape, cur, 2)?,
            Step::BatchNorm { name, .. } => {
                let g = bound.get(&format!("{name}.gamma"))?;
                let b = bound.get(&format!("{name}.beta"))?;
                let mm = self.params.get(&format!("{name}.moving_mean")).map(|t| t.data()).unwrap_or(&[]);
                let mv = self.params.get(&format!("{name}.moving_var")).map(|t| t.data()).unwrap_or(&[]);
                let out = layers::batchnorm(tape, cur, g, b, mm, mv, mode)?;
                if let (Some(m), Some(v)) = (out.batch_mean, out.batch_var) {
                    fwd.stats.push((name.clone(), m, v));
                }
                out.y
            }
            Step::PixelNorm => layers::pixelnorm(tape, cur)?,
            Step::PixelShuffle(r) => layers::pixelshuffle(tape, cur, *r)?,
            Step::MinibatchStd => layers::minibatch_stddev(tape, cur)?,
            Step::Act(a) => layers::activation(tape, *a, cur),
            Step::Dropout(rate) => layers::dropout(tape, cur, *rate, mode, rng)?,
            Step::Reshape(shape) => {
                let mut full = vec![tape.shape(cur)[0]];
                full.extend_from_slice(shape);
                tape.reshape(cur, &full)?
            }
            Step::Flatten => {
                let s = tape.shape(cur).to_vec();
                tape.reshape(cur, &[s[0], s[1..].iter().product()])?
            }
            Step::Save(s) => {
                slots.insert(*s, cur);
                cur
            }
            Step::Restore(s) => slot(slots, *s)?,
            Step::Concat(s) => {
                let saved = slot(slots, *s)?;
                tape.concat(&[cur, saved], 1)?
            }
            Step::AddSaved(s) => {
                let saved = slot(slots, *s)?;
                tape.add(cur, saved)?
            }
            Step::Blend { slot: s, saved_is_new } => {
                let saved = slot(slots, *s)?;
                let (new, old) = if *saved_is_new { (saved, cur) } else { (cur, saved) };
                if self.alpha == 1.0 {
                    new
                } else if self.alpha == 0.0 {
                    old
                } else {
                    let a = tape.scale(new, self.alpha);
                    let b = tape.scale(old, 1.0 - self.alpha);
                    tape.add(a, b)?
                }
            }
        })
    }

    /// Runs the model on `x` (batch first). Train mode returns the batch
    /// statistics for [`Model::commit_stats`].
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Forward> {
        let mut want = vec![tape.shape(x).first().copied().unwrap_or(0)];
        want.extend_from_slice(&self.input_shape);
        if tape.shape(x) != want.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: tape.shape(x).to_vec(),
                rhs: want,
            });
        }
        let mut fwd = Forward::default();
        let mut slots = HashMap::new();
        let mut cur = x;
        for (i, row) in self.rows.iter().enumerate() {
            for step in &row.steps {
                cur = self
                    .run_step(tape, bound, step, cur, &mut slots, mode, rng, &mut fwd)
                    .map_err(|e| match e {
                        Error::NonFinite { .. } => e,
                        other => Error::Layer {
                            layer: format!("{} row {i} ({})", self.id, row.label),
                            detail: other.to_string(),
                        },
                    })?;
            }
        }
        fwd.out = Some(cur);
        Ok(fwd)
    }

    /// Convenience forward pass in eval mode on an `f32` batch, returning
    /// the output tensor.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let mut rng = <Rng as rand::SeedableRng>::seed_from_u64(0);
        let fwd = self.forward(&mut tape, &bound, xv, Mode::Eval, &mut rng)?;
        Ok(tape.value(fwd.out()).clone())
    }

    /// Symbolic per-sample shape walk, one entry per row, without touching
    /// any tensor data.
    pub fn forward_shapes(&self, input: &[usize]) -> Result<Vec<RowShape>> {
        let mut cur = input.to_vec();
        let mut slots: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut out = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            for step in &row.steps {
                cur = step_shape(step, &cur, &mut slots).map_err(|detail| Error::Layer {
                    layer: format!("{} row {i} ({})", self.id, row.label),
                    detail,
                })?;
            }
            out.push(RowShape {
                label: row.label.clone(),
                act: row.act.clone(),
                shape: cur.clone(),
                repeat: row.repeat.clone(),
            });
        }
        Ok(out)
    }

    /// Table rows as printed in the architecture tables: repeated blocks
    /// appear once.
    pub fn table_rows(&self) -> Result<Vec<RowShape>> {
        Ok(self
            .forward_shapes(&self.input_shape)?
            .into_iter()
            .filter(|r| r.repeat.as_ref().is_none_or(|rep| rep.index == 0))
            .collect())
    }

    /// Human-readable topology: `layer | activation | C × H × W`.
    pub fn dump(&self) -> Result<String> {
        let rows = self.table_rows()?;
        let w0 = rows.iter().map(|r| r.label.chars().count() + r.repeat.as_ref().map_or(0, |x| x.tag.chars().count() + 1)).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.act.chars().count()).max().unwrap_or(0);
        let mut s = String::new();
        for r in rows {
            let label = match &r.repeat {
                Some(rep) => format!("{} {}", rep.tag, r.label),
                None => r.label.clone(),
            };
            let pad0 = w0 - label.chars().count();
            let pad1 = w1 - r.act.chars().count();
            let _ = writeln!(
                s,
                "{label}{} | {}{} | {}",
                " ".repeat(pad0),
                r.act,
                " ".repeat(pad1),
                r.shape_text()
            );
        }
        Ok(s)
    }
}

fn step_shape(step: &Step, cur: &[usize], slots: &mut HashMap<usize, Vec<usize>>) -> std::result::Result<Vec<usize>, String> {
    let need_chw = |what: &str| -> std::result::Result<(usize, usize, usize), String> {
        if cur.len() != 3 {
            return Err(format!("{what} needs a C×H×W input, got {cur:?}"));
        }
        Ok((cur[0], cur[1], cur[2]))
    };
    let saved = |slots: &HashMap<usize, Vec<usize>>, s: usize| slots.get(&s).cloned().ok_or(format!("slot {s} read before it was saved"));
    Ok(match step {
        Step::Dense { in_f, out_f, .. } => {
            if cur != [*in_f] {
                return Err(format!("dense expects [{in_f}], got {cur:?}"));
            }
            vec![*out_f]
        }
        Step::Conv {
            in_c,
            out_c,
            k,
            stride,
            padding,
            ..
        } => {
            let (c, h, w) = need_chw("conv")?;
            if c != *in_c {
                return Err(format!("conv expects {in_c} channels, got {c}"));
            }
            let g = layers::conv_geom(*in_c, *out_c, *k, *stride, *padding, h, w).map_err(|e| e.to_string())?;
            vec![*out_c, g.out_h, g.out_w]
        }
        Step::ConvTranspose {
            in_c,
            out_c,
            k,
            stride,
            padding,
            ..
        } => {
            let (c, h, w) = need_chw("conv transpose")?;
            if c != *in_c {
                return Err(format!("conv transpose expects {in_c} channels, got {c}"));
            }
            vec![
                *out_c,
                layers::conv_transpose_extent(h, *k, *stride, *padding),
                layers::conv_transpose_extent(w, *k, *stride, *padding),
            ]
        }
        Step::Pool(_) => {
            let (c, h, w) = need_chw("pool")?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(format!("odd spatial extent {h}x{w}"));
            }
            vec![c, h / 2, w / 2]
        }
        Step::Upsample => {
            let (c, h, w) = need_chw("upsample")?;
            vec![c, 2 * h, 2 * w]
        }
        Step::BatchNorm { channels, .. } => {
            if cur.first() != Some(channels) {
                return Err(format!("batchnorm over {channels} channels, got {cur:?}"));
            }
            cur.to_vec()
        }
        Step::PixelNorm | Step::Act(_) | Step::Dropout(_) => cur.to_vec(),
        Step::PixelShuffle(r) => {
            let (c, h, w) = need_chw("pixelshuffle")?;
            if c % (r * r) != 0 {
                return Err(format!("{c} channels not divisible by {}", r * r));
            }
            vec![c / (r * r), h * r, w * r]
        }
        Step::MinibatchStd => {
            let (c, h, w) = need_chw("minibatch std")?;
            vec![c + 1, h, w]
        }
        Step::Reshape(shape) => {
            if shape.iter().product::<usize>() != cur.iter().product::<usize>() {
                return Err(format!("cannot reshape {cur:?} to {shape:?}"));
            }
            shape.clone()
        }
        Step::Flatten => vec![cur.iter().product()],
        Step::Save(s) => {
            slots.insert(*s, cur.to_vec());
            cur.to_vec()
        }
        Step::Restore(s) => saved(slots, *s)?,
        Step::Concat(s) => {
            let other = saved(slots, *s)?;
            if other.len() != cur.len() || other[1..] != cur[1..] {
                return Err(format!("cannot concatenate {cur:?} with {other:?}"));
            }
            let mut out = cur.to_vec();
            out[0] += other[0];
            out
        }
        Step::AddSaved(s) | Step::Blend { slot: s, .. } => {
            let other = saved(slots, *s)?;
            if other != cur {
                return Err(format!("cannot combine {cur:?} with {other:?}"));
            }
            cur.to_vec()
        }
    })
}

pub(crate) fn is_pow2(x: usize) -> bool {
    x > 0 && x & (x - 1) == 0
}

pub(crate) fn log2(x: usize) -> usize {
    x.trailing_zeros() as usize
}
