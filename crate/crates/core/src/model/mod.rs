//! Model zoo: ScaleNet with bidirectional aggregation blocks, constant-weight
//! inception variants and baselines.
//!
//! Every family is expressed as the same layer skeleton. A layer holds a list
//! of *blocks*; each block owns one weight `W` and aggregates `X·W` through
//! one or more normalized matrices with fixed coefficients. Block outputs are
//! fused by COMB1, then bias, optional batch normalization, ReLU and dropout
//! follow. Layer outputs are fused by COMB2 and mapped to class logits.

mod config;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dense::Matrix;
use crate::graphdata::DirectedGraph;
use crate::scales::{self, Combine, ScaleError, ScaleSet};
use crate::sparse::{self, SelfLoopMode, SparseError, SparseMatrix};
use crate::tensor::{glorot_uniform, BatchNormState, Tape, TensorError, Var};

pub use config::{Comb1, Comb2, Family, ModelConfig, DIRECTION_VALUES};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("alpha, beta and gamma are all -1: every block is excluded")]
    AllBlocksExcluded,
    #[error("expected {expected} parameter matrices, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("parameter {index} has shape {found:?}, expected {expected:?}")]
    ParamShape {
        index: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Coefficients `(c_M, c_N)` of the bidirectional blend for `alpha`:
/// `(1+α)·α` and `(1+α)·(1−α)`. `None` for the set modes `α = 2` (union)
/// and `α = 3` (intersection).
pub fn agg_b_coefficients(alpha: f64) -> Option<(f64, f64)> {
    if alpha == 2.0 || alpha == 3.0 {
        None
    } else {
        Some(((1.0 + alpha) * alpha, (1.0 + alpha) * (1.0 - alpha)))
    }
}

/// One propagation term of a block: `coef · S · (X W)`, or `coef · X W` when
/// there is no matrix.
#[derive(Clone, Debug)]
pub struct Term {
    pub coef: f64,
    pub matrix: Option<Arc<SparseMatrix>>,
}

/// A block's aggregation terms together with the unnormalized supports they
/// were built from.
#[derive(Clone, Debug)]
pub struct BlockPlan {
    pub terms: Vec<Term>,
    pub supports: Vec<SparseMatrix>,
}

fn normalized(s: &SparseMatrix) -> Result<Arc<SparseMatrix>> {
    Ok(Arc::new(sparse::sym_normalize(s, SelfLoopMode::Keep)?))
}

impl BlockPlan {
    /// Unit-coefficient aggregation over each of `supports`.
    pub fn single(supports: Vec<SparseMatrix>) -> Result<Self> {
        let terms = supports
            .iter()
            .map(|s| {
                Ok(Term {
                    coef: 1.0,
                    matrix: Some(normalized(s)?),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { terms, supports })
    }

    /// No propagation: the block is a plain linear map.
    pub fn identity() -> Self {
        Self {
            terms: vec![Term { coef: 1.0, matrix: None }],
            supports: Vec::new(),
        }
    }

    /// The bidirectional block over `(m, n)`. `None` for `alpha = -1`.
    pub fn agg_b(alpha: f64, m: &SparseMatrix, n: &SparseMatrix) -> Result<Option<Self>> {
        if alpha == -1.0 {
            return Ok(None);
        }
        match agg_b_coefficients(alpha) {
            None => {
                let s = if alpha == 2.0 {
                    sparse::pattern_union(m, n)?
                } else {
                    sparse::pattern_intersection(m, n)?
                };
                Self::single(vec![s]).map(Some)
            }
            Some((cm, cn)) => {
                let mut plan = Self {
                    terms: Vec::new(),
                    supports: Vec::new(),
                };
                for (coef, s) in [(cm, m), (cn, n)] {
                    if coef != 0.0 {
                        plan.terms.push(Term {
                            coef,
                            matrix: Some(normalized(s)?),
                        });
                        plan.supports.push(s.clone());
                    }
                }
                Ok(Some(plan))
            }
        }
    }

    /// `Σ coef · S · x` for a fixed dense `x`.
    pub fn propagate(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for term in &self.terms {
            match &term.matrix {
                Some(s) => out.scaled_add_assign(term.coef, &sparse::spmm_dense(s, x)),
                None => out.scaled_add_assign(term.coef, x),
            }
        }
        out
    }

    /// `Σ coef · S · xw` on the tape.
    pub fn apply(&self, tape: &mut Tape, xw: Var) -> std::result::Result<Var, TensorError> {
        let mut acc: Option<Var> = None;
        for term in &self.terms {
            let mut y = match &term.matrix {
                Some(s) => tape.spmm(s, xw)?,
                None => xw,
            };
            if term.coef != 1.0 {
                y = tape.scale(y, term.coef)?;
            }
            acc = Some(match acc {
                Some(a) => tape.add(a, y)?,
                None => y,
            });
        }
        match acc {
            Some(a) => Ok(a),
            None => tape.scale(xw, 0.0),
        }
    }
}

/// Bidirectional aggregation of `x` over unnormalized supports `m` and `n`
/// with the shared weight `w`. Returns zeros for `alpha = -1`.
pub fn agg_b(
    tape: &mut Tape,
    alpha: f64,
    m: &SparseMatrix,
    n: &SparseMatrix,
    x: Var,
    w: Var,
) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    if m.shape() != n.shape() || m.n_cols() != tape.shape(x).0 {
        return Err(TensorError::ShapeMismatch {
            op: "agg_b",
            left: m.shape(),
            right: n.shape(),
        }
        .into());
    }
    Ok(match BlockPlan::agg_b(alpha, m, n)? {
        Some(plan) => plan.apply(tape, xw)?,
        None => {
            let (rows, cols) = (m.n_rows(), tape.shape(xw).1);
            tape.constant(Matrix::zeros(rows, cols))?
        }
    })
}

/// Block plans for a family on the given adjacency.
pub fn family_blocks(cfg: &ModelConfig, adjacency: &SparseMatrix) -> Result<Vec<BlockPlan>> {
    let first = |s: SparseMatrix| sparse::apply_self_loops(&s, cfg.selfloop);
    let higher = |s: SparseMatrix| sparse::apply_self_loops(&s, cfg.selfloop_higher);
    let a = adjacency.pattern();
    let at = sparse::transpose(&a);
    let one = |s: SparseMatrix| BlockPlan::single(vec![s]);
    let blocks = match cfg.family {
        Family::Scalenet => {
            let set = ScaleSet::precompute(&a, cfg.selfloop, cfg.selfloop_higher)?;
            let mut blocks = Vec::new();
            for (param, (m, n)) in [cfg.alpha, cfg.beta, cfg.gamma].into_iter().zip(set.pairs()) {
                if let Some(plan) = BlockPlan::agg_b(param, m, n)? {
                    blocks.push(plan);
                }
            }
            if blocks.is_empty() {
                return Err(ModelError::AllBlocksExcluded);
            }
            blocks
        }
        Family::OneIg | Family::OneIgi2 | Family::OneIgu2 | Family::OneIgu3 => {
            let mut blocks = vec![one(first(a.clone())?)?, one(first(at.clone())?)?];
            let extra: &[(usize, Combine)] = match cfg.family {
                Family::OneIgi2 => &[(2, Combine::Intersect)],
                Family::OneIgu2 => &[(2, Combine::Union)],
                Family::OneIgu3 => &[(2, Combine::Union), (3, Combine::Union)],
                _ => &[],
            };
            for &(k, combine) in extra {
                blocks.push(one(higher(scales::proximity_matrix(&a, k, combine, true)?)?)?);
            }
            blocks
        }
        Family::OneYm => {
            let sym = first(sparse::pattern_union(&a, &at)?)?;
            let aat = sparse::spgemm(&a, &at, sparse::Semiring::Pattern)?;
            let ata = sparse::spgemm(&at, &a, sparse::Semiring::Pattern)?;
            vec![one(sym)?, one(higher(aat)?)?, one(higher(ata)?)?]
        }
        Family::Gcn => vec![one(sparse::add_self_loops(&sparse::pattern_union(&a, &at)?)?)?],
        Family::Mlp => vec![BlockPlan::identity()],
        Family::DirgnnLite => {
            let half = |s: SparseMatrix| -> Result<BlockPlan> {
                let mut plan = BlockPlan::single(vec![s])?;
                plan.terms[0].coef = 0.5;
                Ok(plan)
            };
            vec![half(first(a)?)?, half(first(at)?)?]
        }
    };
    Ok(blocks)
}

fn effective_comb1(cfg: &ModelConfig) -> Comb1 {
    match cfg.family {
        Family::Scalenet => cfg.comb1,
        Family::OneYm => Comb1::JkCat,
        _ => Comb1::Add,
    }
}

#[derive(Clone, Debug)]
struct LayerLayout {
    weights: Vec<usize>,
    projection: Option<usize>,
    bias: usize,
    norm: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Layout {
    layers: Vec<LayerLayout>,
    classifier: (usize, usize),
    shapes: Vec<(usize, usize)>,
}

/// Output of one training-mode forward/backward pass.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<Matrix>,
    pub logits: Matrix,
    /// Batch-normalization statistics after the pass.
    pub bn: Vec<BatchNormState>,
}

/// Parameters and normalization statistics, enough to restore a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub params: Vec<Matrix>,
    pub bn: Vec<BatchNormState>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    comb1: Comb1,
    /// Each block's aggregation of the input features, so the first layer
    /// computes `(Σ c S X) W` as one product.
    propagated: Vec<Matrix>,
    num_classes: usize,
    blocks: Vec<BlockPlan>,
    layout: Layout,
    params: Vec<Matrix>,
    bn: Vec<BatchNormState>,
}

impl Model {
    /// Builds the family named by `cfg` on `graph`, initialized from `seed`.
    pub fn new(cfg: &ModelConfig, graph: &DirectedGraph, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let blocks = family_blocks(cfg, graph.adjacency())?;
        Self::assemble(cfg.clone(), effective_comb1(cfg), graph, blocks, seed)
    }

    /// A model whose blocks aggregate over the given supports, one block
    /// each, fused by addition. Supports are normalized but otherwise used
    /// as given.
    pub fn with_supports(
        cfg: &ModelConfig,
        graph: &DirectedGraph,
        supports: Vec<SparseMatrix>,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = graph.num_nodes();
        let mut blocks = Vec::new();
        for s in supports {
            if s.shape() != (n, n) {
                return Err(SparseError::ShapeMismatch(s.n_rows(), s.n_cols(), n, n).into());
            }
            blocks.push(BlockPlan::single(vec![s])?);
        }
        if blocks.is_empty() {
            return Err(ModelError::InvalidConfig("at least one support is required".into()));
        }
        Self::assemble(cfg.clone(), Comb1::Add, graph, blocks, seed)
    }

    fn assemble(
        config: ModelConfig,
        comb1: Comb1,
        graph: &DirectedGraph,
        blocks: Vec<BlockPlan>,
        seed: u64,
    ) -> Result<Self> {
        let h = config.hidden;
        let mut shapes = Vec::new();
        let mut next = |shape: (usize, usize)| {
            shapes.push(shape);
            shapes.len() - 1
        };
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let d_in = if l == 0 { graph.num_features() } else { h };
            let weights = blocks.iter().map(|_| next((d_in, h))).collect();
            let projection = (comb1 == Comb1::JkCat).then(|| next((blocks.len() * h, h)));
            let bias = next((1, h));
            let norm = config.use_bn.then(|| (next((1, h)), next((1, h))));
            layers.push(LayerLayout {
                weights,
                projection,
                bias,
                norm,
            });
        }
        let width = if config.comb2 == Comb2::JkCat {
            config.layers * h
        } else {
            h
        };
        let classifier = (next((width, graph.num_classes())), next((1, graph.num_classes())));
        let layout = Layout {
            layers,
            classifier,
            shapes,
        };
        let mut model = Self {
            bn: vec![BatchNormState::new(h); if config.use_bn { config.layers } else { 0 }],
            config,
            comb1,
            propagated: blocks.iter().map(|b| b.propagate(graph.features())).collect(),
            num_classes: graph.num_classes(),
            blocks,
            layout,
            params: Vec::new(),
        };
        model.params = model.initial_params(seed);
        Ok(model)
    }

    /// Glorot weights, zero biases, unit BN scales.
    pub fn initial_params(&self, seed: u64) -> Vec<Matrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Matrix> = self
            .layout
            .shapes
            .iter()
            .map(|&(r, c)| {
                if r == 1 {
                    Matrix::zeros(r, c)
                } else {
                    glorot_uniform(r, c, &mut rng)
                }
            })
            .collect();
        for layer in &self.layout.layers {
            if let Some((gamma, _)) = layer.norm {
                params[gamma] = Matrix::filled(1, self.config.hidden, 1.0);
            }
        }
        params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn blocks(&self) -> &[BlockPlan] {
        &self.blocks
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn param_shapes(&self) -> &[(usize, usize)] {
        &self.layout.shapes
    }

    /// Width of the representation fed to the classifier.
    pub fn classifier_input_width(&self) -> usize {
        self.layout.shapes[self.layout.classifier.0].0
    }

    fn check_params(&self, params: &[Matrix]) -> Result<()> {
        if params.len() != self.layout.shapes.len() {
            return Err(ModelError::ParamCount {
                expected: self.layout.shapes.len(),
                found: params.len(),
            });
        }
        for (index, (p, &expected)) in params.iter().zip(&self.layout.shapes).enumerate() {
            if p.shape() != expected {
                return Err(ModelError::ParamShape {
                    index,
                    expected,
                    found: p.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn set_params(&mut self, params: Vec<Matrix>) -> Result<()> {
        self.check_params(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            params: self.params.clone(),
            bn: self.bn.clone(),
        }
    }

    pub fn restore(&mut self, state: ModelState) -> Result<()> {
        self.check_params(&state.params)?;
        self.params = state.params;
        self.bn = state.bn;
        Ok(())
    }

    pub fn set_bn_states(&mut self, bn: Vec<BatchNormState>) {
        self.bn = bn;
    }

    fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        bn: &mut [BatchNormState],
        training: bool,
        dropout_seed: Option<u64>,
    ) -> Result<Var> {
        let mut x = None;
        let mut outputs = Vec::with_capacity(self.layout.layers.len());
        for (l, layer) in self.layout.layers.iter().enumerate() {
            let mut block_out = Vec::with_capacity(self.blocks.len());
            for (b, (plan, &w)) in self.blocks.iter().zip(&layer.weights).enumerate() {
                block_out.push(match x {
                    None => {
                        let p = tape.constant(self.propagated[b].clone())?;
                        tape.matmul(p, vars[w])?
                    }
                    Some(x) => {
                        let xw = tape.matmul(x, vars[w])?;
                        plan.apply(tape, xw)?
                    }
                });
            }
            let mut h = match self.comb1 {
                Comb1::Add => {
                    let mut acc = block_out[0];
                    for &b in &block_out[1..] {
                        acc = tape.add(acc, b)?;
                    }
                    acc
                }
                Comb1::JkMax => tape.max_of(&block_out)?,
                Comb1::JkCat => {
                    let cat = tape.concat_cols(&block_out)?;
                    let p = layer.projection.expect("jk_cat layers have a projection");
                    tape.matmul(cat, vars[p])?
                }
            };
            h = tape.add_row_bias(h, vars[layer.bias])?;
            if let Some((gamma, beta)) = layer.norm {
                h = tape.batchnorm(h, vars[gamma], vars[beta], &mut bn[l], training)?;
            }
            if self.config.use_relu {
                h = tape.relu(h)?;
            }
            if let (true, Some(seed)) = (training, dropout_seed) {
                let layer_seed = seed ^ (l as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                h = tape.dropout(h, self.config.dropout, layer_seed, true)?;
            }
            outputs.push(h);
            x = Some(h);
        }
        let z = match self.config.comb2 {
            Comb2::Last => *outputs.last().expect("at least one layer"),
            Comb2::JkMax => tape.max_of(&outputs)?,
            Comb2::JkCat => tape.concat_cols(&outputs)?,
        };
        let (w, b) = self.layout.classifier;
        let logits = tape.matmul(z, vars[w])?;
        Ok(tape.add_row_bias(logits, vars[b])?)
    }

    /// Training-mode loss over `idx` and its gradient with respect to
    /// `params`. Batch normalization uses batch statistics; dropout is applied
    /// only when `dropout_seed` is given. The model itself is not modified.
    pub fn loss_and_grads(
        &self,
        params: &[Matrix],
        labels: &[usize],
        idx: &[usize],
        dropout_seed: Option<u64>,
    ) -> Result<LossEval> {
        self.check_params(params)?;
        let mut tape = Tape::new();
        let vars = params
            .iter()
            .map(|p| tape.param(p.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut bn = self.bn.clone();
        let logits = self.forward(&mut tape, &vars, &mut bn, true, dropout_seed)?;
        let loss_var = tape.softmax_cross_entropy(logits, labels, idx)?;
        let logits = tape.value(logits).clone();
        let loss = tape.value(loss_var).get(0, 0);
        let grads = tape.backward(loss_var)?;
        let grads = vars
            .iter()
            .zip(&self.layout.shapes)
            .map(|(&v, &shape)| grads.get_or_zeros(v, shape))
            .collect();
        Ok(LossEval {
            loss,
            grads,
            logits,
            bn,
        })
    }

    /// Evaluation-mode logits with the model's own parameters.
    pub fn logits(&self) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self
            .params
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut bn = self.bn.clone();
        let out = self.forward(&mut tape, &vars, &mut bn, false, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self) -> Result<Vec<usize>> {
        Ok(self.logits()?.argmax_rows())
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::tensor::finite_diff_check;

    fn random_graph(n: usize, p: f64, d: usize, classes: usize, seed: u64) -> DirectedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        let a = SparseMatrix::from_edges(n, n, edges).unwrap();
        let features = glorot_uniform(n, d, &mut rng).map(|v| 3.0 * v);
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        DirectedGraph::new(a, features, labels, classes).unwrap()
    }

    fn small_cfg(family: Family) -> ModelConfig {
        ModelConfig {
            family,
            hidden: 6,
            dropout: 0.0,
            ..Default::default()
        }
    }

    fn max_abs(m: &Matrix) -> f64 {
        m.as_slice().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    #[test]
    fn coefficient_table() {
        assert_eq!(agg_b_coefficients(0.0), Some((0.0, 1.0)));
        assert_eq!(agg_b_coefficients(0.5), Some((0.75, 0.75)));
        assert_eq!(agg_b_coefficients(1.0), Some((2.0, 0.0)));
        let (m, n) = agg_b_coefficients(-1.0).unwrap();
        assert_eq!((m.abs(), n), (0.0, 0.0));
        assert_eq!(agg_b_coefficients(2.0), None);
        assert_eq!(agg_b_coefficients(3.0), None);
    }

    #[test]
    fn agg_b_matches_separately_computed_terms() {
        let g = random_graph(9, 0.3, 4, 2, 1);
        let m = g.adjacency().clone();
        let n = sparse::transpose(&m);
        let w0 = glorot_uniform(4, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let xw = g.features().matmul(&w0);
        let agg = |s: &SparseMatrix| sparse::spmm_dense(&sparse::sym_normalize(s, SelfLoopMode::Keep).unwrap(), &xw);
        for alpha in [-1.0, 0.0, 0.5, 1.0, 2.0, 3.0] {
            let mut t = Tape::new();
            let x = t.constant(g.features().clone()).unwrap();
            let w = t.constant(w0.clone()).unwrap();
            let out = agg_b(&mut t, alpha, &m, &n, x, w).unwrap();
            let expect = match alpha {
                2.0 => agg(&sparse::pattern_union(&m, &n).unwrap()),
                3.0 => agg(&sparse::pattern_intersection(&m, &n).unwrap()),
                a => {
                    let mut e = Matrix::zeros(9, 3);
                    e.scaled_add_assign((1.0 + a) * a, &agg(&m));
                    e.scaled_add_assign((1.0 + a) * (1.0 - a), &agg(&n));
                    e
                }
            };
            assert!(t.value(out).max_abs_diff(&expect) < 1e-14, "alpha {alpha}");
            if alpha == -1.0 {
                assert!(t.value(out).as_slice().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn scalenet_block_selection() {
        let g = random_graph(8, 0.3, 3, 2, 3);
        let only_first = ModelConfig {
            alpha: 0.5,
            beta: -1.0,
            gamma: -1.0,
            ..small_cfg(Family::Scalenet)
        };
        let m = Model::new(&only_first, &g, 0).unwrap();
        assert_eq!(m.blocks().len(), 1);
        assert_eq!(m.blocks()[0].supports.len(), 2);
        let all = ModelConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            ..small_cfg(Family::Scalenet)
        };
        assert_eq!(Model::new(&all, &g, 0).unwrap().blocks().len(), 3);
    }

    #[test]
    fn add_fusion_of_identical_blocks_triples() {
        let g = random_graph(7, 0.3, 3, 2, 4);
        let cfg = ModelConfig {
            layers: 1,
            use_relu: false,
            ..small_cfg(Family::Scalenet)
        };
        let a = g.adjacency().clone();
        let one = Model::with_supports(&cfg, &g, vec![a.clone()], 5).unwrap();
        let mut three = Model::with_supports(&cfg, &g, vec![a.clone(), a.clone(), a], 5).unwrap();
        let p = one.params();
        // Layer weights for three blocks, then bias and classifier.
        let mut params = vec![p[0].clone(), p[0].clone(), p[0].clone(), p[1].clone()];
        params.push(p[2].map(|v| v / 3.0));
        params.push(p[3].clone());
        three.set_params(params).unwrap();
        assert!(three.logits().unwrap().max_abs_diff(&one.logits().unwrap()) < 1e-12);
    }

    #[test]
    fn jk_cat_width_is_layers_times_hidden() {
        let g = random_graph(6, 0.3, 3, 2, 6);
        for layers in 1..=4 {
            let cfg = ModelConfig {
                layers,
                comb2: Comb2::JkCat,
                ..small_cfg(Family::Scalenet)
            };
            assert_eq!(Model::new(&cfg, &g, 0).unwrap().classifier_input_width(), layers * 6);
        }
    }

    #[test]
    fn every_family_passes_gradient_check() {
        let g = random_graph(10, 0.25, 4, 3, 7);
        let idx: Vec<usize> = (0..10).collect();
        for family in Family::ALL {
            for (comb1, comb2, use_bn) in [
                (Comb1::Add, Comb2::Last, false),
                (Comb1::JkMax, Comb2::JkMax, true),
                (Comb1::JkCat, Comb2::JkCat, true),
            ] {
                let cfg = ModelConfig {
                    layers: 2,
                    comb1,
                    comb2,
                    use_bn,
                    ..small_cfg(family)
                };
                let model = Model::new(&cfg, &g, 11).unwrap();
                let f = |p: &[Matrix]| {
                    let e = model.loss_and_grads(p, g.labels(), &idx, None).map_err(|e| match e {
                        ModelError::Tensor(t) => t,
                        other => panic!("{other}"),
                    })?;
                    Ok((e.loss, e.grads))
                };
                let err = finite_diff_check(f, model.params(), 1e-5, 40).unwrap();
                assert!(err < 1e-4, "{family} {comb1} {comb2} bn={use_bn}: {err}");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let g = random_graph(10, 0.3, 4, 3, 8);
        let perm = [3, 7, 0, 9, 1, 4, 8, 2, 6, 5];
        let pg = g.permuted(&perm).unwrap();
        for family in Family::ALL {
            let cfg = ModelConfig {
                use_bn: true,
                comb1: Comb1::JkCat,
                ..small_cfg(family)
            };
            let m = Model::new(&cfg, &g, 1).unwrap();
            let mut pm = Model::new(&cfg, &pg, 2).unwrap();
            pm.set_params(m.params().to_vec()).unwrap();
            let idx: Vec<usize> = (0..10).collect();
            let lo = m.loss_and_grads(m.params(), g.labels(), &idx, None).unwrap().logits;
            let plo = pm.loss_and_grads(pm.params(), pg.labels(), &idx, None).unwrap().logits;
            for i in 0..10 {
                for c in 0..3 {
                    assert!((lo.get(i, c) - plo.get(perm[i], c)).abs() < 1e-10, "{family}");
                }
            }
        }
    }

    #[test]
    fn mlp_ignores_edges() {
        let g = random_graph(8, 0.3, 3, 2, 9);
        let other = g.with_parts(random_graph(8, 0.5, 3, 2, 10).adjacency().clone(), g.features().clone()).unwrap();
        let cfg = small_cfg(Family::Mlp);
        let a = Model::new(&cfg, &g, 3).unwrap();
        let b = Model::new(&cfg, &other, 3).unwrap();
        assert_eq!(a.logits().unwrap(), b.logits().unwrap());
    }

    #[test]
    fn inception_channels_match_the_scale_oracles() {
        let g = random_graph(10, 0.3, 3, 2, 12);
        let a = g.adjacency();
        let cfg = ModelConfig {
            selfloop: SelfLoopMode::Keep,
            ..small_cfg(Family::OneIgi2)
        };
        let m = Model::new(&cfg, &g, 0).unwrap();
        let supports: Vec<&SparseMatrix> = m.blocks().iter().map(|b| &b.supports[0]).collect();
        assert_eq!(supports.len(), 3);
        assert_eq!(supports[0], a);
        assert_eq!(supports[1], &sparse::transpose(a));
        assert_eq!(supports[2], &scales::proximity_matrix(a, 2, Combine::Intersect, true).unwrap());

        let u3 = Model::new(&ModelConfig { family: Family::OneIgu3, ..cfg.clone() }, &g, 0).unwrap();
        assert_eq!(u3.blocks().len(), 4);
        assert_eq!(u3.blocks()[3].supports[0], scales::proximity_matrix(a, 3, Combine::Union, true).unwrap());
    }

    #[test]
    fn symmetric_graph_feeds_identical_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut edges = Vec::new();
        for u in 0..8 {
            for v in (u + 1)..8 {
                if rng.random_bool(0.4) {
                    edges.extend([(u, v), (v, u)]);
                }
            }
        }
        let a = SparseMatrix::from_edges(8, 8, edges).unwrap();
        let g = DirectedGraph::new(a.clone(), Matrix::zeros(8, 2), vec![0; 8], 1).unwrap();
        let cfg = ModelConfig {
            selfloop: SelfLoopMode::Keep,
            ..small_cfg(Family::OneIg)
        };
        let m = Model::new(&cfg, &g, 0).unwrap();
        let gcn = Model::new(&small_cfg(Family::Gcn), &g, 0).unwrap();
        let without_loops = sparse::remove_self_loops(&gcn.blocks()[0].supports[0]).unwrap();
        assert_eq!(m.blocks()[0].supports[0], without_loops);
        assert_eq!(m.blocks()[1].supports[0], without_loops);
    }

    #[test]
    fn direction_flip_changes_logits() {
        // A directed path: A differs from Aᵀ.
        let a = SparseMatrix::from_edges(5, 5, [(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let features = glorot_uniform(5, 3, &mut ChaCha8Rng::seed_from_u64(14));
        let g = DirectedGraph::new(a, features, vec![0, 1, 0, 1, 0], 2).unwrap();
        let base = ModelConfig {
            beta: -1.0,
            gamma: -1.0,
            selfloop: SelfLoopMode::Keep,
            ..small_cfg(Family::Scalenet)
        };
        let m0 = Model::new(&ModelConfig { alpha: 0.0, ..base.clone() }, &g, 5).unwrap();
        let m1 = Model::new(&ModelConfig { alpha: 1.0, ..base }, &g, 5).unwrap();
        assert!(m0.logits().unwrap().max_abs_diff(&m1.logits().unwrap()) > 1e-6);
    }

    #[test]
    fn empty_graph_with_zero_features_gives_constant_logits() {
        let g = DirectedGraph::new(SparseMatrix::zeros(6, 6), Matrix::zeros(6, 3), vec![0, 1, 1, 2, 1, 0], 3).unwrap();
        let m = Model::new(&ModelConfig { use_bn: true, ..small_cfg(Family::Scalenet) }, &g, 0).unwrap();
        let mut params = m.params().to_vec();
        let last = params.len() - 1;
        params[last] = Matrix::from_vec(1, 3, vec![0.1, 0.7, -0.2]);
        let mut m = m;
        m.set_params(params).unwrap();
        let logits = m.logits().unwrap();
        assert!(max_abs(&logits) > 0.0);
        assert_eq!(m.predict().unwrap(), vec![1; 6]);
    }

    #[test]
    fn parameter_shapes_are_checked() {
        let g = random_graph(5, 0.3, 2, 2, 15);
        let mut m = Model::new(&small_cfg(Family::Gcn), &g, 0).unwrap();
        assert!(matches!(m.set_params(vec![]), Err(ModelError::ParamCount { .. })));
        let mut p = m.params().to_vec();
        p[0] = Matrix::zeros(1, 1);
        assert!(matches!(m.set_params(p), Err(ModelError::ParamShape { index: 0, .. })));
    }
}
