//! Seeded random op-graph programs for verifying the backward rules.
//!
//! A [`FuzzCase`] is a small straight-line program over the full op set. It
//! owns the parameters it reads, and [`FuzzCase::build`] replays it on a fresh
//! graph so that finite differences can re-evaluate it at perturbed inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Array, Graph, ParamId, ParamStore, Result, Var};

#[derive(Clone, Debug)]
enum Instr {
    Param(ParamId),
    Const(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    SliceCols(usize, usize, usize),
    Gather(usize, Vec<Option<usize>>),
    Broadcast(usize, usize),
    Reshape(usize, usize, usize),
    Relu(usize),
    Gelu(usize),
    Softmax(usize, Option<usize>),
    LayerNorm(usize, usize, usize),
    GroupMax(usize, Vec<Vec<usize>>),
    Chamfer(usize, usize),
    Mean(usize),
    Sum(usize),
    SqErr(usize, usize),
    WeightedSqErr(usize, usize, Vec<f64>),
}

/// One randomly generated scalar-valued graph.
#[derive(Clone, Debug)]
pub struct FuzzCase {
    pub store: ParamStore,
    consts: Vec<Array>,
    program: Vec<Instr>,
}

struct Gen {
    rng: ChaCha8Rng,
    store: ParamStore,
    consts: Vec<Array>,
    program: Vec<Instr>,
    shapes: Vec<(usize, usize)>,
}

impl Gen {
    fn random(&mut self, rows: usize, cols: usize, scale: f64) -> Array {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-1.0..1.0) * scale)
            .collect();
        Array::from_vec(rows, cols, data).expect("sized")
    }

    fn emit(&mut self, instr: Instr, shape: (usize, usize)) -> usize {
        self.program.push(instr);
        self.shapes.push(shape);
        self.shapes.len() - 1
    }

    fn param(&mut self, rows: usize, cols: usize) -> usize {
        let value = self.random(rows, cols, 1.0);
        let name = format!("p{}", self.store.len());
        let id = self.store.insert(name, value).expect("fresh name");
        self.emit(Instr::Param(id), (rows, cols))
    }

    fn constant(&mut self, value: Array) -> usize {
        let shape = value.shape();
        self.consts.push(value);
        let k = self.consts.len() - 1;
        self.emit(Instr::Const(k), shape)
    }

    fn pick(&mut self) -> usize {
        // Bias towards recent values so programs form chains.
        let n = self.shapes.len();
        let lo = n.saturating_sub(3);
        self.rng.random_range(lo..n)
    }

    fn step(&mut self) {
        let x = self.pick();
        let (r, c) = self.shapes[x];
        match self.rng.random_range(0..19) {
            0 => {
                let y = self.param(r, c);
                self.emit(Instr::Add(x, y), (r, c));
            }
            1 => {
                let y = self.param(r, c);
                self.emit(Instr::Sub(y, x), (r, c));
            }
            2 => {
                let y = self.param(r, c);
                self.emit(Instr::Mul(x, y), (r, c));
            }
            3 => {
                let s = self.rng.random_range(-2.0..2.0);
                self.emit(Instr::Scale(x, s), (r, c));
            }
            4 => {
                let b = self.param(1, c);
                self.emit(Instr::AddRow(x, b), (r, c));
            }
            5 => {
                let k = self.rng.random_range(1..5);
                let w = self.param(c, k);
                self.emit(Instr::MatMul(x, w), (r, k));
            }
            6 => {
                self.emit(Instr::Transpose(x), (c, r));
            }
            7 => {
                let k = self.rng.random_range(1..4);
                let y = self.param(r, k);
                self.emit(Instr::ConcatCols(x, y), (r, c + k));
            }
            8 => {
                let k = self.rng.random_range(1..4);
                let y = self.param(k, c);
                self.emit(Instr::ConcatRows(y, x), (r + k, c));
            }
            9 if c > 1 => {
                let start = self.rng.random_range(0..c - 1);
                let len = self.rng.random_range(1..=c - start);
                self.emit(Instr::SliceCols(x, start, len), (r, len));
            }
            10 => {
                let n = self.rng.random_range(1..6);
                let index: Vec<Option<usize>> = (0..n)
                    .map(|_| (self.rng.random_range(0..5) > 0).then(|| self.rng.random_range(0..r)))
                    .collect();
                self.emit(Instr::Gather(x, index), (n, c));
            }
            11 => {
                let row = self.param(1, c);
                let n = self.rng.random_range(1..4);
                self.emit(Instr::Broadcast(row, n), (n, c));
            }
            12 if (r * c) % 2 == 0 => {
                self.emit(Instr::Reshape(x, 2, r * c / 2), (2, r * c / 2));
            }
            13 => {
                if self.rng.random_bool(0.5) {
                    self.emit(Instr::Relu(x), (r, c));
                } else {
                    self.emit(Instr::Gelu(x), (r, c));
                }
            }
            14 => {
                let mask = if self.rng.random_bool(0.6) {
                    let mut m = Array::zeros(r, c);
                    for i in 0..r {
                        let keep = self.rng.random_range(0..c);
                        for j in 0..c {
                            if j != keep && self.rng.random_bool(0.3) {
                                m.set(i, j, f64::NEG_INFINITY);
                            }
                        }
                    }
                    self.consts.push(m);
                    Some(self.consts.len() - 1)
                } else {
                    None
                };
                self.emit(Instr::Softmax(x, mask), (r, c));
            }
            15 if c > 1 => {
                let gamma = self.param(1, c);
                let beta = self.param(1, c);
                self.emit(Instr::LayerNorm(x, gamma, beta), (r, c));
            }
            16 => {
                let n = self.rng.random_range(1..4);
                let groups: Vec<Vec<usize>> = (0..n)
                    .map(|_| {
                        let k = self.rng.random_range(1..=r.min(3));
                        rand::seq::index::sample(&mut self.rng, r, k).into_vec()
                    })
                    .collect();
                self.emit(Instr::GroupMax(x, groups), (n, c));
            }
            17 => {
                let m = self.rng.random_range(1..5);
                let target = self.random(m, c, 1.5);
                let t = self.constant(target);
                self.emit(Instr::Chamfer(x, t), (1, 1));
            }
            _ => {
                let y = self.param(c, c.max(2));
                self.emit(Instr::MatMul(x, y), (r, c.max(2)));
            }
        }
    }
}

impl FuzzCase {
    /// Generates a program of between 3 and 8 ops ending in a scalar.
    pub fn generate(seed: u64) -> Self {
        let mut gen = Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            store: ParamStore::new(),
            consts: Vec::new(),
            program: Vec::new(),
            shapes: Vec::new(),
        };
        let r = gen.rng.random_range(1..5);
        let c = gen.rng.random_range(1..5);
        gen.param(r, c);
        let steps = gen.rng.random_range(3..9);
        for _ in 0..steps {
            gen.step();
        }
        let last = gen.shapes.len() - 1;
        let (r, c) = gen.shapes[last];
        match gen.rng.random_range(0..4) {
            0 => {
                gen.emit(Instr::Mean(last), (1, 1));
            }
            1 => {
                gen.emit(Instr::Sum(last), (1, 1));
            }
            2 => {
                let t = gen.random(r, c, 1.0);
                let t = gen.constant(t);
                gen.emit(Instr::SqErr(last, t), (1, 1));
            }
            _ => {
                let t = gen.random(r, c, 1.0);
                let t = gen.constant(t);
                let w = (0..r * c).map(|_| gen.rng.random_range(0.1..2.0)).collect();
                gen.emit(Instr::WeightedSqErr(last, t, w), (1, 1));
            }
        }
        Self {
            store: gen.store,
            consts: gen.consts,
            program: gen.program,
        }
    }

    pub fn len(&self) -> usize {
        self.program.len()
    }

    pub fn is_empty(&self) -> bool {
        self.program.is_empty()
    }

    /// Replays the program on `g`, reading parameters from `store`.
    pub fn build(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let mut vals: Vec<Var> = Vec::with_capacity(self.program.len());
        for instr in &self.program {
            let v = match instr {
                Instr::Param(id) => g.param(store, *id),
                Instr::Const(k) => g.constant(self.consts[*k].clone()),
                Instr::Add(a, b) => g.add(vals[*a], vals[*b])?,
                Instr::Sub(a, b) => g.sub(vals[*a], vals[*b])?,
                Instr::Mul(a, b) => g.mul(vals[*a], vals[*b])?,
                Instr::Scale(a, s) => g.scale(vals[*a], *s),
                Instr::AddRow(a, b) => g.add_row(vals[*a], vals[*b])?,
                Instr::MatMul(a, b) => g.matmul(vals[*a], vals[*b])?,
                Instr::Transpose(a) => g.transpose(vals[*a]),
                Instr::ConcatCols(a, b) => g.concat_cols(&[vals[*a], vals[*b]])?,
                Instr::ConcatRows(a, b) => g.concat_rows(&[vals[*a], vals[*b]])?,
                Instr::SliceCols(a, s, l) => g.slice_cols(vals[*a], *s, *l)?,
                Instr::Gather(a, idx) => g.gather_rows(vals[*a], idx)?,
                Instr::Broadcast(a, n) => g.broadcast_rows(vals[*a], *n)?,
                Instr::Reshape(a, r, c) => g.reshape(vals[*a], *r, *c)?,
                Instr::Relu(a) => g.relu(vals[*a]),
                Instr::Gelu(a) => g.gelu(vals[*a]),
                Instr::Softmax(a, m) => g.softmax_rows(vals[*a], m.map(|k| &self.consts[k]))?,
                Instr::LayerNorm(a, gm, bt) => g.layer_norm(vals[*a], vals[*gm], vals[*bt])?,
                Instr::GroupMax(a, groups) => g.group_max(vals[*a], groups)?,
                Instr::Chamfer(a, t) => {
                    let target = g.value(vals[*t]).clone();
                    g.chamfer(vals[*a], &target)?
                }
                Instr::Mean(a) => g.mean(vals[*a]),
                Instr::Sum(a) => g.sum(vals[*a]),
                Instr::SqErr(a, b) => g.sq_err(vals[*a], vals[*b])?,
                Instr::WeightedSqErr(a, b, w) => g.weighted_sq_err(vals[*a], vals[*b], w)?,
            };
            vals.push(v);
        }
        Ok(*vals.last().expect("non-empty program"))
    }

    /// Names of the ops in program order, for diagnostics.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.program
            .iter()
            .map(|i| match i {
                Instr::Param(_) => "param",
                Instr::Const(_) => "const",
                Instr::Add(..) => "add",
                Instr::Sub(..) => "sub",
                Instr::Mul(..) => "mul",
                Instr::Scale(..) => "scale",
                Instr::AddRow(..) => "add_row",
                Instr::MatMul(..) => "matmul",
                Instr::Transpose(_) => "transpose",
                Instr::ConcatCols(..) => "concat_cols",
                Instr::ConcatRows(..) => "concat_rows",
                Instr::SliceCols(..) => "slice_cols",
                Instr::Gather(..) => "gather_rows",
                Instr::Broadcast(..) => "broadcast_rows",
                Instr::Reshape(..) => "reshape",
                Instr::Relu(_) => "relu",
                Instr::Gelu(_) => "gelu",
                Instr::Softmax(..) => "softmax",
                Instr::LayerNorm(..) => "layer_norm",
                Instr::GroupMax(..) => "group_max",
                Instr::Chamfer(..) => "chamfer",
                Instr::Mean(_) => "mean",
                Instr::Sum(_) => "sum",
                Instr::SqErr(..) => "sq_err",
                Instr::WeightedSqErr(..) => "weighted_sq_err",
            })
            .collect()
    }
}
