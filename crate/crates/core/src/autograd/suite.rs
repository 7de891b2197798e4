//! The primitive-op gradient suite shared by the tests and the command line.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::tensor::ops::{Activation, BinaryOp, Conv2dParams, NormMode, PoolKind, SoftmaxAxis};
use crate::tensor::Tensor;

type OpFn = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>>;

/// One primitive under test: parameter tensors and the op applied to them.
pub struct PrimitiveCase {
    pub name: String,
    mode: NormMode,
    store: ParamStore<f64>,
    op: OpFn,
}

#[derive(Clone, Debug)]
pub struct PrimitiveResult {
    pub name: String,
    pub report: GradCheckReport,
}

impl PrimitiveResult {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.report.max_rel_err() <= tolerance
    }
}

struct CaseBuilder {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
}

impl CaseBuilder {
    fn new(seed: u64) -> Self {
        CaseBuilder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn param(mut self, shape: &[usize]) -> Self {
        let t = Tensor::randn(shape, 0.0, 1.0, &mut self.rng);
        self.with(t)
    }

    fn with(mut self, t: Tensor<f64>) -> Self {
        let name = format!("p{}", self.store.params().len());
        self.store.add_param(name, t).expect("fresh name");
        self
    }

    fn op<F>(self, name: impl Into<String>, mode: NormMode, f: F) -> PrimitiveCase
    where
        F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var> + 'static,
    {
        PrimitiveCase {
            name: name.into(),
            mode,
            store: self.store,
            op: Box::new(f),
        }
    }
}

/// Every differentiable primitive, with the variants the network uses.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    let train = NormMode::Train;
    let mut cases = Vec::new();
    let convs = [
        (
            "conv2d",
            [2, 3, 4, 4],
            [4, 3, 3, 3],
            Conv2dParams::new(1, 1, 1, 1),
        ),
        (
            "conv2d/stride2",
            [1, 3, 4, 4],
            [2, 3, 3, 3],
            Conv2dParams::new(2, 1, 1, 1),
        ),
        (
            "conv2d/dilated",
            [1, 2, 5, 5],
            [2, 2, 3, 3],
            Conv2dParams::new(1, 2, 2, 1),
        ),
        (
            "conv2d/grouped",
            [2, 3, 4, 4],
            [3, 1, 3, 3],
            Conv2dParams::new(1, 1, 1, 3),
        ),
        (
            "conv2d/depthwise",
            [1, 4, 4, 4],
            [4, 1, 3, 3],
            Conv2dParams::new(1, 4, 4, 4),
        ),
        (
            "conv2d/pointwise",
            [2, 3, 4, 4],
            [5, 3, 1, 1],
            Conv2dParams::default(),
        ),
    ];
    for (seed, (name, xs, ws, p)) in convs.into_iter().enumerate() {
        cases.push(
            CaseBuilder::new(seed as u64)
                .param(&xs)
                .param(&ws)
                .param(&[ws[0]])
                .op(name, train, move |g, v| g.conv2d(v[0], v[1], Some(v[2]), p)),
        );
    }
    for (mode, name) in [
        (NormMode::Train, "batch_norm/train"),
        (NormMode::Eval, "batch_norm/eval"),
    ] {
        let mut b = CaseBuilder::new(11)
            .param(&[2, 3, 4, 4])
            .param(&[3])
            .param(&[3]);
        let rm = b
            .store
            .add_buffer("rm", Tensor::from_vec(vec![0.1, -0.2, 0.3]))
            .expect("fresh");
        let rv = b
            .store
            .add_buffer("rv", Tensor::from_vec(vec![1.5, 0.7, 2.0]))
            .expect("fresh");
        cases.push(b.op(name, mode, move |g, v| {
            g.batch_norm(v[0], v[1], v[2], rm, rv)
        }));
    }
    for (kind, name) in [(Activation::Relu, "relu"), (Activation::Sigmoid, "sigmoid")] {
        cases.push(
            CaseBuilder::new(12)
                .param(&[1, 2, 4, 4])
                .op(name, train, move |g, v| g.activation(v[0], kind)),
        );
    }
    for (axis, name) in [
        (SoftmaxAxis::Rows, "softmax/rows"),
        (SoftmaxAxis::Cols, "softmax/cols"),
    ] {
        cases.push(
            CaseBuilder::new(13)
                .param(&[2, 4, 4])
                .op(name, train, move |g, v| g.softmax(v[0], axis)),
        );
    }
    for (seed, name, a, b) in [
        (14, "matmul", vec![2, 4, 3], vec![2, 3, 4]),
        (15, "matmul/shared_right", vec![2, 4, 3], vec![3, 4]),
        (16, "matmul/shared_left", vec![4, 4], vec![2, 4, 4]),
    ] {
        cases.push(
            CaseBuilder::new(seed)
                .param(&a)
                .param(&b)
                .op(name, train, |g, v| g.matmul(v[0], v[1])),
        );
    }
    cases.push(
        CaseBuilder::new(17)
            .param(&[2, 3, 4])
            .op("transpose", train, |g, v| g.transpose(v[0])),
    );
    cases.push(
        CaseBuilder::new(18)
            .param(&[1, 2, 4, 4])
            .op("reshape", train, |g, v| g.reshape(v[0], &[1, 2, 16])),
    );
    for (kind, name) in [
        (PoolKind::Max2x2, "pool/max2x2"),
        (PoolKind::GlobalMaxSpatial, "pool/global_max"),
        (PoolKind::MaxOverChannels, "pool/channel_max"),
    ] {
        cases.push(
            CaseBuilder::new(19)
                .param(&[2, 3, 4, 4])
                .op(name, train, move |g, v| g.pool(v[0], kind)),
        );
    }
    cases.push(
        CaseBuilder::new(20)
            .param(&[1, 2, 4, 4])
            .op("upsample", train, |g, v| g.upsample(v[0], 2)),
    );
    cases.push(
        CaseBuilder::new(21)
            .param(&[1, 2, 4, 4])
            .op("resize", train, |g, v| g.resize(v[0], 3, 7)),
    );
    for (op, name) in [(BinaryOp::Add, "add"), (BinaryOp::Mul, "mul")] {
        for (seed, suffix, a, b) in [
            (22, "", [2, 3, 4, 4], [2, 3, 4, 4]),
            (23, "/channel_broadcast", [2, 3, 4, 4], [2, 1, 4, 4]),
            (24, "/spatial_broadcast", [2, 3, 1, 1], [2, 3, 4, 4]),
        ] {
            cases.push(CaseBuilder::new(seed).param(&a).param(&b).op(
                format!("{name}{suffix}"),
                train,
                move |g, v| g.elementwise(v[0], v[1], op),
            ));
        }
    }
    cases.push(
        CaseBuilder::new(25)
            .param(&[1, 2, 4, 4])
            .op("scale", train, |g, v| g.scale(v[0], -2.5)),
    );
    cases.push(
        CaseBuilder::new(26)
            .param(&[2, 1, 4, 4])
            .param(&[2, 3, 4, 4])
            .op("concat", train, |g, v| g.concat(v[0], v[1])),
    );
    cases.push(
        CaseBuilder::new(27)
            .param(&[2, 4])
            .param(&[3, 4])
            .param(&[3])
            .op("linear", train, |g, v| g.linear(v[0], v[1], Some(v[2]))),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let s = Tensor::<f64>::uniform(&[2, 1, 4, 4], 0.05, 0.95, &mut rng);
    let target = Tensor::<f64>::from_fn(&[2, 1, 4, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
    let t2 = target.clone();
    cases.push(
        CaseBuilder::new(29)
            .with(s.clone())
            .op("bce", train, move |g, v| g.bce(v[0], &target)),
    );
    cases.push(
        CaseBuilder::new(30)
            .with(s)
            .op("iou", train, move |g, v| g.iou(v[0], &t2)),
    );
    cases
}

impl PrimitiveCase {
    /// Checks the op with its output contracted against fixed random weights,
    /// so every output element carries a distinct weight in the loss. With
    /// `broken`, the op's first input is detached: its analytic gradient
    /// becomes zero and the check must fail.
    pub fn run(mut self, opts: &GradCheckOptions, broken: bool) -> Result<PrimitiveResult> {
        let ids: Vec<_> = self.store.param_ids().collect();
        let op = &self.op;
        let apply = |g: &mut Graph<'_, f64>| -> Result<Var> {
            let mut vars: Vec<Var> = ids.iter().map(|&i| g.param(i)).collect();
            if broken {
                vars[0] = g.detach(vars[0])?;
            }
            op(g, &vars)
        };
        let probe_shape = {
            let mut g = Graph::new(&self.store, self.mode);
            let y = apply(&mut g)?;
            g.shape(y).to_vec()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
        let weights = Tensor::randn(&probe_shape, 0.0, 1.0, &mut rng);
        let report = grad_check(&mut self.store, self.mode, opts, |g| {
            let y = apply(g)?;
            let w = g.input(weights.clone());
            let yw = g.mul(y, w)?;
            g.sum(yw)
        })?;
        Ok(PrimitiveResult {
            name: self.name,
            report,
        })
    }
}

/// Runs the whole suite. `broken` names one case whose backward is cut.
pub fn primitive_checks(
    opts: &GradCheckOptions,
    broken: Option<&str>,
) -> Result<Vec<PrimitiveResult>> {
    let cases = primitive_cases();
    if let Some(b) = broken {
        if !cases.iter().any(|c| c.name == b) {
            return Err(Error::InvalidArgument(format!(
                "no primitive case named `{b}`"
            )));
        }
    }
    cases
        .into_iter()
        .map(|c| {
            let brk = broken == Some(c.name.as_str());
            c.run(opts, brk)
        })
        .collect()
}
