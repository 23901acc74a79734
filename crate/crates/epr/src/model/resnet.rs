use ndarray::{Array2, Array3, Array4};
use rand_chacha::ChaCha8Rng;

use crate::nn::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, BatchNorm2d, BnCache, BnGrads,
    Conv2d, ConvCache, ConvGrads,
};

/// ResNet-18 with its widths cut to 20/40/80/160 maps, the usual choice for
/// small-image continual-learning benchmarks.
#[derive(Debug, Clone)]
pub struct ReducedResnet18 {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub blocks: Vec<BasicBlock>,
    pub image_side: usize,
}

#[derive(Debug, Clone)]
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    /// 1×1 projection when the block changes resolution or width.
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

pub struct BlockCache {
    c1: ConvCache,
    b1: BnCache,
    a1: Array4<f32>,
    c2: ConvCache,
    b2: BnCache,
    sc: Option<(ConvCache, BnCache)>,
    out: Array4<f32>,
}

pub struct BlockGrads {
    g1: ConvGrads,
    n1: BnGrads,
    g2: ConvGrads,
    n2: BnGrads,
    sc: Option<(ConvGrads, BnGrads)>,
}

/// Eval-mode tape for one block: enough to backpropagate an explanation
/// gradient without touching batch statistics.
struct BlockEvalCache {
    c1: ConvCache,
    a1: Array4<f32>,
    c2: ConvCache,
    sc: Option<ConvCache>,
    out: Array4<f32>,
}

pub struct ResnetCache {
    c0: ConvCache,
    b0: BnCache,
    r0: Array4<f32>,
    blocks: Vec<BlockCache>,
    last_plane: (usize, usize),
}

pub struct ResnetGrads {
    g0: ConvGrads,
    n0: BnGrads,
    blocks: Vec<BlockGrads>,
}

pub const RESNET_TARGETS: &[&str] = &["layer4.1.shortcut", "layer4.output"];

const WIDTHS: [usize; 4] = [20, 40, 80, 160];

impl BasicBlock {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = if stride != 1 || c_in != c_out {
            Some((
                Conv2d::new(c_in, c_out, 1, stride, 0, rng),
                BatchNorm2d::new(c_out),
            ))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(c_in, c_out, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(c_out),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            shortcut,
        }
    }

    fn forward_train(&mut self, x: &Array4<f32>) -> (Array4<f32>, BlockCache) {
        let (z1, c1) = self.conv1.forward(x);
        let (n1, b1) = self.bn1.forward_train(&z1);
        let a1 = relu(&n1);
        let (z2, c2) = self.conv2.forward(&a1);
        let (mut pre, b2) = self.bn2.forward_train(&z2);
        let sc = match &mut self.shortcut {
            Some((conv, bn)) => {
                let (s, csc) = conv.forward(x);
                let (sn, bsc) = bn.forward_train(&s);
                pre += &sn;
                Some((csc, bsc))
            }
            None => {
                pre += x;
                None
            }
        };
        let out = relu(&pre);
        (
            out.clone(),
            BlockCache { c1, b1, a1, c2, b2, sc, out },
        )
    }

    fn forward_eval(&self, x: &Array4<f32>) -> Array4<f32> {
        self.forward_eval_traced(x).0
    }

    fn forward_eval_traced(&self, x: &Array4<f32>) -> (Array4<f32>, BlockEvalCache) {
        let (z1, c1) = self.conv1.forward(x);
        let a1 = relu(&self.bn1.forward_eval(&z1));
        let (z2, c2) = self.conv2.forward(&a1);
        let mut pre = self.bn2.forward_eval(&z2);
        let sc = match &self.shortcut {
            Some((conv, bn)) => {
                let (s, csc) = conv.forward(x);
                pre += &bn.forward_eval(&s);
                Some(csc)
            }
            None => {
                pre += x;
                None
            }
        };
        let out = relu(&pre);
        (out.clone(), BlockEvalCache { c1, a1, c2, sc, out })
    }

    fn backward(&self, cache: &BlockCache, dy: &Array4<f32>) -> (Array4<f32>, BlockGrads) {
        let dpre = relu_backward(&cache.out, dy);
        let (dz2, n2) = self.bn2.backward(&cache.b2, &dpre);
        let (da1, g2) = self.conv2.backward(&cache.c2, &dz2);
        let dn1 = relu_backward(&cache.a1, &da1);
        let (dz1, n1) = self.bn1.backward(&cache.b1, &dn1);
        let (mut dx, g1) = self.conv1.backward(&cache.c1, &dz1);
        let sc = match (&self.shortcut, &cache.sc) {
            (Some((conv, bn)), Some((csc, bsc))) => {
                let (ds, nsc) = bn.backward(bsc, &dpre);
                let (dxs, gsc) = conv.backward(csc, &ds);
                dx += &dxs;
                Some((gsc, nsc))
            }
            _ => {
                dx += &dpre;
                None
            }
        };
        (dx, BlockGrads { g1, n1, g2, n2, sc })
    }

    fn backward_eval(&self, cache: &BlockEvalCache, dy: &Array4<f32>) -> Array4<f32> {
        let dpre = relu_backward(&cache.out, dy);
        let dz2 = self.bn2.backward_eval(&dpre);
        let (da1, _) = self.conv2.backward(&cache.c2, &dz2);
        let dn1 = relu_backward(&cache.a1, &da1);
        let dz1 = self.bn1.backward_eval(&dn1);
        let (mut dx, _) = self.conv1.backward(&cache.c1, &dz1);
        match (&self.shortcut, &cache.sc) {
            (Some((conv, bn)), Some(csc)) => {
                let ds = bn.backward_eval(&dpre);
                let (dxs, _) = conv.backward(csc, &ds);
                dx += &dxs;
            }
            _ => dx += &dpre,
        }
        dx
    }

    fn apply_sgd(&mut self, grads: &BlockGrads, lr: f32) {
        self.conv1.apply_sgd(&grads.g1, lr);
        self.bn1.apply_sgd(&grads.n1, lr);
        self.conv2.apply_sgd(&grads.g2, lr);
        self.bn2.apply_sgd(&grads.n2, lr);
        if let (Some((conv, bn)), Some((gsc, nsc))) = (&mut self.shortcut, &grads.sc) {
            conv.apply_sgd(gsc, lr);
            bn.apply_sgd(nsc, lr);
        }
    }

    fn param_count(&self) -> usize {
        let mut n = self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count();
        if let Some((conv, bn)) = &self.shortcut {
            n += conv.param_count() + bn.param_count();
        }
        n
    }
}

impl ReducedResnet18 {
    pub fn new(channels: usize, image_side: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::with_capacity(8);
        let mut c_in = WIDTHS[0];
        for (stage, &width) in WIDTHS.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(c_in, width, stride, rng));
            blocks.push(BasicBlock::new(width, width, 1, rng));
            c_in = width;
        }
        ReducedResnet18 {
            conv1: Conv2d::new(channels, WIDTHS[0], 3, 1, 1, rng),
            bn1: BatchNorm2d::new(WIDTHS[0]),
            blocks,
            image_side,
        }
    }

    pub fn feature_dim(&self) -> usize {
        WIDTHS[3]
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> (Array2<f32>, ResnetCache) {
        let (z0, c0) = self.conv1.forward(x);
        let (n0, b0) = self.bn1.forward_train(&z0);
        let r0 = relu(&n0);
        let mut h = r0.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (next, cache) = block.forward_train(&h);
            caches.push(cache);
            h = next;
        }
        let (_, _, ph, pw) = h.dim();
        let feat = global_avg_pool(&h);
        (
            feat,
            ResnetCache {
                c0,
                b0,
                r0,
                blocks: caches,
                last_plane: (ph, pw),
            },
        )
    }

    pub fn forward_eval(&self, x: &Array4<f32>) -> Array2<f32> {
        let z0 = self.conv1.forward(x).0;
        let mut h = relu(&self.bn1.forward_eval(&z0));
        for block in &self.blocks {
            h = block.forward_eval(&h);
        }
        global_avg_pool(&h)
    }

    pub fn backward(&self, cache: &ResnetCache, dfeat: &Array2<f32>) -> ResnetGrads {
        let (ph, pw) = cache.last_plane;
        let mut dh = global_avg_pool_backward(dfeat, ph, pw);
        let mut block_grads: Vec<BlockGrads> = Vec::with_capacity(self.blocks.len());
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (dx, g) = block.backward(bc, &dh);
            dh = dx;
            block_grads.push(g);
        }
        block_grads.reverse();
        let dz0pre = relu_backward(&cache.r0, &dh);
        let (dz0, n0) = self.bn1.backward(&cache.b0, &dz0pre);
        let (_, g0) = self.conv1.backward(&cache.c0, &dz0);
        ResnetGrads {
            g0,
            n0,
            blocks: block_grads,
        }
    }

    pub fn apply_sgd(&mut self, grads: &ResnetGrads, lr: f32) {
        self.conv1.apply_sgd(&grads.g0, lr);
        self.bn1.apply_sgd(&grads.n0, lr);
        for (block, g) in self.blocks.iter_mut().zip(&grads.blocks) {
            block.apply_sgd(g, lr);
        }
    }

    /// Eval-mode capture at a named layer for one image. The final block's
    /// input ("layer4.1.shortcut") is the default explanation target.
    pub fn capture(
        &self,
        x: &Array4<f32>,
        dfeat: &Array2<f32>,
        target: &str,
    ) -> (Array3<f32>, Array3<f32>) {
        debug_assert_eq!(x.dim().0, 1);
        let z0 = self.conv1.forward(x).0;
        let mut h = relu(&self.bn1.forward_eval(&z0));
        let last = self.blocks.len() - 1;
        for block in &self.blocks[..last] {
            h = block.forward_eval(&h);
        }
        let block_input = h;
        let (out, tape) = self.blocks[last].forward_eval_traced(&block_input);
        let (_, _, ph, pw) = out.dim();
        let dh = global_avg_pool_backward(dfeat, ph, pw);
        if target == "layer4.output" {
            return single(&out, &dh);
        }
        debug_assert_eq!(target, "layer4.1.shortcut");
        let dx = self.blocks[last].backward_eval(&tape, &dh);
        single(&block_input, &dx)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.blocks.iter().map(BasicBlock::param_count).sum::<usize>()
    }
}

fn single(a: &Array4<f32>, g: &Array4<f32>) -> (Array3<f32>, Array3<f32>) {
    (
        a.index_axis(ndarray::Axis(0), 0).to_owned(),
        g.index_axis(ndarray::Axis(0), 0).to_owned(),
    )
}
