//! Graph construction for one ISP module (`g` or `h`).

use rand::Rng;
use uniisp_tensor::kernels::elementwise::Unary;
use uniisp_tensor::{ConvSpec, Float, Graph, Init, ParamStore, Tensor, Var};

use super::config::ModelConfig;
use crate::color::{xyz_to_srgb_matrix, SRGB_TO_XYZ};
use crate::error::{Error, Result};

/// Which of the two modules a graph is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `g`: sRGB → XYZ, non-negative softplus head.
    Inverse,
    /// `h`: XYZ → sRGB, clamp head.
    Forward,
}

impl Direction {
    pub fn prefix(self) -> &'static str {
        match self {
            Direction::Inverse => "g.",
            Direction::Forward => "h.",
        }
    }
}

pub fn embedding_name(camera: &str) -> String {
    format!("emb.{camera}")
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, init: Init) {
        let bias = match init {
            Init::Zeros => Init::Zeros,
            Init::Uniform(b) => Init::Uniform(b),
            _ => Init::Uniform(1.0 / ((cin * k * k) as f64).sqrt()),
        };
        self.push(format!("{name}.w"), vec![cout, cin, k, k], init);
        self.push(format!("{name}.b"), vec![cout], bias);
    }

    fn lfeb(&mut self, name: &str, cin: usize, cout: usize) {
        self.conv(&format!("{name}.c1"), cin, cout, 3, Init::FanInUniform);
        self.push(format!("{name}.hin.g"), vec![cout / 2], Init::Const(1.0));
        self.push(format!("{name}.hin.b"), vec![cout / 2], Init::Zeros);
        self.conv(&format!("{name}.c2"), cout, cout, 3, Init::FanInUniform);
        let r = (cout / 4).max(4);
        self.conv(&format!("{name}.ca1"), cout, r, 1, Init::FanInUniform);
        self.conv(&format!("{name}.ca2"), r, cout, 1, Init::FanInUniform);
        self.conv(&format!("{name}.sa"), 2, 1, 7, Init::FanInUniform);
        if cin != cout {
            self.conv(&format!("{name}.skip"), cin, cout, 1, Init::FanInUniform);
        }
    }
}

/// Parameters of one module, in registration order.
pub fn module_specs(cfg: &ModelConfig, dir: Direction) -> Vec<ParamSpec> {
    let p = dir.prefix();
    let mut s = Specs(Vec::new());
    let c0 = cfg.width(0);
    s.conv(&format!("{p}in"), 3, c0, 3, Init::FanInUniform);
    let mut c = c0;
    for sc in 0..cfg.scales {
        let w = cfg.width(sc);
        for b in 0..cfg.blocks_per_scale {
            s.lfeb(&format!("{p}enc{sc}.b{b}"), c, w);
            c = w;
        }
    }
    let cb = c;
    let d = cfg.attn_dim;
    s.conv(&format!("{p}deim.q"), cb, d, 1, Init::FanInUniform);
    let td = cfg.token_dim();
    s.push(format!("{p}deim.wk"), vec![1, td, d], Init::Uniform(1.0 / (td as f64).sqrt()));
    s.push(format!("{p}deim.wv"), vec![1, td, d], Init::Uniform(1.0 / (td as f64).sqrt()));
    s.conv(&format!("{p}deim.out"), d, cb, 1, Init::Zeros);
    for sc in (0..cfg.scales).rev() {
        let w = cfg.width(sc);
        s.conv(&format!("{p}dec{sc}.up"), c, w, 3, Init::FanInUniform);
        s.conv(&format!("{p}dec{sc}.gfmb.l1"), 3, cfg.gfmb_hidden, 1, Init::FanInUniform);
        s.conv(&format!("{p}dec{sc}.gfmb.l2"), cfg.gfmb_hidden, 2 * w, 1, Init::Zeros);
        for b in 0..cfg.blocks_per_scale {
            s.lfeb(&format!("{p}dec{sc}.b{b}"), w, w);
        }
        c = w;
    }
    s.conv(&format!("{p}out"), c0, 3, 3, Init::Uniform(1e-2 / ((c0 * 9) as f64).sqrt()));
    s.0
}

pub fn register_module<T: Float>(store: &mut ParamStore<T>, cfg: &ModelConfig, dir: Direction, rng: &mut impl Rng) -> Result<()> {
    for spec in module_specs(cfg, dir) {
        store.register(&spec.name, &spec.shape, spec.init, rng)?;
    }
    Ok(())
}

fn conv<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var, spec: ConvSpec) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    Ok(g.conv2d(x, w, Some(b), spec)?)
}

fn conv_k<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let k = p.value(&format!("{name}.w"))?.shape()[2];
    conv(g, p, name, x, ConvSpec::same(k))
}

/// Squeeze-excitation style channel gate.
pub fn channel_attention<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var, slope: f64) -> Result<Var> {
    let s = g.global_avg_pool(x)?;
    let s = conv_k(g, p, &format!("{name}.ca1"), s)?;
    let s = g.leaky_relu(s, slope);
    let s = conv_k(g, p, &format!("{name}.ca2"), s)?;
    let gate = g.sigmoid(s);
    Ok(g.mul(x, gate)?)
}

/// Per-pixel gate from channel mean/max maps.
pub fn spatial_attention<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let m = g.channel_mean_max(x)?;
    let s = conv_k(g, p, &format!("{name}.sa"), m)?;
    let gate = g.sigmoid(s);
    Ok(g.mul(x, gate)?)
}

/// Local feature extraction block: conv, half instance norm, activation,
/// conv, channel then spatial attention, plus a (projected) skip.
pub fn lfeb<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var, slope: f64) -> Result<Var> {
    let h = conv_k(g, p, &format!("{name}.c1"), x)?;
    let gamma = g.param(p, &format!("{name}.hin.g"))?;
    let beta = g.param(p, &format!("{name}.hin.b"))?;
    let h = g.half_instance_norm(h, gamma, beta)?;
    let h = g.leaky_relu(h, slope);
    let h = conv_k(g, p, &format!("{name}.c2"), h)?;
    let h = channel_attention(g, p, name, h, slope)?;
    let h = spatial_attention(g, p, name, h)?;
    let skip_name = format!("{name}.skip");
    let skip = if p.contains(&format!("{skip_name}.w")) { conv_k(g, p, &skip_name, x)? } else { x };
    Ok(g.add(h, skip)?)
}

/// EXIF-conditioned modulation `r·(1+γ) + β` of a skip feature.
/// `exif` is `N×3×1×1`.
pub fn gfmb<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, residual: Var, exif: Var, slope: f64) -> Result<Var> {
    let c = g.value(residual).shape()[1];
    let h = conv_k(g, p, &format!("{name}.l1"), exif)?;
    let h = g.leaky_relu(h, slope);
    let h = conv_k(g, p, &format!("{name}.l2"), h)?;
    if g.value(h).shape()[1] != 2 * c {
        return Err(Error::Shape(format!("GFMB `{name}` produces {} channels for a {c}-channel residual", g.value(h).shape()[1])));
    }
    let gamma = g.slice_channels(h, 0, c)?;
    let beta = g.slice_channels(h, c, 2 * c)?;
    let scaled = g.mul(residual, gamma)?;
    let r = g.add(residual, scaled)?;
    Ok(g.add(r, beta)?)
}

/// Context tokens `N×k×(D/k)` for a batch of cameras; `None` is the neutral
/// zero embedding, which is a constant and never receives gradient.
pub fn context<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, cameras: &[Option<&str>]) -> Result<Var> {
    let mut rows = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let v = match cam {
            Some(id) => {
                let name = embedding_name(id);
                if !p.contains(&name) {
                    return Err(Error::UnknownCamera((*id).to_string()));
                }
                g.param(p, &name)?
            }
            None => g.constant(Tensor::zeros(&[cfg.embed_dim])),
        };
        if g.value(v).len() != cfg.embed_dim {
            return Err(Error::Shape(format!("embedding length {} != {}", g.value(v).len(), cfg.embed_dim)));
        }
        rows.push(v);
    }
    let stacked = g.stack(&rows)?;
    Ok(g.reshape(stacked, &[cameras.len(), cfg.context_tokens, cfg.token_dim()])?)
}

/// Cross-attention of bottleneck tokens over the embedding context, added
/// residually: `F = B + W_o·softmax(QKᵀ/√d)V`.
pub fn deim<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, dir: Direction, b: Var, ctx: Var) -> Result<Var> {
    let pre = dir.prefix();
    let [n, _, h, w] = g.value(b).dims4();
    let cs = g.value(ctx).shape();
    if cs.len() != 3 || cs[0] != n || cs[2] != cfg.token_dim() {
        return Err(Error::Shape(format!("context {:?} for bottleneck batch {n}", cs)));
    }
    let d = cfg.attn_dim;
    let q = conv_k(g, p, &format!("{pre}deim.q"), b)?;
    let q = g.reshape(q, &[n, d, h * w])?;
    let wk = g.param(p, &format!("{pre}deim.wk"))?;
    let wv = g.param(p, &format!("{pre}deim.wv"))?;
    let k = g.bmm(ctx, wk, false, false)?;
    let v = g.bmm(ctx, wv, false, false)?;
    let logits = g.bmm(q, k, true, true)?;
    let logits = g.scale(logits, 1.0 / (d as f64).sqrt());
    let attn = g.softmax(logits);
    let o = g.bmm(v, attn, true, true)?;
    let o = g.reshape(o, &[n, d, h, w])?;
    let o = conv_k(g, p, &format!("{pre}deim.out"), o)?;
    Ok(g.add(b, o)?)
}

/// Encoder outputs needed by the decoder.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub input: Var,
    pub exif: Var,
    /// Pre-pooling features per scale, shallowest first.
    pub skips: Vec<Var>,
    /// Bottleneck features `B`.
    pub bottleneck: Var,
}

pub fn encode<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, dir: Direction, x: Var, exif: Var) -> Result<Encoded> {
    let [n, c, h, w] = g.value(x).dims4();
    if c != 3 {
        return Err(Error::Shape(format!("model input needs 3 channels, got {c}")));
    }
    let m = cfg.multiple();
    if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("input {h}×{w} is not a multiple of {m}")));
    }
    if g.value(exif).shape() != [n, 3, 1, 1] {
        return Err(Error::Shape(format!("exif tensor {:?} for batch {n}", g.value(exif).shape())));
    }
    let pre = dir.prefix();
    let mut h_ = conv_k(g, p, &format!("{pre}in"), x)?;
    let mut skips = Vec::with_capacity(cfg.scales);
    for sc in 0..cfg.scales {
        for b in 0..cfg.blocks_per_scale {
            h_ = lfeb(g, p, &format!("{pre}enc{sc}.b{b}"), h_, cfg.leaky_slope)?;
        }
        skips.push(h_);
        h_ = g.maxpool2(h_)?;
    }
    Ok(Encoded { input: x, exif, skips, bottleneck: h_ })
}

/// The standard conversion the learned residual is added to: `s(x)` for the
/// inverse module, `s⁻¹(x)` for the forward one.
pub fn standard_conversion<T: Float>(g: &mut Graph<T>, dir: Direction, x: Var) -> Result<Var> {
    let to_tensor = |m: [[f64; 3]; 3]| Tensor::from_vec(&[3, 3, 1, 1], m.iter().flatten().map(|&v| T::lit(v)).collect()).expect("3x3");
    match dir {
        Direction::Inverse => {
            let lin = g.unary(x, Unary::SrgbDecode);
            let m = g.constant(to_tensor(SRGB_TO_XYZ));
            Ok(g.conv2d(lin, m, None, ConvSpec::same(1))?)
        }
        Direction::Forward => {
            let m = g.constant(to_tensor(xyz_to_srgb_matrix()));
            let lin = g.conv2d(x, m, None, ConvSpec::same(1))?;
            Ok(g.unary(lin, Unary::SrgbEncode))
        }
    }
}

pub fn decode<T: Float>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, dir: Direction, f: Var, enc: &Encoded) -> Result<Var> {
    if g.value(f).shape() != g.value(enc.bottleneck).shape() {
        return Err(Error::Shape(format!("features {:?} vs bottleneck {:?}", g.value(f).shape(), g.value(enc.bottleneck).shape())));
    }
    let pre = dir.prefix();
    let mut h = f;
    for sc in (0..cfg.scales).rev() {
        h = g.upsample2(h)?;
        h = conv_k(g, p, &format!("{pre}dec{sc}.up"), h)?;
        let r = gfmb(g, p, &format!("{pre}dec{sc}.gfmb"), enc.skips[sc], enc.exif, cfg.leaky_slope)?;
        h = g.add(h, r)?;
        for b in 0..cfg.blocks_per_scale {
            h = lfeb(g, p, &format!("{pre}dec{sc}.b{b}"), h, cfg.leaky_slope)?;
        }
    }
    let delta = conv_k(g, p, &format!("{pre}out"), h)?;
    let base = standard_conversion(g, dir, enc.input)?;
    let y = g.add(base, delta)?;
    Ok(match dir {
        Direction::Inverse => g.softplus(y, cfg.softplus_beta),
        Direction::Forward => g.guided_clamp(y, 0.0, 1.0),
    })
}

/// Full module pass with intermediate features exposed.
pub struct ModuleOutput {
    pub output: Var,
    pub bottleneck: Var,
    pub features: Var,
}

pub fn run_module<T: Float>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    dir: Direction,
    x: Var,
    exif: Var,
    ctx: Var,
) -> Result<ModuleOutput> {
    let enc = encode(g, p, cfg, dir, x, exif)?;
    let f = deim(g, p, cfg, dir, enc.bottleneck, ctx)?;
    let output = decode(g, p, cfg, dir, f, &enc)?;
    Ok(ModuleOutput { output, bottleneck: enc.bottleneck, features: f })
}
