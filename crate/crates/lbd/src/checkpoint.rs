//! Model checkpoints: one self-describing container for every model kind,
//! serialized either as JSON or as a bit-exact binary format.
//!
//! The binary layout is little-endian throughout: the `LBDC` magic, a format
//! version, a model-kind tag, the rating scale, then the model's config
//! fields and parameter tensors. Tensor payloads are raw IEEE-754 bits, so a
//! save/load round trip reproduces parameters exactly. Decoding validates
//! sizes against the remaining input before allocating and rejects anything
//! structurally inconsistent, so arbitrary bytes cannot panic or exhaust
//! memory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{CmfModel, MfModel, OrdRecModel, OrdRecVariant};
use crate::data::{Interaction, RatingScale};
use crate::dist::DiscreteRatingDistribution;
use crate::error::{Error, Result};
use crate::lbd::{BiasScheme, Binning, ConfidenceFn, LbdConfig, LbdModel};
use crate::model::{ModelKind, ParamMeta, RatingModel, Tensor};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: [u8; 4] = *b"LBDC";

/// Any trained model, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelState {
    Mf(MfModel),
    Cmf(CmfModel),
    Ordrec(OrdRecModel),
    Lbd(LbdModel),
}

impl ModelState {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelState::Mf(_) => ModelKind::Mf,
            ModelState::Cmf(_) => ModelKind::Cmf,
            ModelState::Ordrec(m) => match m.variant() {
                OrdRecVariant::User => ModelKind::OrdrecU,
                OrdRecVariant::UserItem => ModelKind::OrdrecUi,
            },
            ModelState::Lbd(m) => match m.config().binning {
                Binning::Static => ModelKind::LbdS,
                Binning::Adaptive => ModelKind::LbdA,
            },
        }
    }

    /// Structural consistency of shapes, domains, and flags. Called after
    /// every deserialization path.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Format(format!("invalid checkpoint: {msg}")));
        let check_core = |u: &Tensor,
                          v: &Tensor,
                          b0: &Tensor,
                          bu: &Tensor,
                          bi: &Tensor|
         -> Result<()> {
            if u.rows() == 0 || v.rows() == 0 || u.cols() == 0 || u.cols() != v.cols() {
                return bad("embedding shapes");
            }
            if b0.rows() != 1 || b0.cols() != 1 {
                return bad("global bias shape");
            }
            if bu.rows() != u.rows() || bu.cols() != 1 || bi.rows() != v.rows() || bi.cols() != 1
            {
                return bad("bias vector shapes");
            }
            Ok(())
        };
        match self {
            ModelState::Mf(m) => {
                check_core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item)?;
                if let Some(s) = m.sigma() {
                    if !(s.is_finite() && s > 0.0) {
                        return bad("sigma");
                    }
                }
            }
            ModelState::Cmf(m) => {
                check_core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item)?;
                if m.g0.rows() != 1
                    || m.g0.cols() != 1
                    || m.g_user.rows() != m.u.rows()
                    || m.g_user.cols() != 1
                    || m.g_item.rows() != m.v.rows()
                    || m.g_item.cols() != 1
                {
                    return bad("variance tensor shapes");
                }
            }
            ModelState::Ordrec(m) => {
                check_core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item)?;
                let n = m.scale().n();
                if m.t1.rows() != m.u.rows() || m.t1.cols() != 1 {
                    return bad("threshold shape");
                }
                if m.c.rows() != m.u.rows() || m.c.cols() != n - 2 {
                    return bad("increment shape");
                }
                match (&m.d, m.variant()) {
                    (None, OrdRecVariant::User) => {}
                    (Some(d), OrdRecVariant::UserItem) => {
                        if d.rows() != m.v.rows() || d.cols() != n - 2 {
                            return bad("item increment shape");
                        }
                    }
                    _ => return bad("variant/item-increment mismatch"),
                }
            }
            ModelState::Lbd(m) => {
                let cfg = m.config();
                cfg.validate()?;
                let d = cfg.embedding_dim;
                if m.u.cols() != d || m.v.cols() != d || m.u.rows() == 0 || m.v.rows() == 0 {
                    return bad("embedding shapes");
                }
                for t in [&m.u, &m.v].into_iter().chain(m.u_conf.iter()).chain(m.v_conf.iter())
                {
                    for r in 0..t.rows() {
                        if t.row(r).iter().all(|&x| x == 0.0) {
                            return bad("zero embedding row");
                        }
                    }
                }
                match (&m.u_conf, &m.v_conf, cfg.separate_embeddings) {
                    (None, None, false) => {}
                    (Some(a), Some(b), true) => {
                        if a.rows() != m.u.rows()
                            || a.cols() != d
                            || b.rows() != m.v.rows()
                            || b.cols() != d
                        {
                            return bad("confidence embedding shapes");
                        }
                    }
                    _ => return bad("separate-embedding flag mismatch"),
                }
                match (&m.ab, cfg.bias_scheme) {
                    (Some(ab), BiasScheme::AlphaBeta) => {
                        let ok = ab.a0.len() == 1
                            && ab.b0.len() == 1
                            && ab.a_user.rows() == m.u.rows()
                            && ab.b_user.rows() == m.u.rows()
                            && ab.a_item.rows() == m.v.rows()
                            && ab.b_item.rows() == m.v.rows()
                            && [&ab.a_user, &ab.b_user, &ab.a_item, &ab.b_item]
                                .iter()
                                .all(|t| t.cols() == 1);
                        if !ok {
                            return bad("alpha/beta bias shapes");
                        }
                    }
                    (None, BiasScheme::AlphaBeta) => return bad("missing alpha/beta biases"),
                    (Some(_), _) => return bad("unexpected alpha/beta biases"),
                    (None, _) => {}
                }
                match (&m.mn, cfg.bias_scheme) {
                    (Some(mn), BiasScheme::MuNu) => {
                        let shapes_ok = mn.u0.len() == 1
                            && mn.v0.len() == 1
                            && mn.u_user.rows() == m.u.rows()
                            && mn.v_user.rows() == m.u.rows()
                            && mn.u_item.rows() == m.v.rows()
                            && mn.v_item.rows() == m.v.rows()
                            && [&mn.u_user, &mn.v_user, &mn.u_item, &mn.v_item]
                                .iter()
                                .all(|t| t.cols() == 1);
                        if !shapes_ok {
                            return bad("mu/nu bias shapes");
                        }
                        let u_ok = [&mn.u0, &mn.u_user, &mn.u_item]
                            .iter()
                            .all(|t| t.as_slice().iter().all(|&x| x > 0.0 && x < 1.0));
                        let v_ok = [&mn.v0, &mn.v_user, &mn.v_item]
                            .iter()
                            .all(|t| t.as_slice().iter().all(|&x| x > 0.0));
                        if !(u_ok && v_ok) {
                            return bad("mu/nu bias domains");
                        }
                    }
                    (None, BiasScheme::MuNu) => return bad("missing mu/nu biases"),
                    (Some(_), _) => return bad("unexpected mu/nu biases"),
                    (None, _) => {}
                }
                let n = m.scale().n();
                match (&m.theta_user, &m.theta_item, cfg.binning) {
                    (None, None, Binning::Static) => {}
                    (Some(tu), Some(ti), Binning::Adaptive) => {
                        if tu.rows() != m.u.rows()
                            || tu.cols() != n
                            || ti.rows() != m.v.rows()
                            || ti.cols() != n
                        {
                            return bad("theta shapes");
                        }
                    }
                    _ => return bad("binning/theta mismatch"),
                }
            }
        }
        Ok(())
    }
}

impl RatingModel for ModelState {
    fn scale(&self) -> RatingScale {
        match self {
            ModelState::Mf(m) => m.scale(),
            ModelState::Cmf(m) => m.scale(),
            ModelState::Ordrec(m) => m.scale(),
            ModelState::Lbd(m) => m.scale(),
        }
    }

    fn num_users(&self) -> usize {
        match self {
            ModelState::Mf(m) => m.num_users(),
            ModelState::Cmf(m) => m.num_users(),
            ModelState::Ordrec(m) => m.num_users(),
            ModelState::Lbd(m) => m.num_users(),
        }
    }

    fn num_items(&self) -> usize {
        match self {
            ModelState::Mf(m) => m.num_items(),
            ModelState::Cmf(m) => m.num_items(),
            ModelState::Ordrec(m) => m.num_items(),
            ModelState::Lbd(m) => m.num_items(),
        }
    }

    fn distribution(&self, user: u32, item: u32) -> Result<DiscreteRatingDistribution> {
        match self {
            ModelState::Mf(m) => m.distribution(user, item),
            ModelState::Cmf(m) => m.distribution(user, item),
            ModelState::Ordrec(m) => m.distribution(user, item),
            ModelState::Lbd(m) => m.distribution(user, item),
        }
    }

    fn mean_estimate(&self, user: u32, item: u32) -> Result<f64> {
        match self {
            ModelState::Mf(m) => m.mean_estimate(user, item),
            ModelState::Cmf(m) => m.mean_estimate(user, item),
            ModelState::Ordrec(m) => m.mean_estimate(user, item),
            ModelState::Lbd(m) => m.mean_estimate(user, item),
        }
    }

    fn param_meta(&self) -> Vec<ParamMeta> {
        match self {
            ModelState::Mf(m) => m.param_meta(),
            ModelState::Cmf(m) => m.param_meta(),
            ModelState::Ordrec(m) => m.param_meta(),
            ModelState::Lbd(m) => m.param_meta(),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            ModelState::Mf(m) => m.params(),
            ModelState::Cmf(m) => m.params(),
            ModelState::Ordrec(m) => m.params(),
            ModelState::Lbd(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ModelState::Mf(m) => m.params_mut(),
            ModelState::Cmf(m) => m.params_mut(),
            ModelState::Ordrec(m) => m.params_mut(),
            ModelState::Lbd(m) => m.params_mut(),
        }
    }

    fn accumulate_batch(&self, batch: &[Interaction], grads: &mut [Tensor]) -> Result<f64> {
        match self {
            ModelState::Mf(m) => m.accumulate_batch(batch, grads),
            ModelState::Cmf(m) => m.accumulate_batch(batch, grads),
            ModelState::Ordrec(m) => m.accumulate_batch(batch, grads),
            ModelState::Lbd(m) => m.accumulate_batch(batch, grads),
        }
    }
}

/// The on-disk container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    #[serde(flatten)]
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(model: ModelState) -> Self {
        Self { format_version: FORMAT_VERSION, model }
    }

    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes)?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAGIC);
        w.u32(self.format_version);
        match &self.model {
            ModelState::Mf(m) => {
                w.u8(0);
                w.scale(m.scale());
                w.core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item);
                match m.sigma() {
                    Some(s) => {
                        w.u8(1);
                        w.f64(s);
                    }
                    None => w.u8(0),
                }
            }
            ModelState::Cmf(m) => {
                w.u8(1);
                w.scale(m.scale());
                w.core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item);
                w.tensor(&m.g0);
                w.tensor(&m.g_user);
                w.tensor(&m.g_item);
            }
            ModelState::Ordrec(m) => {
                w.u8(2);
                w.scale(m.scale());
                w.u8(match m.variant() {
                    OrdRecVariant::User => 0,
                    OrdRecVariant::UserItem => 1,
                });
                w.core(&m.u, &m.v, &m.b0, &m.b_user, &m.b_item);
                w.tensor(&m.t1);
                w.tensor(&m.c);
                if let Some(d) = &m.d {
                    w.tensor(d);
                }
            }
            ModelState::Lbd(m) => {
                w.u8(3);
                w.scale(m.scale());
                let cfg = m.config();
                w.u64(cfg.embedding_dim as u64);
                w.u8(match cfg.confidence_fn {
                    ConfidenceFn::Norm => 0,
                    ConfidenceFn::Sum => 1,
                    ConfidenceFn::Dot => 2,
                });
                w.u8(match cfg.bias_scheme {
                    BiasScheme::None => 0,
                    BiasScheme::AlphaBeta => 1,
                    BiasScheme::MuNu => 2,
                });
                w.u8(match cfg.binning {
                    Binning::Static => 0,
                    Binning::Adaptive => 1,
                });
                w.u8(cfg.separate_embeddings as u8);
                w.f64(cfg.epsilon);
                w.f64(cfg.mu_clamp);
                for t in m.params() {
                    w.tensor(t);
                }
            }
        }
        w.out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.u8()?;
        let scale = r.scale()?;
        let model = match kind {
            0 => {
                let (u, v, b0, b_user, b_item) = r.core()?;
                let sigma = match r.u8()? {
                    0 => None,
                    1 => Some(r.f64()?),
                    _ => return Err(Error::Format("bad sigma flag".into())),
                };
                ModelState::Mf(MfModel { scale, u, v, b0, b_user, b_item, sigma })
            }
            1 => {
                let (u, v, b0, b_user, b_item) = r.core()?;
                let g0 = r.tensor()?;
                let g_user = r.tensor()?;
                let g_item = r.tensor()?;
                ModelState::Cmf(CmfModel { scale, u, v, b0, b_user, b_item, g0, g_user, g_item })
            }
            2 => {
                let variant = match r.u8()? {
                    0 => OrdRecVariant::User,
                    1 => OrdRecVariant::UserItem,
                    _ => return Err(Error::Format("bad ordinal variant".into())),
                };
                let (u, v, b0, b_user, b_item) = r.core()?;
                let t1 = r.tensor()?;
                let c = r.tensor()?;
                let d = match variant {
                    OrdRecVariant::User => None,
                    OrdRecVariant::UserItem => Some(r.tensor()?),
                };
                ModelState::Ordrec(OrdRecModel {
                    scale,
                    variant,
                    u,
                    v,
                    b0,
                    b_user,
                    b_item,
                    t1,
                    c,
                    d,
                })
            }
            3 => {
                let embedding_dim = r.u64()? as usize;
                let confidence_fn = match r.u8()? {
                    0 => ConfidenceFn::Norm,
                    1 => ConfidenceFn::Sum,
                    2 => ConfidenceFn::Dot,
                    _ => return Err(Error::Format("bad confidence function".into())),
                };
                let bias_scheme = match r.u8()? {
                    0 => BiasScheme::None,
                    1 => BiasScheme::AlphaBeta,
                    2 => BiasScheme::MuNu,
                    _ => return Err(Error::Format("bad bias scheme".into())),
                };
                let binning = match r.u8()? {
                    0 => Binning::Static,
                    1 => Binning::Adaptive,
                    _ => return Err(Error::Format("bad binning".into())),
                };
                let separate_embeddings = match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => return Err(Error::Format("bad separate-embeddings flag".into())),
                };
                let config = LbdConfig {
                    embedding_dim,
                    confidence_fn,
                    bias_scheme,
                    binning,
                    epsilon: r.f64()?,
                    mu_clamp: r.f64()?,
                    separate_embeddings,
                };
                let u = r.tensor()?;
                let v = r.tensor()?;
                let (u_conf, v_conf) = if separate_embeddings {
                    (Some(r.tensor()?), Some(r.tensor()?))
                } else {
                    (None, None)
                };
                let ab = match bias_scheme {
                    BiasScheme::AlphaBeta => Some(crate::lbd::AlphaBetaBias {
                        a0: r.tensor()?,
                        b0: r.tensor()?,
                        a_user: r.tensor()?,
                        b_user: r.tensor()?,
                        a_item: r.tensor()?,
                        b_item: r.tensor()?,
                    }),
                    _ => None,
                };
                let mn = match bias_scheme {
                    BiasScheme::MuNu => Some(crate::lbd::MuNuBias {
                        u0: r.tensor()?,
                        v0: r.tensor()?,
                        u_user: r.tensor()?,
                        v_user: r.tensor()?,
                        u_item: r.tensor()?,
                        v_item: r.tensor()?,
                    }),
                    _ => None,
                };
                let (theta_user, theta_item) = match binning {
                    Binning::Adaptive => (Some(r.tensor()?), Some(r.tensor()?)),
                    Binning::Static => (None, None),
                };
                ModelState::Lbd(LbdModel {
                    scale,
                    config,
                    u,
                    v,
                    u_conf,
                    v_conf,
                    ab,
                    mn,
                    theta_user,
                    theta_item,
                })
            }
            other => return Err(Error::Format(format!("unknown model kind tag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        let ckpt = Checkpoint { format_version: version, model };
        ckpt.model.validate()?;
        Ok(ckpt)
    }

    /// Write the binary form.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_binary())?;
        Ok(())
    }

    /// Load either form, sniffing the binary magic.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() >= 4 && bytes[..4] == MAGIC {
            Self::from_binary(&bytes)
        } else {
            Self::from_json(&bytes)
        }
    }
}

#[derive(Default)]
struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.out.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn scale(&mut self, s: RatingScale) {
        self.f64(s.r_min());
        self.f64(s.step());
        self.u64(s.n() as u64);
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u64(t.rows() as u64);
        self.u64(t.cols() as u64);
        for &x in t.as_slice() {
            self.f64(x);
        }
    }
    fn core(&mut self, u: &Tensor, v: &Tensor, b0: &Tensor, bu: &Tensor, bi: &Tensor) {
        for t in [u, v, b0, bu, bi] {
            self.tensor(t);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("truncated checkpoint".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn scale(&mut self) -> Result<RatingScale> {
        let r_min = self.f64()?;
        let step = self.f64()?;
        let n = self.u64()?;
        RatingScale::from_raw(r_min, step, n as usize)
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let count = (rows as u128) * (cols as u128);
        let remaining = (self.bytes.len() - self.pos) as u128;
        if count * 8 > remaining {
            return Err(Error::Format("tensor larger than remaining input".into()));
        }
        let count = count as usize;
        let mut data = Vec::with_capacity(count);
        for _ in 0..count {
            let x = self.f64()?;
            if !x.is_finite() {
                return Err(Error::Format("non-finite tensor entry".into()));
            }
            data.push(x);
        }
        Tensor::from_parts(rows, cols, data)
    }
    fn core(&mut self) -> Result<(Tensor, Tensor, Tensor, Tensor, Tensor)> {
        Ok((self.tensor()?, self.tensor()?, self.tensor()?, self.tensor()?, self.tensor()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::seeded_rng;
    use rand::Rng;

    fn scale() -> RatingScale {
        RatingScale::half_point()
    }

    fn perturb(model: &mut ModelState, seed: u64) {
        let mut rng = seeded_rng(seed);
        for t in model.params_mut() {
            for x in t.as_mut_slice() {
                *x += rng.gen_range(-0.3..0.3);
            }
        }
    }

    fn sample_states() -> Vec<ModelState> {
        let mut mf = MfModel::init(scale(), 5, 4, 3, 1).unwrap();
        mf.fit_sigma(
            &crate::data::RatingDataset::from_dense(
                vec![Interaction { user: 0, item: 0, rating: 4 }],
                5,
                4,
                scale(),
            )
            .unwrap(),
            &[0],
        )
        .unwrap();
        let cmf = CmfModel::init(scale(), 5, 4, 3, 2).unwrap();
        let oru = OrdRecModel::init(scale(), 5, 4, 3, OrdRecVariant::User, 3).unwrap();
        let orui = OrdRecModel::init(scale(), 5, 4, 3, OrdRecVariant::UserItem, 4).unwrap();
        let mut states = vec![
            ModelState::Mf(mf),
            ModelState::Cmf(cmf),
            ModelState::Ordrec(oru),
            ModelState::Ordrec(orui),
        ];
        for (fi, f) in [ConfidenceFn::Sum, ConfidenceFn::Norm].into_iter().enumerate() {
            for (bi, bias) in
                [BiasScheme::None, BiasScheme::AlphaBeta, BiasScheme::MuNu].into_iter().enumerate()
            {
                for (gi, binning) in [Binning::Static, Binning::Adaptive].into_iter().enumerate() {
                    let cfg = LbdConfig {
                        embedding_dim: 3,
                        confidence_fn: f,
                        bias_scheme: bias,
                        binning,
                        separate_embeddings: fi == 0 && bi == 0 && gi == 0,
                        ..LbdConfig::default()
                    };
                    states.push(ModelState::Lbd(
                        LbdModel::init(scale(), 5, 4, cfg, 50 + (fi * 9 + bi * 3 + gi) as u64)
                            .unwrap(),
                    ));
                }
            }
        }
        for (i, s) in states.iter_mut().enumerate() {
            if !matches!(s, ModelState::Lbd(m) if m.mn.is_some()) {
                perturb(s, 900 + i as u64);
            }
        }
        states
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        for state in sample_states() {
            let ckpt = Checkpoint::new(state);
            let bytes = ckpt.to_binary();
            let back = Checkpoint::from_binary(&bytes).unwrap();
            assert_eq!(ckpt.kind(), back.kind());
            for (a, b) in ckpt.model.params().iter().zip(back.model.params()) {
                assert!(a.same_shape(b));
                for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            // Identical bytes on re-encode.
            assert_eq!(bytes, back.to_binary());
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        for state in sample_states() {
            let ckpt = Checkpoint::new(state);
            let json = ckpt.to_json().unwrap();
            let back = Checkpoint::from_json(json.as_bytes()).unwrap();
            assert_eq!(ckpt.kind(), back.kind());
            let a = ckpt.model.distribution(0, 0).unwrap();
            let b = back.model.distribution(0, 0).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn decode_rejects_malformed_input() {
        let good = Checkpoint::new(sample_states().remove(0)).to_binary();

        assert!(Checkpoint::from_binary(b"").is_err());
        assert!(Checkpoint::from_binary(b"XXXX").is_err());
        assert!(Checkpoint::from_binary(&good[..good.len() - 1]).is_err());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(Checkpoint::from_binary(&bad_magic).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 99;
        assert!(Checkpoint::from_binary(&bad_version).is_err());

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Checkpoint::from_binary(&trailing).is_err());

        // A tensor header promising more data than exists must not allocate.
        let mut huge = good.clone();
        let rows_at = 4 + 4 + 1 + 24; // magic, version, kind, scale
        huge[rows_at..rows_at + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(Checkpoint::from_binary(&huge).is_err());
    }

    #[test]
    fn json_decode_validates_shapes() {
        let ckpt = Checkpoint::new(sample_states().remove(0));
        let json = ckpt.to_json().unwrap();
        // Tamper: tensor data length inconsistent with rows/cols.
        let bad = json.replace("\"rows\":5", "\"rows\":6");
        assert!(Checkpoint::from_json(bad.as_bytes()).is_err());
    }

    #[test]
    fn save_and_load_sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = Checkpoint::new(sample_states().remove(1));

        let bin_path = dir.path().join("model.ckpt");
        ckpt.save(&bin_path).unwrap();
        let back = Checkpoint::load(&bin_path).unwrap();
        assert_eq!(ckpt, back);

        let json_path = dir.path().join("model.json");
        std::fs::write(&json_path, ckpt.to_json().unwrap()).unwrap();
        let back = Checkpoint::load(&json_path).unwrap();
        assert_eq!(ckpt.kind(), back.kind());
    }
}
