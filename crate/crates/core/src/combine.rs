//! The seven combination functions mapping a small-expert distribution `pS`
//! and a large-generalist distribution `pL` to a combined distribution.
//!
//! `λ` is always the weight on the **small** model:
//!
//! * scalar kinds: `pC = λ·pS + (1-λ)·pL`
//! * vector kinds: `pC = (λ∘pS + (1-λ)∘pL) / Z`, `Z = Σ_v λ_v pS_v + (1-λ_v) pL_v`
//!
//! Constant kinds hold pre-sigmoid `raw_lambda`; entropy kinds feed
//! `(H(pS), H(pL))` in nats to a network, full kinds feed the `2|V|`
//! concatenation `[pS, pL]`.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::lm::Distribution;
use crate::nn::{sigmoid, Adam, Gradients, Mode, Network};

const MAGIC: &[u8; 4] = b"CMB1";

/// Smallest renormalization constant accepted for vector kinds.
pub const MIN_Z: f64 = 1e-12;

pub const HIDDEN: [usize; 2] = [512, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Mean,
    ConstantScalar,
    ConstantVector,
    EntropyScalar,
    EntropyVector,
    FullScalar,
    FullVector,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Mean,
        Kind::ConstantScalar,
        Kind::ConstantVector,
        Kind::EntropyScalar,
        Kind::EntropyVector,
        Kind::FullScalar,
        Kind::FullVector,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Mean => "mean",
            Kind::ConstantScalar => "constant-scalar",
            Kind::ConstantVector => "constant-vector",
            Kind::EntropyScalar => "entropy-scalar",
            Kind::EntropyVector => "entropy-vector",
            Kind::FullScalar => "full-scalar",
            Kind::FullVector => "full-vector",
        }
    }

    pub fn is_vector(self) -> bool {
        matches!(
            self,
            Kind::ConstantVector | Kind::EntropyVector | Kind::FullVector
        )
    }

    pub fn is_constant(self) -> bool {
        matches!(self, Kind::ConstantScalar | Kind::ConstantVector)
    }

    pub fn has_network(self) -> bool {
        !self.is_constant() && self != Kind::Mean
    }

    /// Whether the scalar formula `λ·pS + (1-λ)·pL` applies (mean included,
    /// with λ = 1/2).
    pub fn is_scalar(self) -> bool {
        !self.is_vector()
    }

    /// Adam learning rate used when none is configured.
    pub fn default_lr(self) -> f64 {
        match self {
            Kind::ConstantVector => 1e-2,
            _ => 2e-3,
        }
    }

    fn lambda_dim(self, vocab_size: usize) -> usize {
        if self.is_vector() {
            vocab_size
        } else {
            1
        }
    }

    fn input_dim(self, vocab_size: usize) -> usize {
        match self {
            Kind::EntropyScalar | Kind::EntropyVector => 2,
            Kind::FullScalar | Kind::FullVector => 2 * vocab_size,
            _ => 0,
        }
    }

    fn tag(self) -> u8 {
        Kind::ALL.iter().position(|&k| k == self).expect("listed") as u8
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Kind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown combination kind `{s}`")))
    }
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyPair {
    pub small: f64,
    pub large: f64,
}

impl EntropyPair {
    pub fn of(ps: &[f64], pl: &[f64]) -> Self {
        EntropyPair {
            small: entropy(ps),
            large: entropy(pl),
        }
    }
}

/// Kind tag plus learnable parameters of a combination function.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationParams {
    kind: Kind,
    vocab_size: usize,
    raw_lambda: Vec<f64>,
    net: Option<Network>,
}

/// Gradients with respect to [`CombinationParams`].
#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrads {
    None,
    RawLambda(Vec<f64>),
    Network(Gradients),
}

impl ParamGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        match self {
            ParamGrads::None => Vec::new(),
            ParamGrads::RawLambda(g) => vec![g.as_slice()],
            ParamGrads::Network(g) => g.slices(),
        }
    }
}

/// What a train-mode batch combination keeps for the reverse pass.
#[derive(Debug, Clone)]
pub struct CombineCache {
    ps: Array2<f64>,
    pl: Array2<f64>,
    lambda: Array2<f64>,
    pc: Array2<f64>,
    z: Array1<f64>,
    net: Option<crate::nn::ForwardCache>,
}

impl CombineCache {
    pub fn lambda(&self) -> &Array2<f64> {
        &self.lambda
    }
}

impl CombinationParams {
    /// Fresh parameters: λ = 1/2 for constant kinds, a seeded
    /// `in → BatchNorm → 512 → 512 → out → sigmoid` network otherwise.
    pub fn init(kind: Kind, vocab_size: usize, seed: u64) -> Self {
        Self::init_with_hidden(kind, vocab_size, &HIDDEN, seed)
    }

    pub fn init_with_hidden(kind: Kind, vocab_size: usize, hidden: &[usize], seed: u64) -> Self {
        let raw_lambda = if kind.is_constant() {
            vec![0.0; kind.lambda_dim(vocab_size)]
        } else {
            Vec::new()
        };
        let net = kind.has_network().then(|| {
            Network::gated_mlp(
                kind.input_dim(vocab_size),
                hidden,
                kind.lambda_dim(vocab_size),
                seed,
            )
        });
        CombinationParams {
            kind,
            vocab_size,
            raw_lambda,
            net,
        }
    }

    pub fn mean(vocab_size: usize) -> Self {
        Self::init(Kind::Mean, vocab_size, 0)
    }

    /// Constant kinds from explicit pre-sigmoid values.
    pub fn constant(kind: Kind, vocab_size: usize, raw_lambda: Vec<f64>) -> Result<Self> {
        if !kind.is_constant() {
            return Err(Error::InvalidArgument(format!("{kind} is not a constant kind")));
        }
        if raw_lambda.len() != kind.lambda_dim(vocab_size) {
            return Err(Error::ShapeError(format!(
                "{kind} needs {} raw values, got {}",
                kind.lambda_dim(vocab_size),
                raw_lambda.len()
            )));
        }
        Ok(CombinationParams {
            kind,
            vocab_size,
            raw_lambda,
            net: None,
        })
    }

    /// Network kinds from an explicit network.
    pub fn with_network(kind: Kind, vocab_size: usize, net: Network) -> Result<Self> {
        if !kind.has_network() {
            return Err(Error::InvalidArgument(format!("{kind} has no network")));
        }
        if net.input_dim() != kind.input_dim(vocab_size)
            || net.output_dim() != kind.lambda_dim(vocab_size)
        {
            return Err(Error::ShapeError(format!(
                "{kind} over {vocab_size} tokens needs a {}→{} network, got {}→{}",
                kind.input_dim(vocab_size),
                kind.lambda_dim(vocab_size),
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(CombinationParams {
            kind,
            vocab_size,
            raw_lambda: Vec::new(),
            net: Some(net),
        })
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn raw_lambda(&self) -> &[f64] {
        &self.raw_lambda
    }

    pub fn network(&self) -> Option<&Network> {
        self.net.as_ref()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        if let Some(net) = &mut self.net {
            net.set_mode(mode);
        }
    }

    pub fn param_count(&self) -> usize {
        self.raw_lambda.len() + self.net.as_ref().map_or(0, Network::param_count)
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match &self.net {
            Some(net) => net.params(),
            None if self.raw_lambda.is_empty() => Vec::new(),
            None => vec![self.raw_lambda.as_slice()],
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.net {
            Some(net) => net.params_mut(),
            None if self.raw_lambda.is_empty() => Vec::new(),
            None => vec![self.raw_lambda.as_mut_slice()],
        }
    }

    pub fn adam_step(&mut self, grads: &ParamGrads, adam: &mut Adam) -> Result<()> {
        let g = grads.slices();
        if g.is_empty() {
            return Ok(());
        }
        let mut p = self.param_slices_mut();
        adam.step(&mut p, &g)
    }

    fn check_batch(&self, ps: &ArrayView2<f64>, pl: &ArrayView2<f64>) -> Result<()> {
        for cols in [ps.ncols(), pl.ncols()] {
            if cols != self.vocab_size {
                return Err(Error::VocabMismatch {
                    expected: self.vocab_size,
                    actual: cols,
                });
            }
        }
        if ps.nrows() != pl.nrows() {
            return Err(Error::ShapeError(format!(
                "{} small rows vs {} large rows",
                ps.nrows(),
                pl.nrows()
            )));
        }
        Ok(())
    }

    /// Network input features for a batch of distribution pairs.
    pub fn features(&self, ps: ArrayView2<f64>, pl: ArrayView2<f64>) -> Array2<f64> {
        match self.kind {
            Kind::EntropyScalar | Kind::EntropyVector => {
                let mut f = Array2::zeros((ps.nrows(), 2));
                for (i, (s, l)) in ps.rows().into_iter().zip(pl.rows()).enumerate() {
                    f[[i, 0]] = entropy(s.as_slice().unwrap_or(&s.to_vec()));
                    f[[i, 1]] = entropy(l.as_slice().unwrap_or(&l.to_vec()));
                }
                f
            }
            Kind::FullScalar | Kind::FullVector => {
                concatenate(Axis(1), &[ps, pl]).expect("row counts checked")
            }
            _ => Array2::zeros((ps.nrows(), 0)),
        }
    }

    /// λ per row (`B×1` for scalar kinds, `B×|V|` for vector kinds) using
    /// eval-mode networks.
    pub fn lambda_batch(&self, ps: ArrayView2<f64>, pl: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_batch(&ps, &pl)?;
        let b = ps.nrows();
        match self.kind {
            Kind::Mean => Ok(Array2::from_elem((b, 1), 0.5)),
            Kind::ConstantScalar | Kind::ConstantVector => Ok(self.constant_lambda(b)),
            _ => {
                let net = self.net.as_ref().expect("network kinds carry a network");
                net.predict(self.features(ps, pl).view())
            }
        }
    }

    fn constant_lambda(&self, rows: usize) -> Array2<f64> {
        let row: Array1<f64> = self.raw_lambda.iter().map(|&r| sigmoid(r)).collect();
        row.broadcast((rows, row.len()))
            .expect("row broadcast")
            .to_owned()
    }

    /// Eval-mode combination of a batch: one combined distribution per row.
    pub fn combine_batch(&self, ps: ArrayView2<f64>, pl: ArrayView2<f64>) -> Result<Array2<f64>> {
        let lambda = self.lambda_batch(ps, pl)?;
        Ok(mix(self.kind, &lambda, &ps, &pl)?.0)
    }

    /// Combines one pair of distributions (eval mode).
    pub fn combine(&self, ps: &[f64], pl: &[f64]) -> Result<Distribution> {
        let ps = ArrayView2::from_shape((1, ps.len()), ps)
            .map_err(|e| Error::ShapeError(e.to_string()))?;
        let pl = ArrayView2::from_shape((1, pl.len()), pl)
            .map_err(|e| Error::ShapeError(e.to_string()))?;
        let pc = self.combine_batch(ps, pl)?;
        Ok(Distribution::new_unchecked(pc.row(0).to_vec()))
    }

    /// The weight on the small model for one pair. Scalar kinds return a
    /// single value, vector kinds one per token.
    pub fn lambda_of(&self, ps: &[f64], pl: &[f64]) -> Result<Vec<f64>> {
        if self.kind == Kind::Mean {
            return Err(Error::NoLambda(self.kind.name()));
        }
        let ps = ArrayView2::from_shape((1, ps.len()), ps)
            .map_err(|e| Error::ShapeError(e.to_string()))?;
        let pl = ArrayView2::from_shape((1, pl.len()), pl)
            .map_err(|e| Error::ShapeError(e.to_string()))?;
        Ok(self.lambda_batch(ps, pl)?.row(0).to_vec())
    }

    /// Batch combination in the network's current mode, keeping what the
    /// reverse pass needs. In train mode batch-norm statistics come from
    /// this batch.
    pub fn combine_train(
        &mut self,
        ps: ArrayView2<f64>,
        pl: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, CombineCache)> {
        self.check_batch(&ps, &pl)?;
        let b = ps.nrows();
        let (lambda, net_cache) = match self.kind {
            Kind::Mean => (Array2::from_elem((b, 1), 0.5), None),
            Kind::ConstantScalar | Kind::ConstantVector => (self.constant_lambda(b), None),
            _ => {
                let features = self.features(ps, pl);
                let net = self.net.as_mut().expect("network kinds carry a network");
                let (out, cache) = net.forward(features.view())?;
                (out, Some(cache))
            }
        };
        let (pc, z) = mix(self.kind, &lambda, &ps, &pl)?;
        let cache = CombineCache {
            ps: ps.to_owned(),
            pl: pl.to_owned(),
            lambda,
            pc: pc.clone(),
            z,
            net: net_cache,
        };
        Ok((pc, cache))
    }

    /// Reverse pass from dLoss/dpC (`B×|V|`) to parameter gradients. The
    /// input distributions are treated as constants.
    pub fn backward(&self, cache: &CombineCache, d_pc: ArrayView2<f64>) -> Result<ParamGrads> {
        if d_pc.dim() != cache.pc.dim() {
            return Err(Error::ShapeError(format!(
                "upstream gradient has shape {:?}, combined batch has {:?}",
                d_pc.dim(),
                cache.pc.dim()
            )));
        }
        let diff = &cache.ps - &cache.pl;
        let d_lambda: Array2<f64> = if self.kind.is_vector() {
            // pC = u/Z  =>  dL/du_v = (g_v - Σ_w g_w pC_w) / Z
            let dot = (&d_pc * &cache.pc).sum_axis(Axis(1));
            let mut du = d_pc.to_owned();
            for (mut row, (&s, &z)) in du.rows_mut().into_iter().zip(dot.iter().zip(&cache.z)) {
                row.mapv_inplace(|g| (g - s) / z);
            }
            du * &diff
        } else {
            (&d_pc * &diff).sum_axis(Axis(1)).insert_axis(Axis(1))
        };
        match self.kind {
            Kind::Mean => Ok(ParamGrads::None),
            Kind::ConstantScalar | Kind::ConstantVector => {
                // dλ/draw = λ(1-λ); the same raw value is shared by every row
                let d_raw = (&d_lambda * &cache.lambda.mapv(|l| l * (1.0 - l))).sum_axis(Axis(0));
                Ok(ParamGrads::RawLambda(d_raw.to_vec()))
            }
            _ => {
                let net = self.net.as_ref().expect("network kinds carry a network");
                let net_cache = cache.net.as_ref().ok_or(Error::CacheMismatch)?;
                Ok(ParamGrads::Network(net.backward(net_cache, d_lambda.view())?))
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// `CMB1`: magic, u8 kind tag, u32 vocab size, then either u32 length +
    /// f32 raw λ values (constant kinds) or an embedded `CNN1` network.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_magic(w, MAGIC)?;
        w.write_u8(self.kind.tag())?;
        w.write_u32::<LE>(self.vocab_size as u32)?;
        if self.kind.is_constant() {
            w.write_u32::<LE>(self.raw_lambda.len() as u32)?;
            binio::write_f32s(w, self.raw_lambda.iter().map(|&x| x as f32))?;
        }
        if let Some(net) = &self.net {
            net.write_to(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file)).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Reads a `CMB1` checkpoint; networks come back in eval mode.
    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<Self> {
        binio::expect_magic(r, MAGIC)?;
        let tag = r.read_u8()? as usize;
        let kind = *Kind::ALL
            .get(tag)
            .ok_or_else(|| binio::invalid(format!("unknown kind tag {tag}")))?;
        let vocab_size = r.read_u32::<LE>()? as usize;
        let invalid = |e: Error| binio::invalid(e.to_string());
        if kind.is_constant() {
            let n = r.read_u32::<LE>()? as usize;
            let raw = binio::read_f32s(r, n)?.into_iter().map(f64::from).collect();
            Self::constant(kind, vocab_size, raw).map_err(invalid)
        } else if kind.has_network() {
            let net = Network::read_from(r)?;
            Self::with_network(kind, vocab_size, net).map_err(invalid)
        } else {
            Ok(Self::mean(vocab_size))
        }
    }
}

/// Applies the scalar or vector mixing rule; returns `pC` and the
/// per-row normalizer (1 for scalar kinds).
fn mix(
    kind: Kind,
    lambda: &Array2<f64>,
    ps: &ArrayView2<f64>,
    pl: &ArrayView2<f64>,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let (b, v) = ps.dim();
    let mut pc = Array2::zeros((b, v));
    let mut z = Array1::ones(b);
    for i in 0..b {
        let s = ps.row(i);
        let l = pl.row(i);
        let lam = lambda.row(i);
        let mut out = pc.row_mut(i);
        if kind.is_vector() {
            let mut total = 0.0;
            for j in 0..v {
                let u = lam[j] * s[j] + (1.0 - lam[j]) * l[j];
                out[j] = u;
                total += u;
            }
            if !(total >= MIN_Z) {
                return Err(Error::DegenerateRenormalization(total));
            }
            out.mapv_inplace(|u| u / total);
            z[i] = total;
        } else {
            let w = lam[0];
            for j in 0..v {
                out[j] = w * s[j] + (1.0 - w) * l[j];
            }
        }
    }
    Ok((pc, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn stub_scalar(kind: Kind, lambda: f64, v: usize) -> CombinationParams {
        // A network whose sigmoid output is exactly `lambda`.
        use crate::nn::{Layer, Linear};
        let input = kind.input_dim(v);
        let net = Network::new(vec![
            Layer::Linear(Linear {
                weight: Array2::zeros((1, input)),
                bias: array![(lambda / (1.0 - lambda)).ln()],
            }),
            Layer::Sigmoid,
        ])
        .unwrap();
        let mut p = CombinationParams::with_network(kind, v, net).unwrap();
        p.set_mode(Mode::Eval);
        p
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-15);
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.039_720_770_839_917_9).abs() < 1e-12);
        assert!((entropy(&[0.25; 4]) - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn mean_is_arithmetic_mean() {
        let p = CombinationParams::mean(2);
        let c = p.combine(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        assert!((c[0] - 0.7).abs() < 1e-15 && (c[1] - 0.3).abs() < 1e-15);
        assert!(matches!(p.lambda_of(&[0.5, 0.5], &[0.9, 0.1]), Err(Error::NoLambda(_))));
    }

    #[test]
    fn constant_scalar_at_half_is_mean() {
        let p = CombinationParams::init(Kind::ConstantScalar, 3, 0);
        let ps = [0.2, 0.3, 0.5];
        let pl = [0.6, 0.1, 0.3];
        assert_eq!(p.lambda_of(&ps, &pl).unwrap(), vec![0.5]);
        let a = p.combine(&ps, &pl).unwrap();
        let b = CombinationParams::mean(3).combine(&ps, &pl).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn constant_vector_forced_renormalization() {
        let p = CombinationParams::constant(Kind::ConstantVector, 2, vec![40.0, -40.0]).unwrap();
        let c = p.combine(&[0.8, 0.2], &[0.2, 0.8]).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_renormalization() {
        let p = CombinationParams::constant(Kind::ConstantVector, 2, vec![40.0, -40.0]).unwrap();
        assert!(matches!(
            p.combine(&[0.0, 1.0], &[1.0, 0.0]),
            Err(Error::DegenerateRenormalization(_))
        ));
    }

    #[test]
    fn stubbed_scalar_lambda() {
        // 0.3·[0.8,0.2] + 0.7·[0.4,0.6] = [0.52, 0.48]
        for kind in [Kind::EntropyScalar, Kind::FullScalar] {
            let p = stub_scalar(kind, 0.3, 2);
            let c = p.combine(&[0.8, 0.2], &[0.4, 0.6]).unwrap();
            assert!((c[0] - 0.52).abs() < 1e-12, "{kind}");
            assert!((c[1] - 0.48).abs() < 1e-12, "{kind}");
        }
        let c = CombinationParams::constant(Kind::ConstantScalar, 2, vec![(0.3f64 / 0.7).ln()])
            .unwrap()
            .combine(&[0.8, 0.2], &[0.4, 0.6])
            .unwrap();
        assert!((c[0] - 0.52).abs() < 1e-12);
    }

    #[test]
    fn vocab_mismatch() {
        let p = CombinationParams::mean(3);
        assert!(matches!(
            p.combine(&[0.5, 0.5], &[0.5, 0.5]),
            Err(Error::VocabMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn reported_lambda_reproduces_combine() {
        let mut p = CombinationParams::init_with_hidden(Kind::EntropyScalar, 4, &[8, 8], 3);
        p.set_mode(Mode::Eval);
        let ps = [0.1, 0.2, 0.3, 0.4];
        let pl = [0.7, 0.1, 0.1, 0.1];
        let lam = p.lambda_of(&ps, &pl).unwrap()[0];
        assert!(lam > 0.0 && lam < 1.0);
        let c = p.combine(&ps, &pl).unwrap();
        for j in 0..4 {
            assert!((c[j] - (lam * ps[j] + (1.0 - lam) * pl[j])).abs() <= 1e-12);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in Kind::ALL {
            assert_eq!(k.name().parse::<Kind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert!("median".parse::<Kind>().is_err());
        assert_eq!(Kind::ConstantVector.default_lr(), 1e-2);
        assert_eq!(Kind::FullVector.default_lr(), 2e-3);
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in Kind::ALL {
            let p = CombinationParams::init_with_hidden(kind, 5, &[6, 6], 1);
            let mut buf = Vec::new();
            p.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"CMB1");
            let back = CombinationParams::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back.kind(), kind);
            assert_eq!(back.param_count(), p.param_count());
        }
    }

    fn dist(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn brute_force_z_matches(
            raw_s in proptest::collection::vec(0.01f64..1.0, 6),
            raw_l in proptest::collection::vec(0.01f64..1.0, 6),
            raw_lam in proptest::collection::vec(-5f64..5.0, 6),
        ) {
            let ps = dist(&raw_s);
            let pl = dist(&raw_l);
            let p = CombinationParams::constant(Kind::ConstantVector, 6, raw_lam.clone()).unwrap();
            let c = p.combine(&ps, &pl).unwrap();
            let lam: Vec<f64> = raw_lam.iter().map(|&r| 1.0 / (1.0 + (-r).exp())).collect();
            let mut z = 0.0;
            for j in 0..6 {
                z += lam[j] * ps[j] + (1.0 - lam[j]) * pl[j];
            }
            for j in 0..6 {
                let expected = (lam[j] * ps[j] + (1.0 - lam[j]) * pl[j]) / z;
                prop_assert!((c[j] - expected).abs() < 1e-9);
            }
        }

        #[test]
        fn scalar_kinds_are_convex(
            raw_s in proptest::collection::vec(0.0f64..1.0, 5),
            raw_l in proptest::collection::vec(0.01f64..1.0, 5),
            raw in -10f64..10.0,
        ) {
            let ps = dist(&raw_s.iter().map(|x| x + 1e-3).collect::<Vec<_>>());
            let pl = dist(&raw_l);
            let p = CombinationParams::constant(Kind::ConstantScalar, 5, vec![raw]).unwrap();
            let c = p.combine(&ps, &pl).unwrap();
            for j in 0..5 {
                prop_assert!(c[j] <= ps[j].max(pl[j]) + 1e-12);
            }
        }
    }
}
