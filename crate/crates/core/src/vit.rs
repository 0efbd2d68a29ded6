//! Vision Transformer panel encoder.
//!
//! A panel is split into non-overlapping `P×P` patches, each patch is
//! projected to `D` dimensions, a class token is prepended and positional
//! embeddings are added. `L` pre-norm encoder blocks then mix the tokens:
//!
//! ```text
//! z'_l = MSA(LN(z_{l-1})) + z_{l-1}
//! z_l  = MLP(LN(z'_l))    + z'_l
//! ```
//!
//! The panel feature is read from the final token sequence, either as the
//! class-token row or as all tokens flattened into one vector.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{truncated_normal, Bound, ParamStore, INIT_STD};
use crate::tensor::{Tape, Tensor, Var};

/// Epsilon of the encoder layer norms.
pub const LN_EPS: f64 = 1e-6;

/// How the final token sequence becomes a panel feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Row 0 of `z_L`, length `D`.
    ClassToken,
    /// All `T+1` rows of `z_L` concatenated, length `(T+1)·D`.
    Flatten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub patch_side: usize,
    pub channels: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    pub readout: Readout,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.image_side,
            self.patch_side,
            self.channels,
            self.embed_dim,
            self.num_heads,
            self.mlp_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.image_side % self.patch_side != 0 {
            return Err(Error::Config(format!(
                "image side {} is not a multiple of patch side {}",
                self.image_side, self.patch_side
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embedding width {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    /// Patches per image, `(W/P)²`.
    pub fn num_patches(&self) -> usize {
        let g = self.image_side / self.patch_side;
        g * g
    }

    /// Rows of `z`, patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    /// Flattened patch length, `P²·C`.
    pub fn patch_len(&self) -> usize {
        self.patch_side * self.patch_side * self.channels
    }

    pub fn pixels_per_image(&self) -> usize {
        self.channels * self.image_side * self.image_side
    }

    /// Length of the panel feature handed to the contrast network.
    pub fn feature_dim(&self) -> usize {
        match self.readout {
            Readout::ClassToken => self.embed_dim,
            Readout::Flatten => self.seq_len() * self.embed_dim,
        }
    }
}

/// Splits a `[C×W×W]` image into row-major patches of `P²·C` values.
///
/// Within a patch the layout is channel, then row, then column.
pub fn patchify(image: &[f64], cfg: &EncoderConfig) -> Result<Tensor> {
    let mut out = Vec::with_capacity(image.len());
    patchify_into(&mut out, image, cfg)?;
    Tensor::new([cfg.num_patches(), cfg.patch_len()], out)
}

fn patchify_into(out: &mut Vec<f64>, image: &[f64], cfg: &EncoderConfig) -> Result<()> {
    if cfg.patch_side == 0 || cfg.image_side % cfg.patch_side != 0 {
        return Err(Error::Config(format!(
            "image side {} is not a multiple of patch side {}",
            cfg.image_side, cfg.patch_side
        )));
    }
    if image.len() != cfg.pixels_per_image() {
        return Err(Error::shape(
            "patchify",
            format!("{} pixels for a {}×{0}×{0} image", image.len(), cfg.image_side),
        ));
    }
    let (w, p) = (cfg.image_side, cfg.patch_side);
    let grid = w / p;
    for gy in 0..grid {
        for gx in 0..grid {
            for c in 0..cfg.channels {
                for py in 0..p {
                    let row = (c * w + gy * p + py) * w + gx * p;
                    out.extend_from_slice(&image[row..row + p]);
                }
            }
        }
    }
    Ok(())
}

/// Inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, cfg: &EncoderConfig) -> Result<Vec<f64>> {
    if tokens.shape() != [cfg.num_patches(), cfg.patch_len()] {
        return Err(Error::shape("unpatchify", format!("token matrix {:?}", tokens.shape())));
    }
    let (w, p) = (cfg.image_side, cfg.patch_side);
    let grid = w / p;
    let mut image = vec![0.0; cfg.pixels_per_image()];
    let mut src = tokens.data().chunks_exact(p);
    for gy in 0..grid {
        for gx in 0..grid {
            for c in 0..cfg.channels {
                for py in 0..p {
                    let row = (c * w + gy * p + py) * w + gx * p;
                    image[row..row + p].copy_from_slice(src.next().expect("length checked"));
                }
            }
        }
    }
    Ok(image)
}

/// Stacks the patch matrices of several images: `[n·(W/P)² × P²·C]`.
pub fn patchify_batch<'a>(images: impl IntoIterator<Item = &'a [f64]>, cfg: &EncoderConfig) -> Result<Tensor> {
    let mut out = Vec::new();
    let mut n = 0;
    for image in images {
        patchify_into(&mut out, image, cfg)?;
        n += 1;
    }
    Tensor::new([n * cfg.num_patches(), cfg.patch_len()], out)
}

pub fn block_prefix(layer: usize) -> String {
    format!("vit.blocks.{layer}")
}

/// Adds freshly initialised encoder parameters to `store`.
pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) {
    let d = cfg.embed_dim;
    store.insert("vit.patch_proj", truncated_normal(rng, &[cfg.patch_len(), d], INIT_STD));
    store.insert("vit.class_token", truncated_normal(rng, &[d], INIT_STD));
    store.insert("vit.pos_embed", truncated_normal(rng, &[cfg.seq_len(), d], INIT_STD));
    for l in 0..cfg.num_layers {
        let pre = block_prefix(l);
        store.insert(format!("{pre}.ln1.gamma"), Tensor::full([d], 1.0));
        store.insert(format!("{pre}.ln1.beta"), Tensor::zeros([d]));
        for proj in ["wq", "wk", "wv", "wo"] {
            store.insert(format!("{pre}.attn.{proj}"), truncated_normal(rng, &[d, d], INIT_STD));
            let bias = proj.replacen('w', "b", 1);
            store.insert(format!("{pre}.attn.{bias}"), Tensor::zeros([d]));
        }
        store.insert(format!("{pre}.ln2.gamma"), Tensor::full([d], 1.0));
        store.insert(format!("{pre}.ln2.beta"), Tensor::zeros([d]));
        store.insert(format!("{pre}.mlp.w1"), truncated_normal(rng, &[d, cfg.mlp_hidden], INIT_STD));
        store.insert(format!("{pre}.mlp.b1"), Tensor::zeros([cfg.mlp_hidden]));
        store.insert(format!("{pre}.mlp.w2"), truncated_normal(rng, &[cfg.mlp_hidden, d], INIT_STD));
        store.insert(format!("{pre}.mlp.b2"), Tensor::zeros([d]));
    }
}

/// Tape handles of one encoder block.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BlockVars {
    pub fn bind(p: &Bound<'_>, layer: usize) -> Result<Self> {
        let pre = block_prefix(layer);
        let v = |s: &str| p.var(&format!("{pre}.{s}"));
        Ok(BlockVars {
            ln1_gamma: v("ln1.gamma")?,
            ln1_beta: v("ln1.beta")?,
            wq: v("attn.wq")?,
            bq: v("attn.bq")?,
            wk: v("attn.wk")?,
            bk: v("attn.bk")?,
            wv: v("attn.wv")?,
            bv: v("attn.bv")?,
            wo: v("attn.wo")?,
            bo: v("attn.bo")?,
            ln2_gamma: v("ln2.gamma")?,
            ln2_beta: v("ln2.beta")?,
            w1: v("mlp.w1")?,
            b1: v("mlp.b1")?,
            w2: v("mlp.w2")?,
            b2: v("mlp.b2")?,
        })
    }
}

/// `z₀ = [x_class; x_p¹E; …; x_pᵀE] + E_pos` for each of `panels` images.
///
/// `tokens` is `[panels·T × P²C]`; the result is `[panels·(T+1) × D]`.
pub fn embed(tape: &mut Tape, p: &Bound<'_>, tokens: Var, panels: usize) -> Result<Var> {
    let proj = tape.matmul(tokens, p.var("vit.patch_proj")?).map_err(|e| match e {
        Error::Shape { detail, .. } => Error::shape("embed", detail),
        e => e,
    })?;
    tape.assemble_tokens(proj, p.var("vit.class_token")?, p.var("vit.pos_embed")?, panels)
}

/// Multi-head self-attention over each panel's token sequence.
pub fn msa(tape: &mut Tape, blk: &BlockVars, cfg: &EncoderConfig, z: Var, panels: usize) -> Result<Var> {
    let q = tape.linear(z, blk.wq, Some(blk.bq))?;
    let k = tape.linear(z, blk.wk, Some(blk.bk))?;
    let v = tape.linear(z, blk.wv, Some(blk.bv))?;
    let heads = tape.attention(q, k, v, panels, cfg.seq_len(), cfg.num_heads)?;
    tape.linear(heads, blk.wo, Some(blk.bo))
}

/// One pre-norm transformer block.
pub fn encoder_block(tape: &mut Tape, blk: &BlockVars, cfg: &EncoderConfig, z: Var, panels: usize) -> Result<Var> {
    let h = tape.layer_norm(z, blk.ln1_gamma, blk.ln1_beta, LN_EPS)?;
    let a = msa(tape, blk, cfg, h, panels)?;
    let z_mid = tape.add(a, z)?;
    let h = tape.layer_norm(z_mid, blk.ln2_gamma, blk.ln2_beta, LN_EPS)?;
    let h = tape.linear(h, blk.w1, Some(blk.b1))?;
    let h = tape.gelu(h);
    let m = tape.linear(h, blk.w2, Some(blk.b2))?;
    tape.add(m, z_mid)
}

/// Runs the embedding and all encoder blocks, returning `z_L`.
pub fn encode_tokens(tape: &mut Tape, p: &Bound<'_>, cfg: &EncoderConfig, tokens: Var, panels: usize) -> Result<Var> {
    let mut z = embed(tape, p, tokens, panels)?;
    for l in 0..cfg.num_layers {
        let blk = BlockVars::bind(p, l)?;
        z = encoder_block(tape, &blk, cfg, z, panels)?;
    }
    Ok(z)
}

/// Panel features `[panels × feature_dim]` from stacked patch tokens.
pub fn encode_panels(tape: &mut Tape, p: &Bound<'_>, cfg: &EncoderConfig, tokens: Var, panels: usize) -> Result<Var> {
    let z = encode_tokens(tape, p, cfg, tokens, panels)?;
    match cfg.readout {
        Readout::ClassToken => {
            let rows = (0..panels).map(|i| i * cfg.seq_len()).collect();
            tape.gather_rows(z, rows)
        }
        Readout::Flatten => tape.reshape(z, [panels, cfg.feature_dim()]),
    }
}

/// Feature vector of a single image under fixed parameters.
pub fn encode_panel(store: &ParamStore, cfg: &EncoderConfig, image: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let tokens = tape.constant(patchify(image, cfg)?);
    let f = encode_panels(&mut tape, &p, cfg, tokens, 1)?;
    Ok(tape.value(f).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(side: usize, patch: usize) -> EncoderConfig {
        EncoderConfig {
            image_side: side,
            patch_side: patch,
            channels: 1,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            mlp_hidden: 12,
            readout: Readout::ClassToken,
        }
    }

    #[test]
    fn patchify_index_arithmetic() {
        let cfg = small(4, 2);
        let image: Vec<f64> = (0..16).map(f64::from).collect();
        let t = patchify(&image, &cfg).unwrap();
        assert_eq!(t.shape(), &[4, 4]);
        assert_eq!(t.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(t.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn patchify_full_size_shapes() {
        let cfg = EncoderConfig {
            image_side: 96,
            patch_side: 16,
            ..small(96, 16)
        };
        let t = patchify(&vec![0.5; 96 * 96], &cfg).unwrap();
        assert_eq!(t.shape(), &[36, 256]);
        let whole = EncoderConfig { patch_side: 96, ..cfg };
        let image: Vec<f64> = (0..96 * 96).map(|i| i as f64).collect();
        let t = patchify(&image, &whole).unwrap();
        assert_eq!(t.shape(), &[1, 96 * 96]);
        assert_eq!(t.data(), image.as_slice());
    }

    #[test]
    fn patchify_rejects_indivisible_side() {
        let cfg = small(10, 3);
        assert!(matches!(patchify(&[0.0; 100], &cfg), Err(Error::Config(_))));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validate_checks_heads() {
        let cfg = EncoderConfig { num_heads: 3, ..small(8, 4) };
        assert!(cfg.validate().is_err());
        assert!(small(8, 4).validate().is_ok());
    }

    #[test]
    fn embed_with_zero_projection_is_class_plus_positions() {
        let cfg = small(8, 4);
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        store.assign("vit.patch_proj", Tensor::zeros([16, 8])).unwrap();
        let image: Vec<f64> = (0..64).map(|i| i as f64 / 64.0).collect();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let tokens = tape.constant(patchify(&image, &cfg).unwrap());
        let z0 = embed(&mut tape, &p, tokens, 1).unwrap();
        let z0 = tape.value(z0);
        assert_eq!(z0.shape(), &[5, 8]);
        let pos = store.get("vit.pos_embed").unwrap();
        let cls = store.get("vit.class_token").unwrap();
        for j in 0..8 {
            assert_eq!(z0.row(0)[j], cls.data()[j] + pos.row(0)[j]);
            for t in 1..5 {
                assert_eq!(z0.row(t)[j], pos.row(t)[j]);
            }
        }
    }

    #[test]
    fn encoder_output_width_and_determinism() {
        let cfg = small(8, 4);
        let mut store = ParamStore::new();
        init_params(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let image: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let a = encode_panel(&store, &cfg, &image).unwrap();
        let b = encode_panel(&store, &cfg, &image).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let flat = EncoderConfig { readout: Readout::Flatten, ..cfg };
        assert_eq!(encode_panel(&store, &flat, &image).unwrap().len(), 5 * 8);
    }
}
