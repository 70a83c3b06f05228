//! BeCoME-Net architecture: a two-branch backbone (image convolutions +
//! landmark pointwise convolution) fused into a 1024-dimensional feature
//! vector Z, with a sigmoid AU head and a softmax expression head that share
//! the backbone parameters.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcomp::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rngstream;
use crate::scalar::Real;

/// Architecture hyperparameters.
///
/// The two published variants are full-face (`variant_f`: 256x256 images, 68
/// landmarks) and half-face (`variant_h`: 256x128 images, 39 landmarks); any
/// dimensions with at least 8 pixels per side are accepted, which the test
/// suite uses to train at desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Landmark count l; the landmark branch input is [l, 2] (x, y) rows.
    pub landmarks: usize,
    /// AU head width c.
    pub au_count: usize,
    /// Expression head width k.
    pub expr_count: usize,
    pub dropout_p: f64,
    pub conv_channels: [usize; 3],
    /// Channels of the landmark pointwise convolution.
    pub landmark_channels: usize,
    /// Dense units per branch; the fused width is twice this.
    pub fc_units: usize,
}

impl NetworkConfig {
    /// Full-face variant: 256x256 image, 68 landmarks.
    pub fn variant_f(au_count: usize, expr_count: usize) -> Self {
        Self::with_dims(256, 256, 68, au_count, expr_count)
    }

    /// Half-face variant: 256x128 image (full height, half width), 39
    /// landmarks.
    pub fn variant_h(au_count: usize, expr_count: usize) -> Self {
        Self::with_dims(256, 128, 39, au_count, expr_count)
    }

    pub fn with_dims(
        image_h: usize,
        image_w: usize,
        landmarks: usize,
        au_count: usize,
        expr_count: usize,
    ) -> Self {
        Self {
            image_h,
            image_w,
            landmarks,
            au_count,
            expr_count,
            dropout_p: 0.5,
            conv_channels: [16, 32, 64],
            landmark_channels: 16,
            fc_units: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_h < 8 || self.image_w < 8 {
            return Err(Error::invalid(format!(
                "image must be at least 8x8 to survive three 2x2 poolings, got {}x{}",
                self.image_h, self.image_w
            )));
        }
        if self.landmarks == 0 || self.au_count == 0 || self.expr_count == 0 {
            return Err(Error::invalid(
                "landmarks, au_count, and expr_count must all be positive",
            ));
        }
        if self.conv_channels.iter().any(|&c| c == 0)
            || self.landmark_channels == 0
            || self.fc_units == 0
        {
            return Err(Error::invalid("channel and unit counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!(
                "dropout_p must be in [0, 1), got {}",
                self.dropout_p
            )));
        }
        Ok(())
    }

    /// Spatial size after the three conv+pool blocks.
    pub fn pooled_dims(&self) -> (usize, usize) {
        (self.image_h / 2 / 2 / 2, self.image_w / 2 / 2 / 2)
    }

    /// Flattened width of the image branch entering its dense layer.
    pub fn image_flat(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.conv_channels[2] * h * w
    }

    /// Flattened width of the landmark branch entering its dense layer.
    pub fn landmark_flat(&self) -> usize {
        self.landmarks * self.landmark_channels
    }

    /// Width p of the fused feature vector Z.
    pub fn fused_width(&self) -> usize {
        2 * self.fc_units
    }
}

// Parameter order: the single source of truth for initialization,
// checkpoints, registration, and optimizer state.
const CONV1_K: usize = 0;
const CONV1_B: usize = 1;
const CONV2_K: usize = 2;
const CONV2_B: usize = 3;
const CONV3_K: usize = 4;
const CONV3_B: usize = 5;
const IMG_FC_W: usize = 6;
const IMG_FC_B: usize = 7;
const LMK_CONV_K: usize = 8;
const LMK_CONV_B: usize = 9;
const LMK_FC_W: usize = 10;
const LMK_FC_B: usize = 11;
const AU_W: usize = 12;
const AU_B: usize = 13;
const EXPR_W: usize = 14;
const EXPR_B: usize = 15;
const PARAM_COUNT: usize = 16;

struct ParamSpec {
    name: &'static str,
    shape: Vec<usize>,
    /// `Some(fan_in)` for weight tensors (rectifier-scaled init);
    /// `None` for biases (zero init).
    fan_in: Option<usize>,
}

fn layout(config: &NetworkConfig) -> Vec<ParamSpec> {
    let [c1, c2, c3] = config.conv_channels;
    let lc = config.landmark_channels;
    let fc = config.fc_units;
    let p = config.fused_width();
    vec![
        ParamSpec { name: "conv1.kernels", shape: vec![c1, 1, 3, 3], fan_in: Some(9) },
        ParamSpec { name: "conv1.bias", shape: vec![c1], fan_in: None },
        ParamSpec { name: "conv2.kernels", shape: vec![c2, c1, 3, 3], fan_in: Some(c1 * 9) },
        ParamSpec { name: "conv2.bias", shape: vec![c2], fan_in: None },
        ParamSpec { name: "conv3.kernels", shape: vec![c3, c2, 3, 3], fan_in: Some(c2 * 9) },
        ParamSpec { name: "conv3.bias", shape: vec![c3], fan_in: None },
        ParamSpec {
            name: "image_fc.weights",
            shape: vec![fc, config.image_flat()],
            fan_in: Some(config.image_flat()),
        },
        ParamSpec { name: "image_fc.bias", shape: vec![fc], fan_in: None },
        ParamSpec { name: "landmark_conv.kernels", shape: vec![lc, 2], fan_in: Some(2) },
        ParamSpec { name: "landmark_conv.bias", shape: vec![lc], fan_in: None },
        ParamSpec {
            name: "landmark_fc.weights",
            shape: vec![fc, config.landmark_flat()],
            fan_in: Some(config.landmark_flat()),
        },
        ParamSpec { name: "landmark_fc.bias", shape: vec![fc], fan_in: None },
        ParamSpec { name: "au_head.weights", shape: vec![config.au_count, p], fan_in: Some(p) },
        ParamSpec { name: "au_head.bias", shape: vec![config.au_count], fan_in: None },
        ParamSpec { name: "expr_head.weights", shape: vec![config.expr_count, p], fan_in: Some(p) },
        ParamSpec { name: "expr_head.bias", shape: vec![config.expr_count], fan_in: None },
    ]
}

/// The complete parameter set. One instance serves both task passes: the AU
/// and expression forward paths read the same backbone tensors.
#[derive(Clone, Debug)]
pub struct BeCoMENetParams<R: Real> {
    config: NetworkConfig,
    tensors: Vec<Tensor<R>>,
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"BCMN";
const CHECKPOINT_VERSION: u32 = 1;

impl<R: Real> BeCoMENetParams<R> {
    /// Initialize deterministically from a seed: weights are zero-mean
    /// normal with variance 2/fan_in, biases zero.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rngstream::stream(seed, "network-init");
        let tensors = layout(&config)
            .into_iter()
            .map(|spec| {
                let len: usize = spec.shape.iter().product();
                let data: Vec<R> = match spec.fan_in {
                    Some(fan) => {
                        let scale = R::of((2.0 / fan as f64).sqrt());
                        (0..len).map(|_| rngstream::std_normal::<R, _>(&mut rng) * scale).collect()
                    }
                    None => vec![R::zero(); len],
                };
                Tensor::new(spec.shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Parameter tensors with their stable names, in checkpoint order.
    pub fn named(&self) -> Vec<(&'static str, &Tensor<R>)> {
        layout(&self.config)
            .iter()
            .map(|s| s.name)
            .zip(self.tensors.iter())
            .collect()
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    /// Register every parameter as a trainable tape leaf.
    pub fn register(&self, tape: &mut Tape<R>) -> ParamVars {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        ParamVars { config: self.config.clone(), vars }
    }

    pub fn ensure_config(&self, expected: &NetworkConfig) -> Result<()> {
        if &self.config != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint config {:?} does not match expected {:?}",
                self.config, expected
            )));
        }
        Ok(())
    }

    /// Write the checkpoint: magic, version, config JSON, then each named
    /// tensor as (name, shape, little-endian f64 payload). Values are stored
    /// as f64 regardless of the in-memory scalar type.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let config_json = serde_json::to_vec(&self.config)?;
        out.write_all(&(config_json.len() as u64).to_le_bytes())?;
        out.write_all(&config_json)?;
        out.write_all(&(self.tensors.len() as u64).to_le_bytes())?;
        for (name, tensor) in self.named() {
            out.write_all(&(name.len() as u64).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(tensor.rank() as u64).to_le_bytes())?;
            for &d in tensor.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in tensor.data() {
                out.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.save(BufWriter::new(File::create(path)?))
    }

    /// Read a checkpoint, validating magic, version, and that every tensor
    /// name and shape matches what the embedded config dictates.
    pub fn load<Rd: Read>(mut input: Rd) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes; not a checkpoint file".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let json_len = read_u64(&mut input)? as usize;
        let mut json = vec![0u8; json_len];
        input.read_exact(&mut json)?;
        let config: NetworkConfig = serde_json::from_slice(&json)?;
        config.validate()?;
        let specs = layout(&config);
        let count = read_u64(&mut input)? as usize;
        if count != specs.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} tensors, config requires {}",
                specs.len()
            )));
        }
        let mut tensors = Vec::with_capacity(specs.len());
        for spec in &specs {
            let name_len = read_u64(&mut input)? as usize;
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            if name != spec.name.as_bytes() {
                return Err(Error::Checkpoint(format!(
                    "unexpected tensor {:?} (expected {:?})",
                    String::from_utf8_lossy(&name),
                    spec.name
                )));
            }
            let rank = read_u64(&mut input)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut input)? as usize);
            }
            if shape != spec.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {shape:?}, config requires {:?}",
                    spec.name, spec.shape
                )));
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                input.read_exact(&mut buf)?;
                data.push(R::of(f64::from_le_bytes(buf)));
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, tensors })
    }

    pub fn load_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::load(BufReader::new(File::open(path)?))
    }
}

fn read_u32<Rd: Read>(input: &mut Rd) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<Rd: Read>(input: &mut Rd) -> Result<u64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Tape handles for one registration of the parameters.
pub struct ParamVars {
    config: NetworkConfig,
    vars: Vec<Var>,
}

impl ParamVars {
    /// Assemble from handles obtained elsewhere (e.g. leaves created by a
    /// gradient checker). The handles must follow the stable parameter
    /// order of [`BeCoMENetParams::named`].
    pub fn from_vars(config: NetworkConfig, vars: Vec<Var>) -> Result<Self> {
        config.validate()?;
        if vars.len() != PARAM_COUNT {
            return Err(Error::invalid(format!(
                "expected {PARAM_COUNT} parameter handles, got {}",
                vars.len()
            )));
        }
        Ok(Self { config, vars })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Handles in the same stable order as [`BeCoMENetParams::named`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    /// Run the two-branch backbone on one sample and return the fused
    /// feature vector Z (length 2 * fc_units).
    ///
    /// `image` is a grayscale [h, w] (or [1, h, w]) tensor in [0, 1];
    /// `landmarks` is [l, 2] normalized (x, y) rows. In training mode
    /// dropout is active and consumes `rng`; the Z returned here is the same
    /// dropout-active tensor the heads and the correlation loss see.
    pub fn forward_features<R: Real, G: Rng>(
        &self,
        tape: &mut Tape<R>,
        image: &Tensor<R>,
        landmarks: &Tensor<R>,
        training: bool,
        rng: &mut G,
    ) -> Result<Var> {
        let cfg = &self.config;
        let image = match image.shape() {
            [h, w] if *h == cfg.image_h && *w == cfg.image_w => {
                image.clone().reshaped(vec![1, cfg.image_h, cfg.image_w])?
            }
            [1, h, w] if *h == cfg.image_h && *w == cfg.image_w => image.clone(),
            other => {
                return Err(Error::shape(
                    "forward_features image",
                    format!("[{}, {}]", cfg.image_h, cfg.image_w),
                    format!("{other:?}"),
                ))
            }
        };
        if image.data().iter().any(|v| *v < R::zero() || *v > R::one()) {
            return Err(Error::invalid("image values must lie in [0, 1]"));
        }
        if landmarks.shape() != [cfg.landmarks, 2] {
            return Err(Error::shape(
                "forward_features landmarks",
                format!("[{}, 2]", cfg.landmarks),
                format!("{:?}", landmarks.shape()),
            ));
        }

        // Image branch: three conv+ReLU+pool blocks, then dense+ReLU+dropout.
        let mut x = tape.constant(image);
        for block in 0..3 {
            let (k, b) = match block {
                0 => (CONV1_K, CONV1_B),
                1 => (CONV2_K, CONV2_B),
                _ => (CONV3_K, CONV3_B),
            };
            x = tape.conv2d(x, self.var(k), self.var(b))?;
            x = tape.relu(x)?;
            x = tape.maxpool2(x)?;
        }
        x = tape.dense(x, self.var(IMG_FC_W), self.var(IMG_FC_B))?;
        x = tape.relu(x)?;
        x = tape.dropout(x, cfg.dropout_p, training, rng)?;

        // Landmark branch: pointwise conv+ReLU, dense+ReLU+dropout.
        let mut y = tape.constant(landmarks.clone());
        y = tape.pointwise_conv1d(y, self.var(LMK_CONV_K), self.var(LMK_CONV_B))?;
        y = tape.relu(y)?;
        y = tape.dense(y, self.var(LMK_FC_W), self.var(LMK_FC_B))?;
        y = tape.relu(y)?;
        y = tape.dropout(y, cfg.dropout_p, training, rng)?;

        tape.concat(&[x, y])
    }

    /// AU head: per-unit sigmoid probabilities. Accepts a single Z [p] or a
    /// stacked batch [b, p].
    pub fn forward_au<R: Real>(&self, tape: &mut Tape<R>, z: Var) -> Result<Var> {
        let logits = tape.dense(z, self.var(AU_W), self.var(AU_B))?;
        tape.sigmoid(logits)
    }

    /// Expression head: softmax probabilities. Accepts [p] or [b, p].
    pub fn forward_expr<R: Real>(&self, tape: &mut Tape<R>, z: Var) -> Result<Var> {
        let logits = tape.dense(z, self.var(EXPR_W), self.var(EXPR_B))?;
        tape.softmax(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::with_dims(16, 16, 8, 3, 3)
    }

    fn zero_inputs(cfg: &NetworkConfig) -> (Tensor<f64>, Tensor<f64>) {
        (
            Tensor::zeros(&[cfg.image_h, cfg.image_w]),
            Tensor::zeros(&[cfg.landmarks, 2]),
        )
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let a = BeCoMENetParams::<f64>::build(tiny_config(), 5).unwrap();
        let b = BeCoMENetParams::<f64>::build(tiny_config(), 5).unwrap();
        let c = BeCoMENetParams::<f64>::build(tiny_config(), 6).unwrap();
        for ((na, ta), (_, tb)) in a.named().iter().zip(b.named()) {
            assert_eq!(ta.data(), tb.data(), "{na} differs between identical seeds");
        }
        assert_ne!(a.tensors()[0].data(), c.tensors()[0].data());
    }

    #[test]
    fn published_variant_shapes() {
        let f = NetworkConfig::variant_f(8, 4);
        assert_eq!((f.image_h, f.image_w, f.landmarks), (256, 256, 68));
        assert_eq!(f.fused_width(), 1024);
        let params = BeCoMENetParams::<f64>::build(f, 1).unwrap();
        let named = params.named();
        let au = named.iter().find(|(n, _)| *n == "au_head.weights").unwrap();
        assert_eq!(au.1.shape(), [8, 1024]);

        let h = NetworkConfig::variant_h(8, 4);
        assert_eq!((h.image_h, h.image_w, h.landmarks), (256, 128, 39));
        assert_eq!(h.landmark_flat(), 39 * 16);
        let params = BeCoMENetParams::<f64>::build(h, 1).unwrap();
        let named = params.named();
        let lfc = named.iter().find(|(n, _)| *n == "landmark_fc.weights").unwrap();
        assert_eq!(lfc.1.shape(), [512, 39 * 16]);
    }

    #[test]
    fn eval_forward_is_pure_and_z_has_fused_width() {
        let cfg = tiny_config();
        let params = BeCoMENetParams::<f64>::build(cfg.clone(), 9).unwrap();
        let image = Tensor::from_fn(&[cfg.image_h, cfg.image_w], |i| {
            0.5 + 0.4 * ((i as f64) * 0.13).sin()
        });
        let landmarks = Tensor::from_fn(&[cfg.landmarks, 2], |i| 0.1 + 0.05 * i as f64);

        let run = || {
            let mut tape = Tape::<f64>::new();
            let vars = params.register(&mut tape);
            let mut rng = rngstream::stream(0, "unused-in-eval");
            let z = vars
                .forward_features(&mut tape, &image, &landmarks, false, &mut rng)
                .unwrap();
            tape.value(z).data().to_vec()
        };
        let z1 = run();
        let z2 = run();
        assert_eq!(z1.len(), cfg.fused_width());
        assert_eq!(z1, z2);
    }

    #[test]
    fn zero_inputs_give_finite_bias_determined_features() {
        let cfg = tiny_config();
        let params = BeCoMENetParams::<f64>::build(cfg.clone(), 3).unwrap();
        let (image, landmarks) = zero_inputs(&cfg);
        let mut tape = Tape::<f64>::new();
        let vars = params.register(&mut tape);
        let mut rng = rngstream::stream(0, "eval");
        let z = vars
            .forward_features(&mut tape, &image, &landmarks, false, &mut rng)
            .unwrap();
        assert!(tape.value(z).is_finite());
        // Zero-initialized biases and zero inputs leave nothing to activate.
        assert!(tape.value(z).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn heads_with_zero_parameters_hit_their_neutral_outputs() {
        let cfg = tiny_config();
        let mut params = BeCoMENetParams::<f64>::build(cfg.clone(), 4).unwrap();
        // Zero the head weights (last four tensors: au w/b, expr w/b).
        let n = params.tensors().len();
        for t in &mut params.tensors_mut()[n - 4..] {
            let shape = t.shape().to_vec();
            *t = Tensor::zeros(&shape);
        }
        let mut tape = Tape::<f64>::new();
        let vars = params.register(&mut tape);
        let z = tape.constant(Tensor::from_fn(&[cfg.fused_width()], |i| 0.01 * i as f64));
        let au = vars.forward_au(&mut tape, z).unwrap();
        let expr = vars.forward_expr(&mut tape, z).unwrap();
        for v in tape.value(au).data() {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-15);
        }
        for v in tape.value(expr).data() {
            assert_relative_eq!(*v, 1.0 / cfg.expr_count as f64, epsilon = 1e-15);
        }
        assert_relative_eq!(tape.value(expr).data().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn image_values_outside_unit_interval_are_rejected() {
        let cfg = tiny_config();
        let params = BeCoMENetParams::<f64>::build(cfg.clone(), 4).unwrap();
        let mut tape = Tape::<f64>::new();
        let vars = params.register(&mut tape);
        let mut image = Tensor::zeros(&[cfg.image_h, cfg.image_w]);
        image.data_mut()[0] = 1.5;
        let landmarks = Tensor::zeros(&[cfg.landmarks, 2]);
        let mut rng = rngstream::stream(0, "eval");
        assert!(vars
            .forward_features(&mut tape, &image, &landmarks, false, &mut rng)
            .is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_everything() {
        let params = BeCoMENetParams::<f64>::build(tiny_config(), 11).unwrap();
        let mut bytes = Vec::new();
        params.save(&mut bytes).unwrap();
        let loaded = BeCoMENetParams::<f64>::load(&bytes[..]).unwrap();
        assert_eq!(loaded.config(), params.config());
        for ((na, ta), (_, tb)) in params.named().iter().zip(loaded.named()) {
            assert_eq!(ta.shape(), tb.shape(), "{na}");
            assert_eq!(ta.data(), tb.data(), "{na}");
        }
        loaded.ensure_config(&tiny_config()).unwrap();
        assert!(loaded.ensure_config(&NetworkConfig::with_dims(16, 16, 8, 4, 3)).is_err());
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let params = BeCoMENetParams::<f64>::build(tiny_config(), 11).unwrap();
        let mut bytes = Vec::new();
        params.save(&mut bytes).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(BeCoMENetParams::<f64>::load(&bad_magic[..]).is_err());

        let mut bad_version = bytes.clone();
        bad_version[4] = 99;
        assert!(BeCoMENetParams::<f64>::load(&bad_version[..]).is_err());

        let truncated = &bytes[..bytes.len() / 2];
        assert!(BeCoMENetParams::<f64>::load(truncated).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(NetworkConfig::with_dims(4, 16, 8, 3, 3).validate().is_err());
        assert!(NetworkConfig::with_dims(16, 16, 0, 3, 3).validate().is_err());
        let mut cfg = tiny_config();
        cfg.dropout_p = 1.0;
        assert!(cfg.validate().is_err());
    }
}
