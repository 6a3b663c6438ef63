//! VGG-16 convolutional trunk used as the feature extractor for all losses.
//!
//! Only the 13 convolutions are modelled. Block `b` groups the convolutions
//! that run at resolution `H/2^(b−1)`; its feature map is the channel-wise
//! concatenation of their post-ReLU outputs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

const MAGIC: &[u8; 4] = b"VGGW";
const VERSION: u32 = 1;

/// (name, in_channels, out_channels, block)
pub const LAYERS: [(&str, usize, usize, usize); 13] = [
    ("conv1_1", 3, 64, 1),
    ("conv1_2", 64, 64, 1),
    ("conv2_1", 64, 128, 2),
    ("conv2_2", 128, 128, 2),
    ("conv3_1", 128, 256, 3),
    ("conv3_2", 256, 256, 3),
    ("conv3_3", 256, 256, 3),
    ("conv4_1", 256, 512, 4),
    ("conv4_2", 512, 512, 4),
    ("conv4_3", 512, 512, 4),
    ("conv5_1", 512, 512, 5),
    ("conv5_2", 512, 512, 5),
    ("conv5_3", 512, 512, 5),
];

/// Concatenated channel count of a block.
pub fn block_channels(block: usize) -> Option<usize> {
    if !(1..=5).contains(&block) {
        return None;
    }
    Some(
        LAYERS
            .iter()
            .filter(|l| l.3 == block)
            .map(|l| l.2)
            .sum(),
    )
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub name: &'static str,
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

/// The frozen VGG-16 convolutional trunk. Cheap to clone and share.
#[derive(Debug, Clone)]
pub struct VggNetwork {
    layers: Arc<Vec<ConvLayer>>,
}

fn weight_shape(cin: usize, cout: usize) -> [usize; 4] {
    [cout, cin, 3, 3]
}

impl VggNetwork {
    /// Builds a network from explicit layers, validating every shape.
    pub fn from_layers(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.len() != LAYERS.len() {
            return Err(Error::Load {
                layer: None,
                message: format!("expected {} conv layers, got {}", LAYERS.len(), layers.len()),
            });
        }
        for (layer, &(name, cin, cout, _)) in layers.iter().zip(&LAYERS) {
            if layer.name != name {
                return Err(Error::Load {
                    layer: Some(name.into()),
                    message: format!("layer out of order (found {})", layer.name),
                });
            }
            check_shape(&format!("{name}.weight"), layer.weight.shape(), &weight_shape(cin, cout))?;
            check_shape(&format!("{name}.bias"), layer.bias.shape(), &[cout])?;
        }
        Ok(VggNetwork {
            layers: Arc::new(layers),
        })
    }

    /// Deterministic pseudo-random weights with standard deviation
    /// `1/√fan_in` and zero biases. Stands in for pretrained weights in tests.
    pub fn seeded(seed: u64) -> Self {
        let layers = LAYERS
            .iter()
            .enumerate()
            .map(|(i, &(name, cin, cout, _))| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((i as u64 + 1) << 32));
                let fan_in = (cin * 9) as f32;
                let scale = fan_in.sqrt().recip();
                let shape = weight_shape(cin, cout);
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        z * scale
                    })
                    .collect();
                ConvLayer {
                    name,
                    weight: Arc::new(Tensor::new(&shape, data).expect("static shape")),
                    bias: Arc::new(Tensor::zeros(&[cout])),
                }
            })
            .collect();
        VggNetwork {
            layers: Arc::new(layers),
        }
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        read_weights(&mut reader)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_weights(self, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Runs the trunk on an already normalized 3×H×W input and returns the
    /// concatenated post-ReLU features of `block`.
    pub fn extract_block(&self, g: &mut Graph, input: Var, block: usize) -> Result<Var> {
        let channels = block_channels(block)
            .ok_or_else(|| Error::invalid(format!("block must be in 1..=5, got {block}")))?;
        let shape = g.shape(input).to_vec();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::invalid(format!("expected a 3×H×W image, got {shape:?}")));
        }
        let min_side = 1usize << (block - 1);
        if shape[1] < min_side || shape[2] < min_side {
            return Err(Error::invalid(format!(
                "block {block} needs at least {min_side}×{min_side} input, got {}×{}",
                shape[1], shape[2]
            )));
        }

        let mut x = input;
        let mut outputs = Vec::new();
        let mut current = 1;
        for (layer, &(_, _, _, b)) in self.layers.iter().zip(&LAYERS) {
            if b > block {
                break;
            }
            if b != current {
                x = g.maxpool2x2(x)?;
                outputs.clear();
                current = b;
            }
            let w = g.shared_constant(layer.weight.clone());
            let bias = g.shared_constant(layer.bias.clone());
            let conv = g.conv2d(x, w, bias)?;
            x = g.relu(conv);
            outputs.push(x);
        }
        let features = g.concat_channels(&outputs)?;
        debug_assert_eq!(g.shape(features)[0], channels);
        Ok(features)
    }

    /// Normalization followed by [`VggNetwork::extract_block`].
    pub fn image_features(&self, g: &mut Graph, image: Var, block: usize) -> Result<Var> {
        let normalized = preprocess(g, image)?;
        self.extract_block(g, normalized, block)
    }
}

fn check_shape(entry: &str, got: &[usize], want: &[usize]) -> Result<()> {
    if got != want {
        return Err(Error::Load {
            layer: Some(entry.into()),
            message: format!("shape {got:?}, expected {want:?}"),
        });
    }
    Ok(())
}

/// Per-channel ImageNet normalization of a 3×H×W image with values in [0,1].
pub fn preprocess(g: &mut Graph, image: Var) -> Result<Var> {
    let shape = g.shape(image);
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::invalid(format!(
            "preprocess needs a 3-channel C×H×W image, got {shape:?}"
        )));
    }
    let scale: Vec<f32> = IMAGENET_STD.iter().map(|s| 1.0 / s).collect();
    let shift: Vec<f32> = IMAGENET_MEAN
        .iter()
        .zip(&IMAGENET_STD)
        .map(|(m, s)| -m / s)
        .collect();
    g.channel_affine(image, &scale, &shift)
}

/// A block's feature map, detached from any graph.
#[derive(Debug, Clone)]
pub struct FeatureBlock {
    pub block_id: usize,
    pub data: Arc<Tensor>,
}

impl FeatureBlock {
    /// Features of an RGB image tensor (3×H×W, values in [0,1]).
    pub fn from_image(net: &VggNetwork, image: &Tensor, block: usize) -> Result<Self> {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        let f = net.image_features(&mut g, x, block)?;
        Ok(FeatureBlock {
            block_id: block,
            data: Arc::new(g.value(f).clone()),
        })
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }
}

/// ∂loss/∂image through normalization and the trunk up to `block`.
pub fn image_gradient(
    net: &VggNetwork,
    image: &Tensor,
    block: usize,
    loss: impl Fn(&mut Graph, Var) -> Result<Var>,
) -> Result<(f32, Tensor)> {
    let mut g = Graph::new();
    let x = g.leaf(image.clone());
    let features = net.image_features(&mut g, x, block)?;
    let l = loss(&mut g, features)?;
    let value = g.value(l).item();
    let mut grads = g.backward(l)?;
    let grad = grads
        .take(x)
        .unwrap_or_else(|| Tensor::zeros(image.shape()));
    Ok((value, grad))
}

fn write_weights(net: &VggNetwork, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&((net.layers.len() * 2) as u32).to_le_bytes())?;
    for layer in net.layers.iter() {
        for (suffix, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            let name = format!("{}.{suffix}", layer.name);
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::Load {
        layer: None,
        message: format!("truncated file: {e}"),
    })?;
    Ok(u32::from_le_bytes(buf))
}

fn read_weights(r: &mut impl Read) -> Result<VggNetwork> {
    let trunc = |e: std::io::Error| Error::Load {
        layer: None,
        message: format!("truncated file: {e}"),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(Error::Load {
            layer: None,
            message: format!("bad magic {magic:?}"),
        });
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::Load {
            layer: None,
            message: format!("unsupported version {version}"),
        });
    }
    let count = read_u32(r)? as usize;
    let mut entries = std::collections::HashMap::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        if name_len > 256 {
            return Err(Error::Load {
                layer: None,
                message: format!("implausible entry name length {name_len}"),
            });
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(trunc)?;
        let name = String::from_utf8(name).map_err(|_| Error::Load {
            layer: None,
            message: "entry name is not ASCII".into(),
        })?;
        let ndim = read_u32(r)? as usize;
        if ndim == 0 || ndim > 8 {
            return Err(Error::Load {
                layer: Some(name),
                message: format!("implausible rank {ndim}"),
            });
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(r)? as usize);
        }
        let numel: usize = dims.iter().product();
        let mut raw = vec![0u8; numel * 4];
        r.read_exact(&mut raw).map_err(|e| Error::Load {
            layer: Some(name.clone()),
            message: format!("truncated values: {e}"),
        })?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(&dims, data).map_err(|e| Error::Load {
            layer: Some(name.clone()),
            message: e.to_string(),
        })?;
        if entries.insert(name.clone(), tensor).is_some() {
            return Err(Error::Load {
                layer: Some(name),
                message: "duplicate entry".into(),
            });
        }
    }

    let mut layers = Vec::with_capacity(LAYERS.len());
    for &(name, cin, cout, _) in &LAYERS {
        let mut take = |suffix: &str, want: &[usize]| -> Result<Arc<Tensor>> {
            let key = format!("{name}.{suffix}");
            let t = entries.remove(&key).ok_or_else(|| Error::Load {
                layer: Some(key.clone()),
                message: "missing".into(),
            })?;
            check_shape(&key, t.shape(), want)?;
            Ok(Arc::new(t))
        };
        let weight = take("weight", &weight_shape(cin, cout))?;
        let bias = take("bias", &[cout])?;
        layers.push(ConvLayer { name, weight, bias });
    }
    VggNetwork::from_layers(layers)
}
