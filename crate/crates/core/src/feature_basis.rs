//! Frozen random-weight networks used as global trial bases.
//!
//! A network with depth `D` maps `R^{n_0}` through `D - 1` activated hidden
//! layers. The outputs of the last hidden layer, `Φ_1..Φ_{n_{D-1}}`, are the
//! basis functions; the output layer is never materialised because its weights
//! are exactly the unknown coefficients (and its bias is fixed to zero).
//!
//! Derivatives are central differences of feature values, never analytic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default central-difference step for trial-side derivatives.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    FullyConnected,
    #[serde(rename = "resnet")]
    ResNet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    /// I.i.d. draws from `[-r, r]` for every weight and bias.
    Uniform { r: f64 },
    /// Half-range `sqrt(6 / (fan_in + fan_out))` per linear map, biases included.
    XavierUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub kind: NetworkKind,
    /// `n_0, ..., n_{D-1}`; the depth is `widths.len()`.
    pub widths: Vec<usize>,
    /// Number of output components sharing the features (1 for a scalar field).
    #[serde(default = "one")]
    pub outputs: usize,
    pub init: Init,
}

fn one() -> usize {
    1
}

impl NetworkArch {
    pub fn fully_connected(widths: Vec<usize>, init: Init) -> Self {
        NetworkArch {
            kind: NetworkKind::FullyConnected,
            widths,
            outputs: 1,
            init,
        }
    }

    /// ResNet with `depth - 1` residual blocks of uniform `width`.
    pub fn resnet(input_dim: usize, width: usize, depth: usize, init: Init) -> Self {
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat(width).take(depth.saturating_sub(1)));
        NetworkArch {
            kind: NetworkKind::ResNet,
            widths,
            outputs: 1,
            init,
        }
    }

    pub fn with_outputs(mut self, outputs: usize) -> Self {
        self.outputs = outputs;
        self
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths.first().copied().unwrap_or(0)
    }

    pub fn basis_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::Architecture(format!(
                "depth must be at least 2, got {}",
                self.widths.len()
            )));
        }
        if let Some(layer) = self.widths.iter().position(|&w| w == 0) {
            return Err(Error::Layer {
                layer,
                reason: "width must be positive".into(),
            });
        }
        if self.outputs == 0 {
            return Err(Error::Architecture("output count must be positive".into()));
        }
        if self.kind == NetworkKind::ResNet {
            let width = self.widths[1];
            if let Some(pos) = self.widths[1..].iter().position(|&w| w != width) {
                return Err(Error::Layer {
                    layer: pos + 1,
                    reason: format!(
                        "resnet blocks need a uniform width ({width}), got {}",
                        self.widths[pos + 1]
                    ),
                });
            }
        }
        match self.init {
            Init::Uniform { r } if !(r.is_finite() && r > 0.0) => Err(Error::Architecture(format!(
                "uniform half-range must be positive, got {r}"
            ))),
            _ => Ok(()),
        }
    }
}

/// One affine map `z = W a + b`, row-major `W` with shape `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    fn sample(rows: usize, cols: usize, init: Init, rng: &mut impl rand_core::RngCore) -> Self {
        let r = match init {
            Init::Uniform { r } => r,
            Init::XavierUniform => (6.0 / (rows + cols) as f64).sqrt(),
        };
        let weights = (0..rows * cols).map(|_| rng::uniform(rng, -r, r)).collect();
        let bias = (0..rows).map(|_| rng::uniform(rng, -r, r)).collect();
        DenseLayer {
            rows,
            cols,
            weights,
            bias,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weight(&self, i: usize, k: usize) -> f64 {
        self.weights[i * self.cols + k]
    }

    pub fn bias(&self, i: usize) -> f64 {
        self.bias[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.bias
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.cols..(i + 1) * self.cols];
            *o = self.bias[i] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
        }
    }

    fn activate(&self, input: &[f64], out: &mut [f64]) {
        self.affine(input, out);
        out.iter_mut().for_each(|v| *v = v.tanh());
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Topology {
    Dense(Vec<DenseLayer>),
    Residual {
        input: DenseLayer,
        blocks: Vec<[DenseLayer; 2]>,
    },
}

/// Anything that can play the role of a trial basis: a frozen network, or a
/// hand-written probe in tests.
pub trait FeatureMap: Send + Sync {
    fn input_dim(&self) -> usize;

    /// Number of basis functions.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `Φ_1(x), ..., Φ_n(x)` into `out`.
    fn eval_into(&self, x: &[f64], out: &mut [f64]);

    /// An evaluator that reproduces [`CentralDifference`] with fewer
    /// transcendental calls, when the map knows how.
    fn fast_differentiator(&self, _axes: &[usize], _step: f64) -> Option<Box<dyn Differentiator + '_>> {
        None
    }
}

/// Joint evaluation of feature values and their central-difference partials.
pub trait Differentiator: Send + Sync {
    fn axes(&self) -> &[usize];

    /// `partials[a * n + j]` receives the partial of feature `j` along `axes()[a]`.
    fn eval(&self, x: &[f64], values: &mut [f64], partials: &mut [f64]);
}

/// Picks the fastest available route to central-difference partials.
pub fn differentiator<'a>(map: &'a dyn FeatureMap, axes: &[usize], step: f64) -> Box<dyn Differentiator + 'a> {
    map.fast_differentiator(axes, step)
        .unwrap_or_else(|| Box::new(CentralDifference::new(map, axes, step)))
}

/// Re-evaluates the whole map at `x ± step e_k`.
pub struct CentralDifference<'a> {
    map: &'a dyn FeatureMap,
    axes: Vec<usize>,
    step: f64,
}

impl<'a> CentralDifference<'a> {
    pub fn new(map: &'a dyn FeatureMap, axes: &[usize], step: f64) -> Self {
        CentralDifference {
            map,
            axes: axes.to_vec(),
            step,
        }
    }
}

impl Differentiator for CentralDifference<'_> {
    fn axes(&self) -> &[usize] {
        &self.axes
    }

    fn eval(&self, x: &[f64], values: &mut [f64], partials: &mut [f64]) {
        let n = self.map.len();
        self.map.eval_into(x, values);
        let mut shifted = x.to_vec();
        let mut plus = vec![0.0; n];
        let mut minus = vec![0.0; n];
        for (a, &k) in self.axes.iter().enumerate() {
            shifted[k] = x[k] + self.step;
            self.map.eval_into(&shifted, &mut plus);
            shifted[k] = x[k] - self.step;
            self.map.eval_into(&shifted, &mut minus);
            shifted[k] = x[k];
            let inv = 0.5 / self.step;
            for ((p, hi), lo) in partials[a * n..(a + 1) * n].iter_mut().zip(&plus).zip(&minus) {
                *p = (hi - lo) * inv;
            }
        }
    }
}

/// Single-hidden-layer networks: `Φ_j(x ± h e_k) = tanh(z_j ± h w_jk)` is
/// evaluated with the addition formula from `tanh(z_j)` and the precomputed
/// `tanh(h w_jk)`, then differenced exactly like [`CentralDifference`].
struct ShallowDifference<'a> {
    layer: &'a DenseLayer,
    axes: Vec<usize>,
    step: f64,
    shift: Vec<f64>,
}

impl Differentiator for ShallowDifference<'_> {
    fn axes(&self) -> &[usize] {
        &self.axes
    }

    fn eval(&self, x: &[f64], values: &mut [f64], partials: &mut [f64]) {
        let n = self.layer.rows;
        self.layer.activate(x, values);
        let inv = 0.5 / self.step;
        for a in 0..self.axes.len() {
            let shift = &self.shift[a * n..(a + 1) * n];
            let out = &mut partials[a * n..(a + 1) * n];
            for ((p, &t), &d) in out.iter_mut().zip(values.iter()).zip(shift) {
                let plus = (t + d) / (1.0 + t * d);
                let minus = (t - d) / (1.0 - t * d);
                *p = (plus - minus) * inv;
            }
        }
    }
}

/// A frozen random network; its last hidden layer spans the trial space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBasis {
    arch: NetworkArch,
    seed: u64,
    topology: Topology,
}

impl FeatureBasis {
    /// Draws all hidden parameters from the `TRIAL_U` stream of `seed`.
    pub fn build(arch: &NetworkArch, seed: u64) -> Result<Self> {
        Self::build_on_stream(arch, seed, rng::streams::TRIAL_U)
    }

    /// Draws layer by layer (weights row-major, then biases) from one stream.
    pub fn build_on_stream(arch: &NetworkArch, seed: u64, stream: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, stream);
        let w = &arch.widths;
        let topology = match arch.kind {
            NetworkKind::FullyConnected => Topology::Dense(
                w.windows(2)
                    .map(|pair| DenseLayer::sample(pair[1], pair[0], arch.init, &mut rng))
                    .collect(),
            ),
            NetworkKind::ResNet => {
                let width = w[1];
                let input = DenseLayer::sample(width, w[0], arch.init, &mut rng);
                let blocks = (1..w.len())
                    .map(|_| {
                        [
                            DenseLayer::sample(width, width, arch.init, &mut rng),
                            DenseLayer::sample(width, width, arch.init, &mut rng),
                        ]
                    })
                    .collect();
                Topology::Residual { input, blocks }
            }
        };
        Ok(FeatureBasis {
            arch: arch.clone(),
            seed,
            topology,
        })
    }

    pub fn arch(&self) -> &NetworkArch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Every affine map, in draw order.
    pub fn linear_maps(&self) -> Vec<&DenseLayer> {
        match &self.topology {
            Topology::Dense(layers) => layers.iter().collect(),
            Topology::Residual { input, blocks } => std::iter::once(input)
                .chain(blocks.iter().flat_map(|b| b.iter()))
                .collect(),
        }
    }

    /// Test hook: overwrite every hidden weight and bias.
    #[doc(hidden)]
    pub fn fill_parameters(&mut self, value: f64) {
        let fill = |l: &mut DenseLayer| {
            l.weights.iter_mut().for_each(|w| *w = value);
            l.bias.iter_mut().for_each(|b| *b = value);
        };
        match &mut self.topology {
            Topology::Dense(layers) => layers.iter_mut().for_each(fill),
            Topology::Residual { input, blocks } => {
                fill(input);
                blocks.iter_mut().flat_map(|b| b.iter_mut()).for_each(fill);
            }
        }
    }

    pub fn eval_features(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature input"));
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Central-difference Jacobian, row-major `len() x input_dim()`.
    pub fn eval_feature_grad(&self, x: &[f64], step: f64) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        check_step(step)?;
        let n = self.len();
        let d = self.input_dim();
        let axes: Vec<usize> = (0..d).collect();
        let mut values = vec![0.0; n];
        let mut partials = vec![0.0; n * d];
        CentralDifference::new(self, &axes, step).eval(x, &mut values, &mut partials);
        let mut jac = vec![0.0; n * d];
        for k in 0..d {
            for j in 0..n {
                jac[j * d + k] = partials[k * n + j];
            }
        }
        Ok(jac)
    }

    pub fn reconstruct(&self, coeffs: &Coefficients, x: &[f64]) -> Result<Vec<f64>> {
        reconstruct(self, coeffs, x)
    }
}

impl FeatureMap for FeatureBasis {
    fn input_dim(&self) -> usize {
        self.arch.input_dim()
    }

    fn len(&self) -> usize {
        self.arch.basis_dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.topology {
            Topology::Dense(layers) => {
                let (last, hidden) = layers.split_last().expect("validated depth");
                let mut a = x.to_vec();
                for layer in hidden {
                    let mut next = vec![0.0; layer.rows];
                    layer.activate(&a, &mut next);
                    a = next;
                }
                last.activate(&a, out);
            }
            Topology::Residual { input, blocks } => {
                input.activate(x, out);
                let width = input.rows;
                let mut inner = vec![0.0; width];
                let mut branch = vec![0.0; width];
                for [first, second] in blocks {
                    first.activate(out, &mut inner);
                    second.activate(&inner, &mut branch);
                    out.iter_mut().zip(&branch).for_each(|(o, b)| *o += b);
                }
            }
        }
    }

    fn fast_differentiator(&self, axes: &[usize], step: f64) -> Option<Box<dyn Differentiator + '_>> {
        let Topology::Dense(layers) = &self.topology else {
            return None;
        };
        let [layer] = layers.as_slice() else {
            return None;
        };
        let n = layer.rows;
        let mut shift = vec![0.0; axes.len() * n];
        for (a, &k) in axes.iter().enumerate() {
            for j in 0..n {
                shift[a * n + j] = (step * layer.weight(j, k)).tanh();
            }
        }
        Some(Box::new(ShallowDifference {
            layer,
            axes: axes.to_vec(),
            step,
            shift,
        }))
    }
}

/// Output-layer weights: `components` rows of `n` coefficients, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    components: usize,
    values: Vec<f64>,
}

impl Coefficients {
    pub fn new(components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 || values.len() % components != 0 {
            return Err(Error::invalid(format!(
                "{} coefficients do not split into {components} components",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficients"));
        }
        Ok(Coefficients { components, values })
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn per_component(&self) -> usize {
        self.values.len() / self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let n = self.per_component();
        &self.values[i * n..(i + 1) * n]
    }
}

/// `u_i(x) = Σ_j c[i, j] Φ_j(x)` for every component `i`.
pub fn reconstruct(map: &dyn FeatureMap, coeffs: &Coefficients, x: &[f64]) -> Result<Vec<f64>> {
    if coeffs.per_component() != map.len() {
        return Err(Error::Dimension {
            expected: map.len() * coeffs.components(),
            got: coeffs.values().len(),
        });
    }
    check_dim(map.input_dim(), x.len())?;
    let mut phi = vec![0.0; map.len()];
    map.eval_into(x, &mut phi);
    Ok((0..coeffs.components())
        .map(|i| dot(coeffs.component(i), &phi))
        .collect())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub(crate) fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "finite-difference step must be positive, got {step}"
        )))
    }
}
