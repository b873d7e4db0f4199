//! Small dense feed-forward network (ReLU hiddens, linear output) with a
//! hand-written backward pass and clipped gradient descent.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

/// Gradient norm ceiling applied before every descent step.
pub const MAX_GRAD_NORM: f64 = 10.0;

const MAGIC: &str = "SRLW 1";

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
            inputs,
            outputs,
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().zip(self.weights.chunks_exact(self.inputs)).map(|(b, row)| {
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Same shape as the network it was computed for.
pub type Gradients = DenseNet;

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[k]` the output of layer k-1
    /// after its activation function.
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input at least")
    }
}

impl DenseNet {
    /// Network with the given layer dimensions and all parameters zero.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid network dims {dims:?}")));
        }
        Ok(Self {
            layers: dims.windows(2).map(|w| DenseLayer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("network needs at least one layer"));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::contract(format!("layer {k} has inconsistent parameter counts")));
            }
        }
        for (k, w) in layers.windows(2).enumerate() {
            if w[0].outputs != w[1].inputs {
                return Err(Error::contract(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    w[0].outputs,
                    k + 1,
                    w[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.biases))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn same_shape(&self, other: &DenseNet) -> bool {
        self.dims() == other.dims()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has {} values, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&x, &mut y);
            if k < last {
                relu(&mut y);
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.outputs);
            layer.affine(activations.last().unwrap(), &mut y);
            if k < last {
                relu(&mut y);
            }
            activations.push(y);
        }
        Ok(Trace { activations })
    }

    /// Adds `∂(output · output_grad)/∂θ` for the traced input into `grads`.
    pub fn accumulate_gradients(&self, trace: &Trace, output_grad: &[f64], grads: &mut Gradients) -> Result<()> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "output gradient has {} values, network outputs {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        if !self.same_shape(grads) || trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::contract("gradient buffer or trace does not match the network"));
        }
        let mut delta = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &trace.activations[k];
            let g = &mut grads.layers[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU derivative through the stored post-activation values.
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Gradients of `output · output_grad` with respect to every parameter.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = self.zeros_like();
        self.accumulate_gradients(&trace, output_grad, &mut grads)?;
        Ok(grads)
    }

    pub fn zeros_like(&self) -> DenseNet {
        DenseNet {
            layers: self.layers.iter().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.params().map(|p| p * p).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.params_mut().for_each(|p| *p *= factor);
    }

    pub fn add_assign(&mut self, other: &DenseNet) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::contract("adding gradients of different shapes"));
        }
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += b;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// Writes the `SRLW 1` text form.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        write!(out, "dims")?;
        for d in self.dims() {
            write!(out, " {d}")?;
        }
        writeln!(out)?;
        for layer in &self.layers {
            write!(out, "W")?;
            for w in &layer.weights {
                write!(out, " {w:?}")?;
            }
            writeln!(out)?;
            write!(out, "b")?;
            for b in &layer.biases {
                write!(out, " {b:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("weights text is ASCII")
    }

    pub fn read_from(input: impl BufRead, source_name: &str) -> Result<DenseNet> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let line = |n: usize| -> Result<&str> {
            lines
                .get(n - 1)
                .map(String::as_str)
                .ok_or_else(|| Error::parse(source_name, n, "unexpected end of file"))
        };
        if line(1)?.trim_end() != MAGIC {
            return Err(Error::parse(source_name, 1, format!("expected `{MAGIC}`")));
        }
        let mut dims_fields = line(2)?.split_whitespace();
        if dims_fields.next() != Some("dims") {
            return Err(Error::parse(source_name, 2, "expected `dims` line"));
        }
        let dims: Vec<usize> = dims_fields
            .map(|f| f.parse::<usize>().map_err(|_| Error::parse(source_name, 2, format!("bad dimension `{f}`"))))
            .collect::<Result<_>>()?;
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::parse(source_name, 2, format!("invalid dims {dims:?}")));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, w) in dims.windows(2).enumerate() {
            let (inputs, outputs) = (w[0], w[1]);
            let wn = 3 + 2 * k;
            let weights = parse_values(line(wn)?, "W", inputs * outputs, source_name, wn)?;
            let biases = parse_values(line(wn + 1)?, "b", outputs, source_name, wn + 1)?;
            layers.push(DenseLayer {
                weights,
                biases,
                inputs,
                outputs,
            });
        }
        let expected = 2 + 2 * layers.len();
        if let Some((extra, _)) = lines.iter().enumerate().skip(expected).find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(source_name, extra + 1, "trailing content after last layer"));
        }
        DenseNet::from_layers(layers)
    }

    pub fn load(path: &Path) -> Result<DenseNet> {
        let file = std::fs::File::open(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        DenseNet::read_from(std::io::BufReader::new(file), &path.display().to_string()).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Load {
                path: path.to_path_buf(),
                message: format!("line {line}: {message}"),
            },
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut file)?;
        file.flush()?;
        Ok(())
    }
}

fn parse_values(line: &str, tag: &str, count: usize, source_name: &str, n: usize) -> Result<Vec<f64>> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some(tag) {
        return Err(Error::parse(source_name, n, format!("expected `{tag}` line")));
    }
    let values: Vec<f64> = fields
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(source_name, n, format!("bad value `{f}`")))
        })
        .collect::<Result<_>>()?;
    if values.len() != count {
        return Err(Error::parse(
            source_name,
            n,
            format!("expected {count} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Uniform fan-based initialisation in `±√(6/(in+out))`, zero biases.
pub fn init_network(dims: &[usize], seed: u64) -> Result<DenseNet> {
    init_network_with(dims, &mut seeded(seed, Stream::Init))
}

pub fn init_network_with(dims: &[usize], rng: &mut impl Rng) -> Result<DenseNet> {
    let mut net = DenseNet::zeros(dims)?;
    for layer in &mut net.layers {
        let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    Ok(net)
}

/// Plain gradient descent with the gradient clipped to [`MAX_GRAD_NORM`].
pub fn optimizer_step(net: &mut DenseNet, grads: &Gradients, lr: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::contract(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !net.same_shape(grads) {
        return Err(Error::contract("gradient shape does not match the network"));
    }
    if !grads.is_finite() {
        return Err(Error::contract("non-finite gradients"));
    }
    let norm = grads.norm();
    let scale = if norm > MAX_GRAD_NORM { MAX_GRAD_NORM / norm } else { 1.0 };
    for (p, g) in net.params_mut().zip(grads.params()) {
        *p -= lr * scale * g;
    }
    Ok(())
}
