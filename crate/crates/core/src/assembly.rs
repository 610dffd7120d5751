//! De-novo construction of large webs by stacking samples along a path.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormalizationParams;
use crate::graph::join_violations;
use crate::{Error, Graph, Permutation, Point3, Result, NUM_FEATURES};

/// End of the parametric curve's domain, about `4 pi`.
pub const PARAMETRIC_DOMAIN_END: f64 = 12.57;

/// Per-step offset of stacked samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Placement {
    /// `(R cos(i dphi), R sin(i dphi), i t)`.
    Helix { radius: f64, dphi: f64, slope: f64 },
    /// `scale * ((A + cos(B s)) cos s, (A + cos(B s)) sin s, sin(B s))` with `s = i t_step`.
    Parametric { a: f64, b: f64, t_step: f64, scale: f64 },
    /// `i d`.
    Offset { d: Point3 },
}

impl Placement {
    /// Helix sized from a sample's bounding radius `r`: `R = 2r`, `dphi = pi/6`, `t = 0.3r`.
    pub fn default_helix(r: f64) -> Self {
        Placement::Helix { radius: 2.0 * r, dphi: PI / 6.0, slope: 0.3 * r }
    }

    /// `A = 2`, `B = 1.5`, `t_step = 0.05`.
    pub fn default_parametric(scale: f64) -> Self {
        Placement::Parametric { a: 2.0, b: 1.5, t_step: 0.05, scale }
    }

    /// Number of steps that covers the parametric domain (251 for `t_step = 0.05`).
    pub fn parametric_steps(t_step: f64) -> usize {
        (PARAMETRIC_DOMAIN_END / t_step + 1e-9).floor() as usize
    }

    pub fn eval(&self, i: usize) -> Result<Point3> {
        let fi = i as f64;
        Ok(match *self {
            Placement::Helix { radius, dphi, slope } => {
                Point3::new(radius * (fi * dphi).cos(), radius * (fi * dphi).sin(), fi * slope)
            }
            Placement::Parametric { a, b, t_step, scale } => {
                let s = fi * t_step;
                if s > PARAMETRIC_DOMAIN_END + 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "step {i} puts the curve parameter at {s}, beyond {PARAMETRIC_DOMAIN_END}"
                    )));
                }
                let r = a + (b * s).cos();
                Point3::new(r * s.cos(), r * s.sin(), (b * s).sin()) * scale
            }
            Placement::Offset { d } => d * fi,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Merge {
    Average,
    TakeSecond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackPolicy {
    /// Nodes shared between consecutive blocks.
    pub overlap: usize,
    pub merge: Merge,
    /// Shuffle each sample with a seeded random permutation before stacking.
    pub shuffle_seed: Option<u64>,
}

impl Default for StackPolicy {
    fn default() -> Self {
        Self { overlap: 0, merge: Merge::Average, shuffle_seed: None }
    }
}

/// Merges `new` (shifted by `offset`) into `acc`.
///
/// The last `k` entries of `block` (accumulator indices of the most recent block) are
/// identified with the first `k` nodes of `new`. Returns the merged graph and the
/// accumulator indices of `new`'s nodes in order.
pub fn stack(
    acc: &Graph,
    block: &[usize],
    new: &Graph,
    k: usize,
    merge: Merge,
    offset: Point3,
) -> Result<(Graph, Vec<usize>)> {
    if k > block.len() || k > new.node_count() {
        return Err(Error::InvalidArgument(format!(
            "overlap {k} exceeds block sizes {} and {}",
            block.len(),
            new.node_count()
        )));
    }
    if let Some(&bad) = block.iter().find(|&&i| i >= acc.node_count()) {
        return Err(Error::NodeOutOfRange { index: bad, len: acc.node_count() });
    }
    let mut positions = acc.positions().to_vec();
    let shared = &block[block.len() - k..];
    let mut map = Vec::with_capacity(new.node_count());
    for (t, &p) in new.positions().iter().enumerate() {
        let shifted = p + offset;
        if t < k {
            let target = shared[t];
            positions[target] = match merge {
                Merge::Average => (positions[target] + shifted) * 0.5,
                Merge::TakeSecond => shifted,
            };
            map.push(target);
        } else {
            map.push(positions.len());
            positions.push(shifted);
        }
    }
    let edges = acc.edges().iter().copied().chain(new.edges().iter().map(|&(a, b)| (map[a], map[b])));
    Ok((Graph::from_edge_union(positions, edges)?, map))
}

/// Where samples come from during assembly.
pub enum GraphSource<'a> {
    Fixed(Graph),
    Cycle(Vec<Graph>),
    /// Called with the step index.
    Generator(Box<dyn FnMut(usize) -> Result<Graph> + 'a>),
}

impl GraphSource<'_> {
    fn draw(&mut self, step: usize) -> Result<Graph> {
        match self {
            GraphSource::Fixed(g) => Ok(g.clone()),
            GraphSource::Cycle(gs) if gs.is_empty() => Err(Error::Empty),
            GraphSource::Cycle(gs) => Ok(gs[step % gs.len()].clone()),
            GraphSource::Generator(f) => f(step),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub graph: Graph,
    /// Step that contributed each node; overlap nodes keep the step that created them.
    pub provenance: Vec<usize>,
}

/// Stacks `n_steps` samples, the `i`-th shifted by `placement.eval(i)`.
pub fn assemble(source: &mut GraphSource, placement: &Placement, n_steps: usize, policy: &StackPolicy) -> Result<Assembly> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("assembly needs at least one step".into()));
    }
    let mut rng = policy.shuffle_seed.map(ChaCha8Rng::seed_from_u64);
    let mut acc = Graph::empty();
    let mut block: Vec<usize> = Vec::new();
    let mut provenance = Vec::new();
    for i in 0..n_steps {
        let mut sample = source.draw(i)?;
        let violations = sample.validate(true);
        if !violations.is_empty() {
            return Err(Error::InvalidGraph(format!("sample for step {i}: {}", join_violations(&violations))));
        }
        if let Some(r) = rng.as_mut() {
            sample = sample.permute(&Permutation::random(sample.node_count(), r))?;
        }
        let k = if i == 0 { 0 } else { policy.overlap };
        let (next, map) = stack(&acc, &block, &sample, k, policy.merge, placement.eval(i)?)?;
        provenance.resize(next.node_count(), i);
        acc = next;
        block = map;
    }
    Ok(Assembly { graph: acc, provenance })
}

/// Uniform draw of normalized features with the degree ratio made consistent with the
/// drawn node and edge counts. Draws whose implied ratio falls outside the training range
/// are redrawn a bounded number of times, then clamped.
pub fn random_conditioning<R: Rng + ?Sized>(params: &NormalizationParams, rng: &mut R) -> [f64; NUM_FEATURES] {
    const ATTEMPTS: usize = 100;
    let mut out = [0.0; NUM_FEATURES];
    for _ in 0..ATTEMPTS {
        for v in out.iter_mut() {
            *v = rng.random_range(-1.0..=1.0);
        }
        let nodes = params.denormalize_feature(4, out[4]).round().max(1.0);
        let edges = params.denormalize_feature(5, out[5]).round().max(0.0);
        out[4] = params.normalize_feature(4, nodes);
        out[5] = params.normalize_feature(5, edges);
        out[6] = params.normalize_feature(6, edges / nodes);
        if out.iter().all(|v| v.abs() <= 1.0) {
            return out;
        }
    }
    out.map(|v| v.clamp(-1.0, 1.0))
}

/// Seeded form of [`random_conditioning`].
pub fn random_conditioning_seeded(params: &NormalizationParams, seed: u64) -> [f64; NUM_FEATURES] {
    random_conditioning(params, &mut ChaCha8Rng::seed_from_u64(seed))
}
