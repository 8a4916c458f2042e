//! CART decision tree with weighted Gini impurity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A node in a tree's flat node array. Children always have larger indices
/// than their parent; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Class probabilities `[P(bona fide), P(morph)]`.
    Leaf([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf `P(morph)` for `x`. Samples with `x[f] <= threshold` go left.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                Node::Leaf(p) => return p[1],
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

/// Column-major training data shared by all trees of a forest.
pub(crate) struct Columns<'a> {
    pub cols: &'a [Vec<f64>],
    pub is_morph: &'a [bool],
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_features: usize,
    /// Per-class weight `[bona fide, morph]`.
    pub class_weight: [f64; 2],
}

struct Sample {
    index: usize,
    /// Bootstrap multiplicity.
    count: usize,
}

struct Best {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

pub(crate) fn grow(
    data: &Columns<'_>,
    params: &GrowParams,
    sample_counts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Tree {
    let samples: Vec<Sample> = sample_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(index, &count)| Sample { index, count })
        .collect();
    let mut tree = Tree { nodes: Vec::new() };
    build(data, params, samples, 0, rng, &mut tree);
    tree
}

fn class_mass(data: &Columns<'_>, params: &GrowParams, samples: &[Sample]) -> [f64; 2] {
    let mut w = [0.0; 2];
    for s in samples {
        let c = data.is_morph[s.index] as usize;
        w[c] += s.count as f64 * params.class_weight[c];
    }
    w
}

fn gini(w: [f64; 2]) -> f64 {
    let total = w[0] + w[1];
    if total <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (w[0] / total, w[1] / total);
    1.0 - p0 * p0 - p1 * p1
}

fn leaf(w: [f64; 2]) -> Node {
    let total = w[0] + w[1];
    let p1 = if total > 0.0 { w[1] / total } else { 0.5 };
    Node::Leaf([1.0 - p1, p1])
}

fn build(
    data: &Columns<'_>,
    params: &GrowParams,
    samples: Vec<Sample>,
    depth: usize,
    rng: &mut ChaCha8Rng,
    tree: &mut Tree,
) -> usize {
    let id = tree.nodes.len();
    let mass = class_mass(data, params, &samples);
    tree.nodes.push(leaf(mass));

    let n: usize = samples.iter().map(|s| s.count).sum();
    let pure = mass[0] == 0.0 || mass[1] == 0.0;
    let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
    if pure || depth_capped || n < 2 * params.min_samples_leaf {
        return id;
    }

    let Some(best) = find_split(data, params, &samples, mass, rng) else {
        return id;
    };
    let (left, right): (Vec<Sample>, Vec<Sample>) = samples
        .into_iter()
        .partition(|s| data.cols[best.feature][s.index] <= best.threshold);
    let l = build(data, params, left, depth + 1, rng, tree);
    let r = build(data, params, right, depth + 1, rng, tree);
    tree.nodes[id] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: l,
        right: r,
    };
    id
}

/// Draws features in random order until `max_features` non-constant ones
/// have been evaluated (or none remain), then returns the lowest weighted
/// child impurity. Ties go to the lower feature index, then the lower
/// threshold.
fn find_split(
    data: &Columns<'_>,
    params: &GrowParams,
    samples: &[Sample],
    mass: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Option<Best> {
    let dim = data.cols.len();
    let mut order: Vec<usize> = (0..dim).collect();
    let mut visited = 0;
    let mut values: Vec<(f64, usize, usize)> = Vec::with_capacity(samples.len());
    let mut best: Option<Best> = None;
    let total = mass[0] + mass[1];
    let n: usize = samples.iter().map(|s| s.count).sum();

    for i in 0..dim {
        if visited == params.max_features {
            break;
        }
        let j = rng.random_range(i..dim);
        order.swap(i, j);
        let f = order[i];

        values.clear();
        values.extend(samples.iter().map(|s| {
            (
                data.cols[f][s.index],
                data.is_morph[s.index] as usize,
                s.count,
            )
        }));
        values.sort_by(|a, b| a.0.total_cmp(&b.0));
        if values.first().map(|v| v.0) == values.last().map(|v| v.0) {
            continue;
        }
        visited += 1;

        let mut left_w = [0.0; 2];
        let mut left_n = 0usize;
        for k in 0..values.len() - 1 {
            let (v, c, cnt) = values[k];
            left_w[c] += cnt as f64 * params.class_weight[c];
            left_n += cnt;
            let next = values[k + 1].0;
            if next == v {
                continue;
            }
            if left_n < params.min_samples_leaf || n - left_n < params.min_samples_leaf {
                continue;
            }
            let right_w = [mass[0] - left_w[0], mass[1] - left_w[1]];
            let lt = left_w[0] + left_w[1];
            let rt = right_w[0] + right_w[1];
            let impurity = (lt * gini(left_w) + rt * gini(right_w)) / total;
            let mut threshold = v + (next - v) / 2.0;
            if threshold >= next {
                threshold = v;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    impurity < b.impurity
                        || (impurity == b.impurity
                            && (f < b.feature || (f == b.feature && threshold < b.threshold)))
                }
            };
            if better {
                best = Some(Best {
                    feature: f,
                    threshold,
                    impurity,
                });
            }
        }
    }
    best
}
