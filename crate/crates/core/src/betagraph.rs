//! Correlation graph over feature, label, and identity nodes, with
//! beta-distribution edge screening and the beta-guided correlation (BGC)
//! loss.
//!
//! Under the null hypothesis that two directions in R^b are independent, the
//! squared sine of the angle between them follows Beta((b-1)/2, 1/2). Edges
//! whose angle statistic falls below the Bonferroni-corrected lower quantile
//! of that distribution are considered significant. Training uses a smooth
//! sigmoid relaxation of that threshold; analysis uses the hard version.

use serde::Serialize;

use crate::diffcomp::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::specialfn::inv_reg_inc_beta;

/// Lambda values are clamped to this open interval before the sigmoid so
/// gradients stay finite; the clamped region carries zero gradient.
const LAMBDA_FLOOR: f64 = 1e-12;
/// Columns with norm below this are treated as degenerate (lambda = 1,
/// zero gradient).
const NORM_FLOOR: f64 = 1e-12;
/// Sigmoid outputs this close to 0 or 1 are treated as saturated in the
/// backward pass; their true derivative contribution is below 1e-10 of the
/// typical gradient scale.
const SATURATION: f64 = 1e-12;

/// What a graph node represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Feature,
    Label,
    Identity,
}

/// Column-major matrix of node signals: `p` feature columns, `n_lab` label
/// columns, and one identity column, each of length `batch`.
#[derive(Clone, Debug)]
pub struct NodeMatrix<R: Real> {
    batch: usize,
    p: usize,
    n_lab: usize,
    cols: Vec<R>,
}

impl<R: Real> NodeMatrix<R> {
    /// Assemble from row-major per-sample data: `features` is [batch, p],
    /// `labels` is [batch, n_lab], `identity` holds one scalar per sample.
    pub fn new(features: &Tensor<R>, labels: &Tensor<R>, identity: &[R]) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::shape(
                "node matrix features",
                "[batch, p]",
                format!("{:?}", features.shape()),
            ));
        }
        let (batch, p) = (features.shape()[0], features.shape()[1]);
        if labels.rank() != 2 || labels.shape()[0] != batch {
            return Err(Error::shape(
                "node matrix labels",
                format!("[{batch}, n_lab]"),
                format!("{:?}", labels.shape()),
            ));
        }
        let n_lab = labels.shape()[1];
        if p == 0 || n_lab == 0 {
            return Err(Error::invalid("node matrix needs p >= 1 features and n_lab >= 1 labels"));
        }
        if identity.len() != batch {
            return Err(Error::shape(
                "node matrix identity",
                format!("[{batch}]"),
                format!("[{}]", identity.len()),
            ));
        }
        let w = p + n_lab + 1;
        let mut cols = vec![R::zero(); w * batch];
        transpose_into(&mut cols[..p * batch], features.data(), batch, p);
        transpose_into(&mut cols[p * batch..(p + n_lab) * batch], labels.data(), batch, n_lab);
        cols[(w - 1) * batch..].copy_from_slice(identity);
        Ok(Self { batch, p, n_lab, cols })
    }

    pub fn w(&self) -> usize {
        self.p + self.n_lab + 1
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn features(&self) -> usize {
        self.p
    }

    pub fn labels(&self) -> usize {
        self.n_lab
    }

    pub fn column(&self, i: usize) -> &[R] {
        &self.cols[i * self.batch..(i + 1) * self.batch]
    }

    pub fn role(&self, i: usize) -> NodeRole {
        if i < self.p {
            NodeRole::Feature
        } else if i < self.p + self.n_lab {
            NodeRole::Label
        } else {
            NodeRole::Identity
        }
    }

    /// Short display name per node: f0.., y0.., id.
    pub fn node_name(&self, i: usize) -> String {
        match self.role(i) {
            NodeRole::Feature => format!("f{i}"),
            NodeRole::Label => format!("y{}", i - self.p),
            NodeRole::Identity => "id".to_string(),
        }
    }
}

/// Scatter a row-major [rows, cols] block into column-major storage.
fn transpose_into<R: Real>(dst: &mut [R], src: &[R], rows: usize, cols: usize) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Screening parameters. `alpha` is the family-wise significance level split
/// over all node pairs (Bonferroni); `sharpness` is the sigmoid slope of the
/// smooth threshold.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ScreeningConfig {
    pub alpha: f64,
    pub sharpness: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self { alpha: 0.05, sharpness: 100.0 }
    }
}

/// Per-(w, batch) resolution of a [`ScreeningConfig`]. Data-independent, so
/// callers that screen repeatedly (the trainer) resolve once and reuse.
#[derive(Clone, Copy, Debug)]
pub struct ResolvedScreening<R: Real> {
    pub w: usize,
    pub batch: usize,
    /// Per-test level alpha / (w(w-1)/2).
    pub eta: f64,
    /// Lower eta-quantile of Beta((batch-1)/2, 1/2).
    pub q_eta: R,
    pub sharpness: R,
}

impl ScreeningConfig {
    pub fn resolve<R: Real>(&self, w: usize, batch: usize) -> Result<ResolvedScreening<R>> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "screening alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.sharpness > 0.0) {
            return Err(Error::invalid(format!(
                "screening sharpness must be positive, got {}",
                self.sharpness
            )));
        }
        if w < 2 {
            return Err(Error::invalid(format!("screening needs at least 2 nodes, got {w}")));
        }
        if batch < 3 {
            return Err(Error::invalid(format!(
                "screening needs batch >= 3 for valid beta parameters, got {batch}"
            )));
        }
        let tests = (w * (w - 1) / 2) as f64;
        let eta = self.alpha / tests;
        let a = R::of((batch as f64 - 1.0) / 2.0);
        let q_eta = inv_reg_inc_beta(R::of(eta), a, R::of(0.5))?;
        Ok(ResolvedScreening {
            w,
            batch,
            eta,
            q_eta,
            sharpness: R::of(self.sharpness),
        })
    }
}

/// Squared sine of the angle between two vectors: 1 - cos²(u, v), in [0, 1].
/// Degenerate vectors (norm below 1e-12) give 1: a dead direction carries no
/// evidence of association.
pub fn sin_sq_angle<R: Real>(u: &[R], v: &[R]) -> R {
    let c = cosine(u, v);
    (R::one() - c * c).max(R::zero()).min(R::one())
}

fn cosine<R: Real>(u: &[R], v: &[R]) -> R {
    let nu = crate::diffcomp::dot(u, u).sqrt();
    let nv = crate::diffcomp::dot(v, v).sqrt();
    let floor = R::of(NORM_FLOOR);
    if nu < floor || nv < floor {
        return R::zero();
    }
    let c = crate::diffcomp::dot(u, v) / (nu * nv);
    c.max(-R::one()).min(R::one())
}

/// Sign matrix S of the BGC loss: +1 between features and between a feature
/// and the identity, -1 between a feature and a label, 0 elsewhere
/// (diagonal, label-label, label-identity). Node order: features, labels,
/// identity.
pub fn build_sign_matrix<R: Real>(p: usize, n_lab: usize) -> Result<Tensor<R>> {
    if p == 0 || n_lab == 0 {
        return Err(Error::invalid("sign matrix needs p >= 1 and n_lab >= 1"));
    }
    let w = p + n_lab + 1;
    let mut data = vec![R::zero(); w * w];
    for i in 0..w {
        for j in 0..w {
            data[i * w + j] = R::of(sign_entry(i, j, p, n_lab));
        }
    }
    Ok(Tensor::from_raw(vec![w, w], data))
}

fn sign_entry(i: usize, j: usize, p: usize, n_lab: usize) -> f64 {
    if i == j {
        return 0.0;
    }
    let is_feature = |k: usize| k < p;
    let is_label = |k: usize| k >= p && k < p + n_lab;
    match (is_feature(i), is_feature(j)) {
        (true, true) => 1.0,
        (true, false) | (false, true) => {
            let other = if is_feature(i) { j } else { i };
            if is_label(other) {
                -1.0
            } else {
                1.0 // feature-identity
            }
        }
        (false, false) => 0.0,
    }
}

/// Smooth adjacency: entry (i, j) is sigmoid(m (Q_eta - lambda_ij)), i.e.
/// near 1 when the angle statistic is significantly below chance and near 0
/// otherwise. The diagonal (self-connection) is exactly 1.
pub fn build_adjacency<R: Real>(
    nodes: &NodeMatrix<R>,
    cfg: &ScreeningConfig,
) -> Result<Tensor<R>> {
    let resolved = cfg.resolve::<R>(nodes.w(), nodes.batch())?;
    let w = nodes.w();
    let (_norms, cos) = pairwise_cosines(&nodes.cols, w, nodes.batch);
    let mut data = vec![R::zero(); w * w];
    for i in 0..w {
        data[i * w + i] = R::one();
        for j in (i + 1)..w {
            let lambda = clamp_lambda(R::one() - cos[i * w + j] * cos[i * w + j]);
            let a = sigmoid(resolved.sharpness * (resolved.q_eta - lambda));
            data[i * w + j] = a;
            data[j * w + i] = a;
        }
    }
    Ok(Tensor::from_raw(vec![w, w], data))
}

/// BGC loss of a fixed adjacency against a sign matrix:
/// (1/w²) ΣΣ S_ij A_ij over all entries.
pub fn bgc_loss_value<R: Real>(adjacency: &Tensor<R>, signs: &Tensor<R>) -> Result<R> {
    if adjacency.shape() != signs.shape() || adjacency.rank() != 2
        || adjacency.shape()[0] != adjacency.shape()[1]
    {
        return Err(Error::shape(
            "bgc_loss matrices",
            "matching [w, w]",
            format!("{:?} vs {:?}", adjacency.shape(), signs.shape()),
        ));
    }
    let w = adjacency.shape()[0];
    let total = crate::diffcomp::dot(adjacency.data(), signs.data());
    Ok(total / R::of((w * w) as f64))
}

fn clamp_lambda<R: Real>(lambda: R) -> R {
    lambda.max(R::of(LAMBDA_FLOOR)).min(R::of(1.0 - LAMBDA_FLOOR))
}

fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// Column norms and the full symmetric cosine matrix of `w` columns of
/// length `b`. Degenerate columns produce zero cosines.
fn pairwise_cosines<R: Real>(cols: &[R], w: usize, b: usize) -> (Vec<R>, Vec<R>) {
    let mut norms = vec![R::zero(); w];
    for i in 0..w {
        norms[i] = crate::diffcomp::dot(&cols[i * b..(i + 1) * b], &cols[i * b..(i + 1) * b]).sqrt();
    }
    let floor = R::of(NORM_FLOOR);
    let mut cos = vec![R::zero(); w * w];
    for i in 0..w {
        cos[i * w + i] = R::one();
        for j in (i + 1)..w {
            let c = if norms[i] < floor || norms[j] < floor {
                R::zero()
            } else {
                let raw = crate::diffcomp::dot(&cols[i * b..(i + 1) * b], &cols[j * b..(j + 1) * b])
                    / (norms[i] * norms[j]);
                raw.max(-R::one()).min(R::one())
            };
            cos[i * w + j] = c;
            cos[j * w + i] = c;
        }
    }
    (norms, cos)
}

/// Differentiable BGC loss on a tape. `features` is a [batch, p] tape
/// variable; `labels` ([batch, n_lab]) and `identity` (one scalar per
/// sample) are constants by construction, so only feature columns receive
/// gradients. Returns the scalar loss node.
pub fn bgc_loss<R: Real>(
    tape: &mut Tape<R>,
    features: Var,
    labels: &Tensor<R>,
    identity: &[R],
    cfg: &ScreeningConfig,
) -> Result<Var> {
    let feat = tape.value(features);
    if feat.rank() != 2 {
        return Err(Error::shape("bgc_loss features", "[batch, p]", format!("{:?}", feat.shape())));
    }
    let (batch, p) = (feat.shape()[0], feat.shape()[1]);
    if labels.rank() != 2 || labels.shape()[0] != batch {
        return Err(Error::shape(
            "bgc_loss labels",
            format!("[{batch}, n_lab]"),
            format!("{:?}", labels.shape()),
        ));
    }
    let n_lab = labels.shape()[1];
    if p == 0 || n_lab == 0 {
        return Err(Error::invalid("bgc_loss needs p >= 1 and n_lab >= 1"));
    }
    if identity.len() != batch {
        return Err(Error::shape(
            "bgc_loss identity",
            format!("[{batch}]"),
            format!("[{}]", identity.len()),
        ));
    }
    let resolved = cfg.resolve::<R>(p + n_lab + 1, batch)?;
    let op = BgcLossOp {
        features,
        labels: labels.clone(),
        identity: identity.to_vec(),
        p,
        n_lab,
        resolved,
    };
    let value = op.loss_value(tape.value(features));
    tape.custom(Box::new(op), Tensor::scalar(value))
}

struct BgcLossOp<R: Real> {
    features: Var,
    labels: Tensor<R>,
    identity: Vec<R>,
    p: usize,
    n_lab: usize,
    resolved: ResolvedScreening<R>,
}

impl<R: Real> BgcLossOp<R> {
    fn w(&self) -> usize {
        self.p + self.n_lab + 1
    }

    fn assemble(&self, features: &Tensor<R>) -> Vec<R> {
        let b = self.identity.len();
        let w = self.w();
        let mut cols = vec![R::zero(); w * b];
        transpose_into(&mut cols[..self.p * b], features.data(), b, self.p);
        transpose_into(
            &mut cols[self.p * b..(self.p + self.n_lab) * b],
            self.labels.data(),
            b,
            self.n_lab,
        );
        cols[(w - 1) * b..].copy_from_slice(&self.identity);
        cols
    }

    fn loss_value(&self, features: &Tensor<R>) -> R {
        let w = self.w();
        let b = self.identity.len();
        let cols = self.assemble(features);
        let (_, cos) = pairwise_cosines(&cols, w, b);
        let mut total = R::zero();
        for i in 0..w {
            for j in (i + 1)..w {
                let s = sign_entry(i, j, self.p, self.n_lab);
                if s == 0.0 {
                    continue;
                }
                let lambda = clamp_lambda(R::one() - cos[i * w + j] * cos[i * w + j]);
                let a = sigmoid(self.resolved.sharpness * (self.resolved.q_eta - lambda));
                // Both (i, j) and (j, i) contribute.
                total += R::of(2.0 * s) * a;
            }
        }
        total / R::of((w * w) as f64)
    }
}

impl<R: Real> CustomOp<R> for BgcLossOp<R> {
    fn name(&self) -> &'static str {
        "bgc_loss"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.features]
    }

    fn backward(
        &self,
        _out_value: &Tensor<R>,
        out_grad: &Tensor<R>,
        input_values: &[&Tensor<R>],
    ) -> Vec<Option<Tensor<R>>> {
        let g_out = out_grad.data()[0];
        let features = input_values[0];
        let w = self.w();
        let b = self.identity.len();
        let cols = self.assemble(features);
        let (norms, cos) = pairwise_cosines(&cols, w, b);
        let floor = R::of(NORM_FLOOR);
        let sat = R::of(SATURATION);
        let lambda_lo = R::of(LAMBDA_FLOOR);
        let lambda_hi = R::of(1.0 - LAMBDA_FLOOR);
        let w2 = R::of((w * w) as f64);
        let mut d_cols = vec![R::zero(); w * b];
        for i in 0..w {
            for j in (i + 1)..w {
                // Only pairs with at least one feature column can propagate.
                if i >= self.p && j >= self.p {
                    continue;
                }
                let s = sign_entry(i, j, self.p, self.n_lab);
                if s == 0.0 {
                    continue;
                }
                if norms[i] < floor || norms[j] < floor {
                    continue; // degenerate column: zero gradient by contract
                }
                let c = cos[i * w + j];
                let lambda_raw = R::one() - c * c;
                if lambda_raw <= lambda_lo || lambda_raw >= lambda_hi {
                    continue; // clamped region is flat
                }
                let a = sigmoid(self.resolved.sharpness * (self.resolved.q_eta - lambda_raw));
                if a <= sat || a >= R::one() - sat {
                    continue; // saturated sigmoid: derivative below noise
                }
                // d loss / d lambda for the mirrored pair.
                let dl_dlambda =
                    -g_out * R::of(2.0 * s) * self.resolved.sharpness * a * (R::one() - a) / w2;
                // d lambda / d cos = -2 cos.
                let dl_dcos = dl_dlambda * R::of(-2.0) * c;
                let (ci, cj) = (&cols[i * b..(i + 1) * b], &cols[j * b..(j + 1) * b]);
                let inv_ninj = R::one() / (norms[i] * norms[j]);
                if i < self.p {
                    // d cos / d u = v/(|u||v|) - cos * u/|u|^2
                    let inv_ni2 = R::one() / (norms[i] * norms[i]);
                    let dst = &mut d_cols[i * b..(i + 1) * b];
                    for k in 0..b {
                        dst[k] += dl_dcos * (cj[k] * inv_ninj - c * ci[k] * inv_ni2);
                    }
                }
                if j < self.p {
                    let inv_nj2 = R::one() / (norms[j] * norms[j]);
                    let dst = &mut d_cols[j * b..(j + 1) * b];
                    for k in 0..b {
                        dst[k] += dl_dcos * (ci[k] * inv_ninj - c * cj[k] * inv_nj2);
                    }
                }
            }
        }
        // Back to row-major [batch, p].
        let mut d_features = vec![R::zero(); b * self.p];
        for col in 0..self.p {
            for r in 0..b {
                d_features[r * self.p + col] = d_cols[col * b + r];
            }
        }
        vec![Some(Tensor::from_raw(vec![b, self.p], d_features))]
    }
}

/// One significant edge from [`screen_edges`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
}

/// Node metadata carried into graph exports.
#[derive(Clone, Debug, Serialize)]
pub struct NodeInfo {
    pub name: String,
    pub role: NodeRole,
}

/// Result of hard-threshold edge screening.
#[derive(Clone, Debug, Serialize)]
pub struct EdgeScreen {
    pub w: usize,
    pub alpha: f64,
    /// Per-test level; absent when fewer than two nodes means no tests ran.
    pub eta: Option<f64>,
    pub q_eta: Option<f64>,
    pub nodes: Vec<NodeInfo>,
    pub edges: Vec<Edge>,
}

impl EdgeScreen {
    /// Symmetric boolean adjacency of the significant edges.
    pub fn adjacency_bool(&self) -> Vec<bool> {
        let mut out = vec![false; self.w * self.w];
        for e in &self.edges {
            out[e.i * self.w + e.j] = true;
            out[e.j * self.w + e.i] = true;
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Graphviz DOT rendering with role tags and edge lambda labels.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph correlation {\n");
        for (idx, node) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "  n{idx} [label=\"{}\", role=\"{}\"];\n",
                node.name,
                match node.role {
                    NodeRole::Feature => "feature",
                    NodeRole::Label => "label",
                    NodeRole::Identity => "identity",
                }
            ));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  n{} -- n{} [label=\"{:.6}\"];\n",
                e.i, e.j, e.lambda
            ));
        }
        out.push_str("}\n");
        out
    }
}

/// Hard-threshold screening over role-tagged nodes.
pub fn screen_edges<R: Real>(nodes: &NodeMatrix<R>, alpha: f64) -> Result<EdgeScreen> {
    let infos: Vec<NodeInfo> = (0..nodes.w())
        .map(|i| NodeInfo { name: nodes.node_name(i), role: nodes.role(i) })
        .collect();
    screen_columns(&nodes.cols, nodes.w(), nodes.batch, alpha, infos)
}

/// Hard-threshold screening over a plain [batch, w] matrix whose columns are
/// the nodes (no role information). With fewer than two columns the edge set
/// is empty and no quantile is computed.
pub fn screen_edges_matrix<R: Real>(columns: &Tensor<R>, alpha: f64) -> Result<EdgeScreen> {
    if columns.rank() != 2 {
        return Err(Error::shape(
            "screen_edges_matrix",
            "[batch, w]",
            format!("{:?}", columns.shape()),
        ));
    }
    let (batch, w) = (columns.shape()[0], columns.shape()[1]);
    let mut cols = vec![R::zero(); w * batch];
    transpose_into(&mut cols, columns.data(), batch, w);
    let infos: Vec<NodeInfo> = (0..w)
        .map(|i| NodeInfo { name: format!("n{i}"), role: NodeRole::Feature })
        .collect();
    screen_columns(&cols, w, batch, alpha, infos)
}

fn screen_columns<R: Real>(
    cols: &[R],
    w: usize,
    batch: usize,
    alpha: f64,
    nodes: Vec<NodeInfo>,
) -> Result<EdgeScreen> {
    if w < 2 {
        return Ok(EdgeScreen { w, alpha, eta: None, q_eta: None, nodes, edges: Vec::new() });
    }
    let resolved = ScreeningConfig { alpha, ..Default::default() }.resolve::<R>(w, batch)?;
    let (_, cos) = pairwise_cosines(cols, w, batch);
    let mut edges = Vec::new();
    for i in 0..w {
        for j in (i + 1)..w {
            let lambda = R::one() - cos[i * w + j] * cos[i * w + j];
            if lambda < resolved.q_eta {
                edges.push(Edge { i, j, lambda: lambda.as_f64() });
            }
        }
    }
    Ok(EdgeScreen {
        w,
        alpha,
        eta: Some(resolved.eta),
        q_eta: Some(resolved.q_eta.as_f64()),
        nodes,
        edges,
    })
}
