use std::sync::Arc;

use super::Aggregator;
use crate::numeric::{gemm, CustomOp, NumericError, Tensor};

/// Per node `(neighbor_id, edge_index)`, ascending by neighbor id.
pub type Adjacency = Vec<Vec<(usize, usize)>>;

/// `W_e · h_j` for a row-major `G×G` weight slice.
pub(crate) fn matvec(w: &[f64], h: &[f64], out: &mut [f64]) {
    let g = h.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * g..(r + 1) * g];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(h) {
            acc += a * b;
        }
        *o = acc;
    }
}

/// Edge-conditioned message passing aggregate, fused with the last layer of
/// the edge network.
///
/// Inputs: node embeddings `H [N×G]`, edge-network hidden activations
/// `R [E×D]`, and the output layer `W2 [D×G²]`, `b2 [1×G²]`. Edge `e` has
/// the row-major weight matrix `W_e = reshape(R_e·W2 + b2)`, and output row
/// `i` aggregates `W_e · h_j` over the neighbors `j` of `i` in ascending id
/// order (zero row without neighbors).
///
/// `W_e` is never formed. With `W2_k` the `G×G` matrix in row `k` of `W2`
/// and `B` the one in `b2`, `W_e·h_j = Σ_k R_ek · (W2_k·h_j) + B·h_j`, so a
/// single GEMM `Z = H·W2'` (`N × D·G`) yields every `W2_k·h_j` and each
/// message is a `D`-term combination of rows of `Z`.
pub(crate) struct EdgeConv {
    adjacency: Arc<Adjacency>,
    agg: Aggregator,
    z: Tensor,
    bh: Tensor,
    w2p: Tensor,
    bp: Tensor,
    // max only: winning neighbor position per output coordinate
    argmax: Vec<usize>,
}

impl EdgeConv {
    pub(crate) fn new(adjacency: Arc<Adjacency>, agg: Aggregator) -> Self {
        let empty = Tensor::zeros(&[1, 1]);
        Self {
            adjacency,
            agg,
            z: empty.clone(),
            bh: empty.clone(),
            w2p: empty.clone(),
            bp: empty,
            argmax: Vec::new(),
        }
    }

    /// `m = Σ_k r_k · Z[j, k] + BH[j]`.
    fn message(&self, r: &[f64], j: usize, g: usize, out: &mut [f64]) {
        out.copy_from_slice(self.bh.row(j));
        let zj = self.z.row(j);
        for (k, &rk) in r.iter().enumerate() {
            for (o, z) in out.iter_mut().zip(&zj[k * g..(k + 1) * g]) {
                *o += rk * z;
            }
        }
    }
}

impl CustomOp for EdgeConv {
    fn name(&self) -> &'static str {
        "edge_conv"
    }

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, NumericError> {
        let [h, r, w2, b2] = inputs else {
            return Err(NumericError::Contract("edge_conv takes [H, R, W2, b2]".into()));
        };
        let (n, g) = h.expect_matrix("edge_conv H")?;
        let (e_count, d) = r.expect_matrix("edge_conv R")?;
        let (d2, gg) = w2.expect_matrix("edge_conv W2")?;
        if d2 != d || gg != g * g || b2.len() != g * g || self.adjacency.len() != n {
            return Err(NumericError::Shape(format!(
                "edge_conv: H [{n}×{g}], R [{e_count}×{d}], W2 [{d2}×{gg}], b2 {} values, \
                 adjacency over {} nodes",
                b2.len(),
                self.adjacency.len()
            )));
        }
        if let Some(&(_, bad)) = self.adjacency.iter().flatten().find(|(_, e)| *e >= e_count) {
            return Err(NumericError::Shape(format!(
                "edge_conv: edge {bad} out of {e_count}"
            )));
        }

        // W2'[c, k·G + a] = W2[k, a·G + c]; B'[c, a] = b2[a·G + c]
        let dg = d * g;
        let mut w2p = vec![0.0; g * dg];
        for k in 0..d {
            let row = w2.row(k);
            for a in 0..g {
                for c in 0..g {
                    w2p[c * dg + k * g + a] = row[a * g + c];
                }
            }
        }
        let mut bp = vec![0.0; g * g];
        for a in 0..g {
            for c in 0..g {
                bp[c * g + a] = b2.data()[a * g + c];
            }
        }
        self.w2p = Tensor::from_parts(vec![g, dg], w2p);
        self.bp = Tensor::from_parts(vec![g, g], bp);
        let mut z = vec![0.0; n * dg];
        gemm(h, false, &self.w2p, false, &mut z, false);
        let mut bh = vec![0.0; n * g];
        gemm(h, false, &self.bp, false, &mut bh, false);
        self.z = Tensor::from_parts(vec![n, dg], z);
        self.bh = Tensor::from_parts(vec![n, g], bh);

        let mut out = vec![0.0; n * g];
        let mut msg = vec![0.0; g];
        if self.agg == Aggregator::Max {
            self.argmax = vec![0; n * g];
        }
        for (i, list) in self.adjacency.iter().enumerate() {
            let acc = &mut out[i * g..(i + 1) * g];
            for (pos, &(j, e)) in list.iter().enumerate() {
                self.message(r.row(e), j, g, &mut msg);
                match self.agg {
                    Aggregator::Sum | Aggregator::Mean => {
                        for (a, m) in acc.iter_mut().zip(&msg) {
                            *a += m;
                        }
                    }
                    Aggregator::Max => {
                        for (c, (a, m)) in acc.iter_mut().zip(&msg).enumerate() {
                            if pos == 0 || *m > *a {
                                *a = *m;
                                self.argmax[i * g + c] = pos;
                            }
                        }
                    }
                }
            }
            if self.agg == Aggregator::Mean && !list.is_empty() {
                let deg = list.len() as f64;
                acc.iter_mut().for_each(|a| *a /= deg);
            }
        }
        Tensor::matrix(n, g, out)
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad: &Tensor,
        needs_grad: &[bool],
    ) -> Vec<Option<Tensor>> {
        let (h, r, w2) = (inputs[0], inputs[1], inputs[2]);
        let (n, g) = (h.rows(), h.cols());
        let d = r.cols();
        let dg = d * g;
        let need_z = needs_grad[0] || needs_grad[2] || needs_grad[3];

        let mut dz = vec![0.0; if need_z { n * dg } else { 0 }];
        let mut dbh = vec![0.0; if need_z { n * g } else { 0 }];
        let mut dr = needs_grad[1].then(|| vec![0.0; r.len()]);
        let mut gm = vec![0.0; g];
        for (i, list) in self.adjacency.iter().enumerate() {
            let gi = grad.row(i);
            let deg = list.len() as f64;
            for (pos, &(j, e)) in list.iter().enumerate() {
                for (c, slot) in gm.iter_mut().enumerate() {
                    *slot = match self.agg {
                        Aggregator::Sum => gi[c],
                        Aggregator::Mean => gi[c] / deg,
                        Aggregator::Max if self.argmax[i * g + c] == pos => gi[c],
                        Aggregator::Max => 0.0,
                    };
                }
                let re = r.row(e);
                if let Some(dr) = dr.as_mut() {
                    let zj = self.z.row(j);
                    for (k, slot) in dr[e * d..(e + 1) * d].iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (m, z) in gm.iter().zip(&zj[k * g..(k + 1) * g]) {
                            acc += m * z;
                        }
                        *slot += acc;
                    }
                }
                if need_z {
                    let dzj = &mut dz[j * dg..(j + 1) * dg];
                    for (k, &rk) in re.iter().enumerate() {
                        for (slot, m) in dzj[k * g..(k + 1) * g].iter_mut().zip(&gm) {
                            *slot += rk * m;
                        }
                    }
                    for (slot, m) in dbh[j * g..(j + 1) * g].iter_mut().zip(&gm) {
                        *slot += m;
                    }
                }
            }
        }

        let mut out = vec![None, dr.map(|v| Tensor::from_parts(vec![r.rows(), d], v)), None, None];
        if !need_z {
            return out;
        }
        let dz = Tensor::from_parts(vec![n, dg], dz);
        let dbh = Tensor::from_parts(vec![n, g], dbh);
        if needs_grad[0] {
            let mut dh = vec![0.0; n * g];
            gemm(&dz, false, &self.w2p, true, &mut dh, false);
            gemm(&dbh, false, &self.bp, true, &mut dh, true);
            out[0] = Some(Tensor::from_parts(vec![n, g], dh));
        }
        if needs_grad[2] {
            let mut dw2p = vec![0.0; g * dg];
            gemm(h, true, &dz, false, &mut dw2p, false);
            let mut dw2 = vec![0.0; w2.len()];
            for k in 0..d {
                for a in 0..g {
                    for c in 0..g {
                        dw2[k * g * g + a * g + c] = dw2p[c * dg + k * g + a];
                    }
                }
            }
            out[2] = Some(Tensor::from_parts(w2.shape().to_vec(), dw2));
        }
        if needs_grad[3] {
            let mut dbp = vec![0.0; g * g];
            gemm(h, true, &dbh, false, &mut dbp, false);
            let mut db2 = vec![0.0; g * g];
            for a in 0..g {
                for c in 0..g {
                    db2[a * g + c] = dbp[c * g + a];
                }
            }
            out[3] = Some(Tensor::from_parts(inputs[3].shape().to_vec(), db2));
        }
        out
    }
}
