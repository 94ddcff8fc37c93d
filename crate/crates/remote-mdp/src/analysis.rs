//! Markov-chain diagnostics: unichain structure, stationary distributions,
//! and the a-priori bounds on the optimal average cost.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::augmentation::AugmentedMdp;
use crate::model::{MarkovControlModel, StagePolicy};

/// Entries below this threshold are treated as structural zeros when
/// building the transition graph, so floating-point dust in matrix
/// products cannot create spurious edges.
pub const EDGE_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("chain is not unichain: {closed_classes} closed classes")]
    NotUnichain { closed_classes: usize },
}

/// Recurrent/transient decomposition of a finite chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainReport {
    pub is_unichain: bool,
    /// States of the unique closed class when unichain; union of all closed
    /// classes otherwise. Sorted ascending.
    pub recurrent_class: Vec<usize>,
    /// Complement of `recurrent_class`, sorted ascending.
    pub transient_states: Vec<usize>,
    pub closed_class_count: usize,
}

/// Classifies a row-stochastic matrix as unichain or not by condensing
/// its strictly-positive transition graph: the chain is unichain iff the
/// condensation has exactly one closed component.
pub fn unichain_check(p: &DMatrix<f64>) -> ChainReport {
    let n = p.nrows();
    assert_eq!(n, p.ncols(), "transition matrix must be square");
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] > EDGE_EPS {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let sccs = tarjan_scc(&graph);
    let mut comp_of = vec![usize::MAX; n];
    for (cid, comp) in sccs.iter().enumerate() {
        for &v in comp {
            comp_of[v.index()] = cid;
        }
    }
    // A component is closed when no edge leaves it.
    let mut closed = vec![true; sccs.len()];
    for edge in graph.raw_edges() {
        let (ci, cj) = (
            comp_of[edge.source().index()],
            comp_of[edge.target().index()],
        );
        if ci != cj {
            closed[ci] = false;
        }
    }
    let closed_class_count = closed.iter().filter(|&&c| c).count();
    let mut recurrent: Vec<usize> = (0..n).filter(|&v| closed[comp_of[v]]).collect();
    recurrent.sort_unstable();
    let transient: Vec<usize> = (0..n).filter(|&v| !closed[comp_of[v]]).collect();
    ChainReport {
        is_unichain: closed_class_count == 1,
        recurrent_class: recurrent,
        transient_states: transient,
        closed_class_count,
    }
}

/// Unique stationary distribution of a unichain transition matrix, found by
/// solving pi*P = pi with the normalization constraint replacing one
/// redundant balance equation.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<Vec<f64>, AnalysisError> {
    let report = unichain_check(p);
    if !report.is_unichain {
        return Err(AnalysisError::NotUnichain {
            closed_classes: report.closed_class_count,
        });
    }
    let n = p.nrows();
    // (P^T - I) x = 0 with the last row swapped for sum(x) = 1.
    let mut a = p.transpose();
    for i in 0..n {
        a[(i, i)] -= 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .expect("stationary system is nonsingular for a unichain matrix");
    let mut pi: Vec<f64> = pi.iter().copied().collect();
    for v in pi.iter_mut() {
        // Transient states can pick up negative dust from elimination.
        if *v < 0.0 {
            debug_assert!(*v > -1e-10, "stationary solve produced {v}");
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
    }
    Ok(pi)
}

/// Lower and upper bounds on the optimal long-run average cost:
/// min_{s,a} C(s,a) and min_a sum_s pi_a(s) C(s,a).
pub fn h_star_bounds(model: &MarkovControlModel) -> Result<(f64, f64), AnalysisError> {
    let lower = model.min_cost();
    let mut upper = f64::INFINITY;
    for a in 0..model.action_count() {
        let pi = stationary_distribution(model.kernel(a))?;
        let avg: f64 = pi
            .iter()
            .enumerate()
            .map(|(s, &w)| w * model.cost(s, a))
            .sum();
        upper = upper.min(avg);
    }
    assert!(
        lower <= upper + 1e-12,
        "bound consistency violated: lower {lower} > upper {upper}"
    );
    Ok((lower, upper))
}

/// Induced transition matrix of the augmented chain under a fixed policy.
pub fn induced_chain_matrix(mdp: &AugmentedMdp, policy: &StagePolicy) -> DMatrix<f64> {
    let n = mdp.space().len();
    let mut m = DMatrix::zeros(n, n);
    for g in 0..n {
        let d = mdp
            .decision_index(policy.decision(g))
            .expect("policy decision outside the decision set");
        let row = mdp.kernel_row(g, d);
        for (gp, &v) in row.iter().enumerate() {
            m[(g, gp)] = v;
        }
    }
    m
}

/// Unichain check of the augmented chain induced by a policy.
pub fn induced_chain_check(mdp: &AugmentedMdp, policy: &StagePolicy) -> ChainReport {
    unichain_check(&induced_chain_matrix(mdp, policy))
}
