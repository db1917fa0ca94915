//! Self guidance algebra.
//!
//! A two-term combination `a * I_good + b * I_bad` equals
//! `(a + b) * (lambda * I_good + (1 - lambda) * I_bad)` with `lambda = a / (a + b)`.
//! Longer rows fold into nested pairs.

use std::fmt;

use serde::Serialize;

use crate::affine::{lin_combine, Element};
use crate::coeffmatrix::CoefficientMatrix;
use crate::error::{Error, Result};

/// Tolerance used to call `lambda` exactly 0 or 1.
const EDGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StageClass {
    /// `lambda > 1`: extrapolates past the newer output.
    Fore,
    /// `0 < lambda < 1`: interpolates.
    Mid,
    /// `lambda < 0`: extrapolates past the older output.
    Back,
    /// `lambda` is 0 or 1: one side is copied.
    Degenerate,
}

impl fmt::Display for StageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageClass::Fore => "fore",
            StageClass::Mid => "mid",
            StageClass::Back => "back",
            StageClass::Degenerate => "degenerate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuidanceStage {
    pub eta_good: f64,
    pub eta_bad: f64,
    pub lambda: f64,
    pub class: StageClass,
}

fn classify_lambda(lambda: f64) -> StageClass {
    if lambda.abs() <= EDGE_TOL || (lambda - 1.0).abs() <= EDGE_TOL {
        StageClass::Degenerate
    } else if lambda > 1.0 {
        StageClass::Fore
    } else if lambda > 0.0 {
        StageClass::Mid
    } else {
        StageClass::Back
    }
}

/// `bad + lambda * (good - bad)`.
pub fn cfg_combine(bad: &Element, good: &Element, lambda: f64) -> Result<Element> {
    lin_combine(&[(1.0 - lambda, bad), (lambda, good)])
}

/// Splits `a * good + b * bad` into a scale and a stage.
pub fn classify_pair(a: f64, b: f64) -> Result<(f64, GuidanceStage)> {
    let scale = a + b;
    if scale == 0.0 {
        return Err(Error::DegeneratePair);
    }
    let lambda = a / scale;
    Ok((
        scale,
        GuidanceStage {
            eta_good: lambda,
            eta_bad: b / scale,
            lambda,
            class: classify_lambda(lambda),
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldOrder {
    /// Pair the two oldest terms, then fold newer terms in one by one.
    #[default]
    OldestFirst,
    /// Pair the two newest terms, then fold older terms in.
    NewestFirst,
}

/// Which side of each folded pair plays `I_good`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// The side with the larger weight (the newer one on ties).
    #[default]
    Dominant,
    /// The newer side, whatever its weight.
    NewerGood,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposedStage {
    pub stage: GuidanceStage,
    /// Total weight of the composite after this stage.
    pub scale: f64,
    /// Position (in the original row) of the term folded in at this stage.
    pub index: usize,
    /// Whether the folded-in term is the `I_good` side.
    pub incoming_is_good: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceDecomposition {
    pub stages: Vec<DecomposedStage>,
    pub coefficients: Vec<f64>,
    pub order: FoldOrder,
    pub orientation: Orientation,
    /// Position of the term that seeds the fold.
    pub seed_index: usize,
}

impl GuidanceDecomposition {
    /// Rebuilds the coefficient list from the stages alone.
    pub fn unfold(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.coefficients.len()];
        let Some(last) = self.stages.last() else {
            return out;
        };
        // walk from the outermost stage inwards, distributing the scale
        let mut weight = last.scale;
        for st in self.stages.iter().rev() {
            let (incoming, composite) = if st.incoming_is_good {
                (st.stage.eta_good, st.stage.eta_bad)
            } else {
                (st.stage.eta_bad, st.stage.eta_good)
            };
            out[st.index] = weight * incoming;
            weight *= composite;
        }
        out[self.seed_index] = weight;
        out
    }

    pub fn classes(&self) -> Vec<StageClass> {
        self.stages.iter().map(|s| s.stage.class).collect()
    }
}

/// Oldest-first fold of a row of weights ordered oldest to newest.
pub fn decompose_row(coeffs: &[f64]) -> Result<GuidanceDecomposition> {
    decompose_row_with(coeffs, FoldOrder::OldestFirst, Orientation::Dominant)
}

pub fn decompose_row_with(
    coeffs: &[f64],
    order: FoldOrder,
    orientation: Orientation,
) -> Result<GuidanceDecomposition> {
    let mut idx: Vec<usize> = (0..coeffs.len()).filter(|&i| coeffs[i] != 0.0).collect();
    if idx.len() < 2 {
        return Err(Error::Parameter(format!(
            "need at least two nonzero terms, found {}",
            idx.len()
        )));
    }
    if order == FoldOrder::NewestFirst {
        idx.reverse();
    }
    let mut acc = coeffs[idx[0]];
    let mut stages = vec![];
    for &i in &idx[1..] {
        let c = coeffs[i];
        let incoming_newer = order == FoldOrder::OldestFirst;
        let incoming_is_good = match orientation {
            Orientation::NewerGood => incoming_newer,
            Orientation::Dominant => c > acc || (c == acc && incoming_newer),
        };
        let (a, b) = if incoming_is_good { (c, acc) } else { (acc, c) };
        let (scale, stage) = classify_pair(a, b).map_err(|_| Error::FoldSingularity(i))?;
        stages.push(DecomposedStage {
            stage,
            scale,
            index: i,
            incoming_is_good,
        });
        acc = scale;
    }
    Ok(GuidanceDecomposition {
        stages,
        coefficients: coeffs.to_vec(),
        order,
        orientation,
        seed_index: idx[0],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowSummary {
    AllMid,
    HasFore,
    HasBack,
    Mixed,
    /// Fewer than two nonzero weights: nothing to combine.
    NoGuidance,
    /// A partial sum of the fold vanished.
    Unfoldable,
}

impl fmt::Display for RowSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RowSummary::AllMid => "all-mid",
            RowSummary::HasFore => "has-fore",
            RowSummary::HasBack => "has-back",
            RowSummary::Mixed => "mixed",
            RowSummary::NoGuidance => "no-guidance",
            RowSummary::Unfoldable => "unfoldable",
        })
    }
}

pub fn summarize(d: &GuidanceDecomposition) -> RowSummary {
    let c = d.classes();
    let fore = c.contains(&StageClass::Fore);
    let back = c.contains(&StageClass::Back);
    match (fore, back) {
        (true, true) => RowSummary::Mixed,
        (true, false) => RowSummary::HasFore,
        (false, true) => RowSummary::HasBack,
        (false, false) => RowSummary::AllMid,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowClassification {
    pub row: usize,
    pub time: f64,
    pub nonzero_terms: usize,
    pub summary: RowSummary,
    pub stages: Vec<StageClass>,
    /// Fold actually used; `None` when nothing was folded.
    pub fold: Option<FoldOrder>,
}

/// Classifies every signal row. Rows whose oldest-first fold hits a zero
/// prefix sum are refolded newest-first; only if that fails too is the row
/// reported as unfoldable.
pub fn classify_matrix(m: &CoefficientMatrix) -> Vec<RowClassification> {
    m.signal
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let nz = row.iter().filter(|v| **v != 0.0).count();
            let (summary, stages, fold) = if nz < 2 {
                (RowSummary::NoGuidance, vec![], None)
            } else {
                let d = decompose_row(row).or_else(|_| {
                    decompose_row_with(row, FoldOrder::NewestFirst, Orientation::Dominant)
                });
                match d {
                    Ok(d) => (summarize(&d), d.classes(), Some(d.order)),
                    Err(_) => (RowSummary::Unfoldable, vec![], None),
                }
            };
            RowClassification {
                row: k,
                time: m.row_times[k],
                nonzero_terms: nz,
                summary,
                stages,
                fold,
            }
        })
        .collect()
}

pub fn classification_csv(rows: &[RowClassification]) -> String {
    let mut s = String::from("row,time,nonzero_terms,summary,fold,stages\n");
    for r in rows {
        let st: Vec<String> = r.stages.iter().map(|c| c.to_string()).collect();
        let fold = match r.fold {
            Some(FoldOrder::OldestFirst) => "oldest-first",
            Some(FoldOrder::NewestFirst) => "newest-first",
            None => "",
        };
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.row,
            r.time,
            r.nonzero_terms,
            r.summary,
            fold,
            st.join(" ")
        ));
    }
    s
}
