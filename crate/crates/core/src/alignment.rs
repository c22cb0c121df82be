//! Layer-alignment topology between student, teacher, and backbone.
//!
//! A student with S control layers shadows a teacher with T layers by pairing
//! student layer `j` with the two consecutive teacher layers `2j-1` and `2j`
//! (many-to-one alignment). Each student layer then injects into every
//! backbone layer its paired teacher layers injected into (one-to-many
//! injection). When the teacher has an odd layer count `T = 2S - 1`, the last
//! student layer pairs with the single final teacher layer; the feature-loss
//! coefficient for that pair drops from 2 to 1 so a perfectly matching
//! student still reaches zero loss.
//!
//! All indices in a plan are 1-based; conversion to storage offsets happens
//! at the call boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPlan {
    #[serde(rename = "S")]
    pub student_layers: usize,
    #[serde(rename = "T")]
    pub teacher_layers: usize,
    /// Entry `j` (0-based storage) holds the 1-based teacher layers assigned
    /// to student layer `j+1`, in increasing order.
    pub pairs: Vec<Vec<usize>>,
    /// Entry `j` holds the sorted set of 1-based backbone layers student
    /// layer `j+1` injects into. Empty until [`build_injection_plan`] runs.
    pub injection: Vec<Vec<usize>>,
}

impl AlignmentPlan {
    /// Coefficient applied to the student feature in the aligned-feature
    /// residual: 2 for a two-teacher pair, 1 for the odd-T singleton.
    pub fn pair_coefficient(&self, student_layer_1based: usize) -> f64 {
        self.pairs[student_layer_1based - 1].len() as f64
    }

    /// Checks the structural invariants: every teacher layer covered exactly
    /// once, pairs ordered and disjoint, injection (when present) consistent.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.len() != self.student_layers {
            return Err(Error::PlanMismatch(format!(
                "expected {} pair entries, found {}",
                self.student_layers,
                self.pairs.len()
            )));
        }
        let flat: Vec<usize> = self.pairs.iter().flatten().copied().collect();
        let expect: Vec<usize> = (1..=self.teacher_layers).collect();
        if flat != expect {
            return Err(Error::PlanMismatch(format!(
                "pairs flatten to {flat:?}, expected 1..={}",
                self.teacher_layers
            )));
        }
        for win in self.pairs.windows(2) {
            let hi = *win[0].last().expect("pairs entries are non-empty");
            let lo = *win[1].first().expect("pairs entries are non-empty");
            if hi >= lo {
                return Err(Error::PlanMismatch(format!(
                    "pairs entries not ordered: max {hi} >= min {lo}"
                )));
            }
        }
        if !self.injection.is_empty() && self.injection.len() != self.student_layers {
            return Err(Error::PlanMismatch(format!(
                "expected {} injection entries, found {}",
                self.student_layers,
                self.injection.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: AlignmentPlan = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Builds the many-to-one pairing for `student_layers` = S and
/// `teacher_layers` = T. Accepts T = 2S (exact pairing) and T = 2S - 1
/// (odd-T rule); everything else is a shape mismatch.
pub fn build_alignment_plan(student_layers: usize, teacher_layers: usize) -> Result<AlignmentPlan> {
    if student_layers < 1 || teacher_layers < 1 {
        return Err(Error::DomainError(
            "layer counts must be positive".to_string(),
        ));
    }
    if teacher_layers != 2 * student_layers && teacher_layers != 2 * student_layers - 1 {
        return Err(Error::ShapeMismatch(format!(
            "teacher layer count {teacher_layers} must be 2S or 2S-1 for S={student_layers}"
        )));
    }
    let mut pairs = Vec::with_capacity(student_layers);
    for j in 1..=student_layers {
        let lo = 2 * j - 1;
        let hi = 2 * j;
        if hi <= teacher_layers {
            pairs.push(vec![lo, hi]);
        } else {
            pairs.push(vec![lo]); // odd-T rule: final singleton pair
        }
    }
    Ok(AlignmentPlan {
        student_layers,
        teacher_layers,
        pairs,
        injection: Vec::new(),
    })
}

/// Fills the one-to-many injection map: student layer `j` injects into the
/// union of the backbone targets of its paired teacher layers.
/// `teacher_injection[i]` is the 1-based backbone target of teacher layer
/// `i+1`; `backbone_layers` bounds the valid target range.
pub fn build_injection_plan(
    plan: &AlignmentPlan,
    teacher_injection: &[usize],
    backbone_layers: usize,
) -> Result<AlignmentPlan> {
    if teacher_injection.len() != plan.teacher_layers {
        return Err(Error::PlanMismatch(format!(
            "teacher_injection has {} entries, plan expects {}",
            teacher_injection.len(),
            plan.teacher_layers
        )));
    }
    for (i, &target) in teacher_injection.iter().enumerate() {
        if target < 1 || target > backbone_layers {
            return Err(Error::InvalidTarget {
                teacher_layer: i + 1,
                target,
                backbone_layers,
            });
        }
    }
    let mut out = plan.clone();
    out.injection = plan
        .pairs
        .iter()
        .map(|pair| {
            let mut targets: Vec<usize> =
                pair.iter().map(|&i| teacher_injection[i - 1]).collect();
            targets.sort_unstable();
            targets.dedup();
            targets
        })
        .collect();
    out.validate()?;
    Ok(out)
}

/// Default toy wiring: teacher layer i feeds backbone layer i.
pub fn identity_injection(teacher_layers: usize) -> Vec<usize> {
    (1..=teacher_layers).collect()
}
