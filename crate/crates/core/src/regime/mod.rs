//! Three-state regime-switching kernel: state-dependent Poisson means,
//! multinomial-logit transitions with a spatial effect, and the ICAR prior.
//!
//! State 0 follows the baseline, state 1 is the environmental shock state and
//! state 2 the respiratory shock state. Direct moves between 1 and 2 are
//! impossible.

mod design;
mod icar;
mod kernel;
mod loglik;
mod params;
mod spec;

pub use design::{fit_standardizer, CovariateBlock, RegimeData};
pub use icar::{center, spatial_precision, Icar};
pub use kernel::{
    clamped, log_emissions, logits, row_sensitivity, state_mean, transition_from_logits, transition_matrix, LOGIT_CLAMP,
};
pub use loglik::{complete_loglik, path_curvature};
pub use params::{ParamLayout, RegimeParams};
pub use spec::{default_age_sharing, RegimeSpec};

use serde::{Deserialize, Serialize};

pub const N_STATES: usize = 3;

/// A free transition of the chain; each owns one coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    T01,
    T02,
    T11,
    T22,
}

pub const TRANSITIONS: [Transition; 4] = [Transition::T01, Transition::T02, Transition::T11, Transition::T22];

impl Transition {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from(self) -> usize {
        match self {
            Transition::T01 | Transition::T02 => 0,
            Transition::T11 => 1,
            Transition::T22 => 2,
        }
    }

    pub fn to(self) -> usize {
        match self {
            Transition::T01 | Transition::T11 => 1,
            Transition::T02 | Transition::T22 => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Transition::T01 => "trans01",
            Transition::T02 => "trans02",
            Transition::T11 => "trans11",
            Transition::T22 => "trans22",
        }
    }

    /// Transitions leaving state `i`.
    pub fn leaving(i: usize) -> &'static [Transition] {
        match i {
            0 => &[Transition::T01, Transition::T02],
            1 => &[Transition::T11],
            2 => &[Transition::T22],
            _ => &[],
        }
    }
}

/// `true` for the two moves the chain can never make.
pub fn is_forbidden(i: usize, j: usize) -> bool {
    (i == 1 && j == 2) || (i == 2 && j == 1)
}
