use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// A single scalar parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamCoord {
    /// Component `dim` of the state parameter `ζ_state`.
    State { state: usize, dim: usize },
    /// Component `dim` of the action parameter `η_action`.
    Action { action: usize, dim: usize },
}

/// Flat coordinate order of a parameter vector.
///
/// The flat view lists the prescribed state blocks `ζ₁` (in state order), then
/// the prescribed action blocks `η₁`, then the manipulable state blocks `ζ₂`,
/// then the manipulable action blocks `η₂`. Each block has `d_zeta` (states)
/// or `d_eta` (actions) coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    d_zeta: usize,
    d_eta: usize,
    state_manipulable: Vec<bool>,
    action_manipulable: Vec<bool>,
    state_offset: Vec<usize>,
    action_offset: Vec<usize>,
    coords: Vec<ParamCoord>,
    n_prescribed: usize,
}

impl ParamLayout {
    pub fn new(
        d_zeta: usize,
        d_eta: usize,
        state_manipulable: Vec<bool>,
        action_manipulable: Vec<bool>,
    ) -> Self {
        let n = state_manipulable.len();
        let m = action_manipulable.len();
        let mut state_offset = vec![0; n];
        let mut action_offset = vec![0; m];
        let mut coords = Vec::with_capacity(n * d_zeta + m * d_eta);
        let mut n_prescribed = 0;
        for manipulable in [false, true] {
            for s in (0..n).filter(|&s| state_manipulable[s] == manipulable) {
                state_offset[s] = coords.len();
                coords.extend((0..d_zeta).map(|dim| ParamCoord::State { state: s, dim }));
            }
            for a in (0..m).filter(|&a| action_manipulable[a] == manipulable) {
                action_offset[a] = coords.len();
                coords.extend((0..d_eta).map(|dim| ParamCoord::Action { action: a, dim }));
            }
            if !manipulable {
                n_prescribed = coords.len();
            }
        }
        ParamLayout {
            d_zeta,
            d_eta,
            state_manipulable,
            action_manipulable,
            state_offset,
            action_offset,
            coords,
            n_prescribed,
        }
    }

    pub fn d_zeta(&self) -> usize {
        self.d_zeta
    }

    pub fn d_eta(&self) -> usize {
        self.d_eta
    }

    pub fn n_states(&self) -> usize {
        self.state_manipulable.len()
    }

    pub fn n_actions(&self) -> usize {
        self.action_manipulable.len()
    }

    /// Total number of scalar coordinates.
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Length of the prescribed block `[ζ₁ η₁]`.
    pub fn n_prescribed(&self) -> usize {
        self.n_prescribed
    }

    /// Length of the manipulable block `[ζ₂ η₂]`.
    pub fn n_manipulable(&self) -> usize {
        self.coords.len() - self.n_prescribed
    }

    pub fn is_state_manipulable(&self, state: usize) -> bool {
        self.state_manipulable[state]
    }

    pub fn is_action_manipulable(&self, action: usize) -> bool {
        self.action_manipulable[action]
    }

    pub fn coord(&self, flat: usize) -> ParamCoord {
        self.coords[flat]
    }

    pub fn coords(&self) -> &[ParamCoord] {
        &self.coords
    }

    pub fn flat_index(&self, coord: ParamCoord) -> usize {
        match coord {
            ParamCoord::State { state, dim } => {
                debug_assert!(dim < self.d_zeta);
                self.state_offset[state] + dim
            }
            ParamCoord::Action { action, dim } => {
                debug_assert!(dim < self.d_eta);
                self.action_offset[action] + dim
            }
        }
    }

    /// Flat range of the block belonging to `state`.
    pub fn state_range(&self, state: usize) -> std::ops::Range<usize> {
        let o = self.state_offset[state];
        o..o + self.d_zeta
    }

    pub fn action_range(&self, action: usize) -> std::ops::Range<usize> {
        let o = self.action_offset[action];
        o..o + self.d_eta
    }
}

/// Parameter vector `Υ = [ζ₁ η₁ ζ₂ η₂]`.
///
/// Stored block-wise by state and action index; [`flatten`](Self::flatten)
/// produces the layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    layout: Arc<ParamLayout>,
    zeta: Vec<f64>,
    eta: Vec<f64>,
}

impl ParameterVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let zeta = vec![0.0; layout.n_states() * layout.d_zeta()];
        let eta = vec![0.0; layout.n_actions() * layout.d_eta()];
        ParameterVector { layout, zeta, eta }
    }

    /// Builds a vector from per-state and per-action blocks.
    pub fn from_blocks(
        layout: Arc<ParamLayout>,
        zeta: &[Vec<f64>],
        eta: &[Vec<f64>],
    ) -> Result<Self, ModelError> {
        let (n, m) = (layout.n_states(), layout.n_actions());
        if zeta.len() != n || eta.len() != m {
            return Err(ModelError::Shape(format!(
                "expected {n} state blocks and {m} action blocks, got {} and {}",
                zeta.len(),
                eta.len()
            )));
        }
        if let Some(s) = zeta.iter().position(|b| b.len() != layout.d_zeta()) {
            return Err(ModelError::Shape(format!(
                "state block {s} must have dimension {}",
                layout.d_zeta()
            )));
        }
        if let Some(a) = eta.iter().position(|b| b.len() != layout.d_eta()) {
            return Err(ModelError::Shape(format!(
                "action block {a} must have dimension {}",
                layout.d_eta()
            )));
        }
        Ok(ParameterVector {
            zeta: zeta.concat(),
            eta: eta.concat(),
            layout,
        })
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn zeta(&self, state: usize) -> &[f64] {
        let d = self.layout.d_zeta();
        &self.zeta[state * d..(state + 1) * d]
    }

    pub fn zeta_mut(&mut self, state: usize) -> &mut [f64] {
        let d = self.layout.d_zeta();
        &mut self.zeta[state * d..(state + 1) * d]
    }

    pub fn eta(&self, action: usize) -> &[f64] {
        let d = self.layout.d_eta();
        &self.eta[action * d..(action + 1) * d]
    }

    pub fn eta_mut(&mut self, action: usize) -> &mut [f64] {
        let d = self.layout.d_eta();
        &mut self.eta[action * d..(action + 1) * d]
    }

    pub fn get(&self, coord: ParamCoord) -> f64 {
        match coord {
            ParamCoord::State { state, dim } => self.zeta[state * self.layout.d_zeta() + dim],
            ParamCoord::Action { action, dim } => self.eta[action * self.layout.d_eta() + dim],
        }
    }

    pub fn get_mut(&mut self, coord: ParamCoord) -> &mut f64 {
        match coord {
            ParamCoord::State { state, dim } => &mut self.zeta[state * self.layout.d_zeta() + dim],
            ParamCoord::Action { action, dim } => &mut self.eta[action * self.layout.d_eta() + dim],
        }
    }

    /// Flat view in layout order.
    pub fn flatten(&self) -> Vec<f64> {
        self.layout.coords().iter().map(|&c| self.get(c)).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(layout: Arc<ParamLayout>, flat: &[f64]) -> Result<Self, ModelError> {
        if flat.len() != layout.len() {
            return Err(ModelError::LengthMismatch {
                expected: layout.len(),
                got: flat.len(),
            });
        }
        let mut out = ParameterVector::zeros(layout);
        for (i, &v) in flat.iter().enumerate() {
            let c = out.layout.coord(i);
            *out.get_mut(c) = v;
        }
        Ok(out)
    }

    /// The prescribed block `[ζ₁ η₁]` in layout order.
    pub fn prescribed(&self) -> Vec<f64> {
        self.layout.coords()[..self.layout.n_prescribed()]
            .iter()
            .map(|&c| self.get(c))
            .collect()
    }

    /// The manipulable block `[ζ₂ η₂]` in layout order.
    pub fn manipulable(&self) -> Vec<f64> {
        self.layout.coords()[self.layout.n_prescribed()..]
            .iter()
            .map(|&c| self.get(c))
            .collect()
    }

    /// `Υ₁ ← Υ₁ + scale · v`.
    pub fn add_prescribed(&mut self, scale: f64, v: &[f64]) {
        assert_eq!(v.len(), self.layout.n_prescribed());
        let layout = self.layout.clone();
        for (c, x) in layout.coords()[..layout.n_prescribed()].iter().zip(v) {
            *self.get_mut(*c) += scale * x;
        }
    }

    /// `Υ₂ ← Υ₂ + scale · v`.
    pub fn add_manipulable(&mut self, scale: f64, v: &[f64]) {
        assert_eq!(v.len(), self.layout.n_manipulable());
        let layout = self.layout.clone();
        for (c, x) in layout.coords()[layout.n_prescribed()..].iter().zip(v) {
            *self.get_mut(*c) += scale * x;
        }
    }

    /// `Υ ← Υ + scale · v` over the full flat layout.
    pub fn add_flat(&mut self, scale: f64, v: &[f64]) {
        assert_eq!(v.len(), self.layout.len());
        let layout = self.layout.clone();
        for (c, x) in layout.coords().iter().zip(v) {
            *self.get_mut(*c) += scale * x;
        }
    }

    /// Copy with a single coordinate shifted by `h`.
    pub fn shifted(&self, coord: ParamCoord, h: f64) -> Self {
        let mut out = self.clone();
        *out.get_mut(coord) += h;
        out
    }

    /// Diameter of the bounding box of all state parameters.
    pub fn state_extent(&self) -> f64 {
        let d = self.layout.d_zeta();
        if d == 0 || self.layout.n_states() == 0 {
            return 0.0;
        }
        let mut sq = 0.0;
        for k in 0..d {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for s in 0..self.layout.n_states() {
                let v = self.zeta(s)[k];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            sq += (hi - lo).powi(2);
        }
        sq.sqrt()
    }
}
