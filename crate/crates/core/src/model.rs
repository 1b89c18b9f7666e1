use nalgebra::DVector;

use crate::error::Result;
use crate::frame::AdaptedFrame;
use crate::gramian::FactoredGramian;
use crate::system::{build_filtration, classify_point, Filtration, LinearSystem, Regime};

/// A validated system bundled with its flag and adapted frame.
#[derive(Debug, Clone)]
pub struct Model {
    sys: LinearSystem,
    filtration: Filtration,
    frame: AdaptedFrame,
}

impl Model {
    pub fn new(sys: LinearSystem) -> Self {
        let filtration = build_filtration(&sys);
        let frame = AdaptedFrame::new(&sys, &filtration);
        Self {
            sys,
            filtration,
            frame,
        }
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn filtration(&self) -> &Filtration {
        &self.filtration
    }

    pub fn frame(&self) -> &AdaptedFrame {
        &self.frame
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    pub fn exponent(&self) -> usize {
        self.filtration.exponent
    }

    pub fn factor(&self, t: f64) -> Result<FactoredGramian> {
        FactoredGramian::new(&self.sys, &self.frame, t)
    }

    pub fn classify(&self, x0: &DVector<f64>) -> Result<Regime> {
        classify_point(&self.sys, &self.filtration, x0)
    }
}
