//! Fixtures shared by the criterion benches.

use sample_core::model::init_hexagon;
use sample_core::{Integrator, Method, NoiseStream, PhaseState, PotentialModel};

/// A model, a thermalised-looking start state and an integrator for it.
pub struct Fixture {
    pub model: PotentialModel,
    pub state: PhaseState,
    pub integrator: Integrator,
    pub stream: NoiseStream,
}

pub fn fixture(model: PotentialModel, method: Method, stepsize: f64, gamma: f64, kbt: f64) -> Fixture {
    let mut stream = NoiseStream::new(1, 0);
    let x = if model.is_cluster() { init_hexagon() } else { vec![0.0] };
    let state = PhaseState::canonical(x, kbt, &mut stream);
    let integrator = Integrator::new(method, stepsize, gamma, kbt, state.dimension()).expect("valid bench parameters");
    Fixture {
        model,
        state,
        integrator,
        stream,
    }
}

impl Fixture {
    pub fn advance(&mut self, steps: u64) {
        for _ in 0..steps {
            self.integrator
                .step(&mut self.state, &self.model, &mut self.stream)
                .expect("bench trajectory stays stable");
        }
    }
}
