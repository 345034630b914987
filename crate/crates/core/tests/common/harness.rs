//! Small run configurations and an instrumented environment wrapper.

use std::sync::Arc;

use sonicnav::audio::SoundFeature;
use sonicnav::envs::{EnvError, Environment, Observation, StepResult, TrajectoryRow, Visibility};
use sonicnav::harness::{Profile, RunConfig};
use sonicnav::model::EnvKind;

/// A run small enough for a unit-test budget.
pub fn small(env: EnvKind) -> RunConfig {
    let mut c = RunConfig::new(env, Profile::Desk);
    for (k, v) in [
        ("seed", "5"),
        ("train_per_class", "3"),
        ("test_per_class", "2"),
        ("synth_duration_s", "0.25"),
        ("net.d_s", "4"),
        ("net.attention_heads", "2"),
        ("net.attention_hidden", "3"),
        ("net.cnn", "4:2,4:2"),
        ("net.image_size", "16"),
        ("net.state_embed", "4"),
        ("net.fuse_width", "8"),
        ("net.integrator_units", "8"),
        ("ppo.n_envs", "2"),
        ("ppo.minibatches", "2"),
        ("pretrain", "false"),
        ("checkpoint_every", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    c.validate().unwrap();
    c
}

/// Delegating environment that records which sound each episode received.
pub struct Recording {
    pub inner: Box<dyn Environment>,
    pub seen: Vec<(usize, *const SoundFeature)>,
}

unsafe impl Send for Recording {}

impl Environment for Recording {
    fn kind(&self) -> EnvKind {
        self.inner.kind()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn reset(&mut self, seed: u64, command: Option<usize>) -> Result<Observation, EnvError> {
        let o = self.inner.reset(seed, command)?;
        self.seen.push((o.sound_label, Arc::as_ptr(&o.sound)));
        Ok(o)
    }
    fn step(&mut self, a: [f64; 2]) -> Result<StepResult, EnvError> {
        self.inner.step(a)
    }
    fn target(&self) -> usize {
        self.inner.target()
    }
    fn t(&self) -> usize {
        self.inner.t()
    }
    fn success(&self) -> bool {
        self.inner.success()
    }
    fn visibility(&self) -> Visibility {
        self.inner.visibility()
    }
    fn oracle_action(&self) -> [f64; 2] {
        self.inner.oracle_action()
    }
    fn trace(&self) -> TrajectoryRow {
        self.inner.trace()
    }
}
