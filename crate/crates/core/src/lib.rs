pub mod grid_sim;
pub mod maddpg;
pub mod reward_lang;
pub mod architect;
pub mod curriculum;
pub mod analytics;
pub mod harness;
