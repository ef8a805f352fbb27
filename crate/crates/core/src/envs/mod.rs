//! Benchmark problems and random instance generators.

pub mod baird;
pub mod four_room;
pub mod random;
pub mod two_state;

pub use baird::{make_baird, make_baird_with_gamma, BairdProblem};
pub use four_room::{
    build_four_room_features, four_room_setup, make_four_room, make_four_room_with, FourRoomMode, FourRoomProblem,
    FourRoomSetup, FOUR_ROOM_GAMMA, HUMAN_POLICY, LAYOUT,
};
pub use random::{make_random_instance, RandomInstance};
pub use two_state::{make_two_state, pathological_lambda, TwoStateProblem};
