//! A 3-stage, 4-4-4-machine, 20-job instance together with a recorded
//! sequence of environment actions whose schedule has makespan 25.

use alloc::vec::Vec;

use super::FfspInstance;

pub const FIXTURE_MAKESPAN: u32 = 25;

const PROC: [[[u32; 20]; 4]; 3] = [
    [
        [2, 4, 2, 3, 2, 6, 8, 8, 6, 5, 2, 8, 4, 6, 8, 2, 8, 9, 6, 5],
        [8, 7, 3, 9, 7, 2, 4, 6, 2, 7, 4, 6, 6, 4, 7, 2, 5, 5, 9, 4],
        [6, 9, 5, 8, 3, 7, 7, 2, 2, 6, 9, 4, 5, 7, 3, 2, 3, 3, 8, 2],
        [9, 4, 8, 6, 7, 9, 5, 9, 6, 8, 2, 5, 8, 2, 4, 3, 6, 7, 2, 7],
    ],
    [
        [7, 9, 4, 2, 2, 7, 6, 4, 5, 8, 8, 8, 8, 6, 2, 8, 5, 5, 3, 8],
        [8, 6, 9, 3, 5, 8, 4, 2, 3, 4, 7, 4, 2, 4, 2, 8, 9, 6, 5, 7],
        [4, 3, 5, 9, 3, 3, 2, 6, 6, 4, 5, 7, 4, 2, 6, 7, 8, 3, 2, 2],
        [8, 6, 2, 2, 6, 5, 2, 6, 8, 9, 3, 4, 5, 4, 7, 4, 7, 7, 4, 4],
    ],
    [
        [2, 5, 2, 8, 7, 6, 8, 5, 3, 8, 8, 6, 4, 5, 2, 5, 7, 4, 4, 5],
        [5, 8, 4, 4, 5, 2, 8, 8, 5, 4, 6, 4, 2, 7, 7, 2, 5, 2, 3, 6],
        [2, 8, 9, 3, 7, 8, 4, 7, 6, 6, 8, 3, 9, 7, 3, 9, 8, 6, 6, 2],
        [3, 2, 3, 3, 4, 5, 9, 3, 9, 4, 9, 5, 7, 3, 7, 8, 5, 5, 7, 9],
    ],
];

/// Actions for the identity machine order; 20 means "skip".
pub const FIXTURE_ACTIONS: [usize; 76] = [
    0, 5, 7, 10, 2, 8, 15, 13, 0, 7, 5, 10, 4, 6, 19, 11, 8, 20, 20, 20, 7, 13, 2, 10, 5, 3, 9, 4, 19, 15, 8, 13, 2, 16, 12, 18, 3, 6, 0, 1, 20,
    18, 11, 17, 20, 9, 15, 20, 20, 16, 12, 4, 3, 20, 20, 18, 6, 20, 20, 14, 1, 17, 20, 9, 20, 14, 19, 16, 14, 11, 12, 20, 20, 17, 20, 1,
];

pub fn fixture_instance() -> FfspInstance {
    let proc: Vec<Vec<u32>> = PROC.iter().map(|stage| stage.iter().flatten().copied().collect()).collect();
    FfspInstance::uniform(3, 4, 20, proc).expect("fixture is well formed")
}
