use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Content,
    Ad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Ctr,
    Cvr,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Content => "content",
            Domain::Ad => "ad",
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Ctr => "ctr",
            Task::Cvr => "cvr",
        })
    }
}

/// One exposure of `item_id` to `user_id` and its binary outcome.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub index: u64,
    pub user_id: usize,
    pub item_id: usize,
    pub domain: Domain,
    pub task: Task,
    /// Simulated seconds; strictly increasing along a stream.
    pub timestamp: f64,
    pub label: f64,
}

impl Event {
    pub fn is_positive(&self) -> bool {
        self.label > 0.5
    }
}
