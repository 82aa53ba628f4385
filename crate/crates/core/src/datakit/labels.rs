use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// What one direction's indicator shows in a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LightState {
    Green,
    Yellow,
    Red,
    /// Dark or unreadable.
    Off,
}

impl LightState {
    pub const ALL: [LightState; 4] = [LightState::Green, LightState::Yellow, LightState::Red, LightState::Off];

    /// Only green grants the right of way; anything else is treated as stop.
    pub fn status(self) -> Status {
        match self {
            LightState::Green => Status::Pass,
            LightState::Yellow | LightState::Red | LightState::Off => Status::Stop,
        }
    }
}

impl fmt::Display for LightState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LightState::Green => "green",
            LightState::Yellow => "yellow",
            LightState::Red => "red",
            LightState::Off => "off",
        })
    }
}

impl FromStr for LightState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "green" => Ok(LightState::Green),
            "yellow" => Ok(LightState::Yellow),
            "red" => Ok(LightState::Red),
            "off" | "unknown" => Ok(LightState::Off),
            other => Err(Error::contract(format!("unknown light state `{other}`"))),
        }
    }
}

/// Right of way of one direction. The discriminant is the decoder class
/// index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Pass = 0,
    Stop = 1,
}

impl Status {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Status::Pass),
            1 => Ok(Status::Stop),
            _ => Err(Error::contract(format!("class index {i} is neither pass (0) nor stop (1)"))),
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Stop => "stop",
        })
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pass" => Ok(Status::Pass),
            "stop" => Ok(Status::Stop),
            other => Err(Error::contract(format!("expected `pass` or `stop`, got `{other}`"))),
        }
    }
}

/// Joint right of way for going straight and turning left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RightOfWayLabel {
    pub straight: Status,
    pub left: Status,
}

impl RightOfWayLabel {
    pub fn new(straight: Status, left: Status) -> Self {
        RightOfWayLabel { straight, left }
    }

    /// The four joint states in a fixed order.
    pub const ALL: [RightOfWayLabel; 4] = [
        RightOfWayLabel { straight: Status::Pass, left: Status::Pass },
        RightOfWayLabel { straight: Status::Pass, left: Status::Stop },
        RightOfWayLabel { straight: Status::Stop, left: Status::Pass },
        RightOfWayLabel { straight: Status::Stop, left: Status::Stop },
    ];

    /// Position in [`ALL`](Self::ALL).
    pub fn joint_index(self) -> usize {
        2 * self.straight.index() + self.left.index()
    }

    pub fn targets(self) -> (usize, usize) {
        (self.straight.index(), self.left.index())
    }
}

impl fmt::Display for RightOfWayLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.straight, self.left)
    }
}

pub fn label_from_lights(straight: LightState, left: LightState) -> RightOfWayLabel {
    RightOfWayLabel::new(straight.status(), left.status())
}
