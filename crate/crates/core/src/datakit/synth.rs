//! Synthetic intersection scenes: a light box with a straight and a left
//! indicator over a textured background.
//!
//! Pixel values are computed with integer arithmetic only, so a seed gives
//! the same bytes on every platform.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::labels::{label_from_lights, LightState, RightOfWayLabel};
use super::ppm::RgbImage;
use crate::error::{Error, Result};
use crate::tensor::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Day,
    /// Dark, low-contrast background with distractor light blobs.
    Night,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Day => "day",
            Scenario::Night => "night",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(Scenario::Day),
            "night" => Ok(Scenario::Night),
            other => Err(Error::config("scenario", format!("expected `day` or `night`, got `{other}`"))),
        }
    }
}

/// Shape of the left-turn indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeftShape {
    Circle,
    Arrow,
}

impl fmt::Display for LeftShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeftShape::Circle => "circle",
            LeftShape::Arrow => "arrow",
        })
    }
}

impl FromStr for LeftShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circle" => Ok(LeftShape::Circle),
            "arrow" => Ok(LeftShape::Arrow),
            other => Err(Error::config("left_shape", format!("expected `circle` or `arrow`, got `{other}`"))),
        }
    }
}

/// Frames spent in each phase of a green → yellow → red cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cycle {
    pub green: u32,
    pub yellow: u32,
    pub red: u32,
}

impl Cycle {
    pub fn period(&self) -> u32 {
        self.green + self.yellow + self.red
    }

    pub fn state_at(&self, t: u32) -> LightState {
        let pos = t % self.period();
        if pos < self.green {
            LightState::Green
        } else if pos < self.green + self.yellow {
            LightState::Yellow
        } else {
            LightState::Red
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub num_frames: usize,
    pub width: usize,
    pub height: usize,
    pub straight_cycle: Cycle,
    pub left_cycle: Cycle,
    /// Starting offset into each cycle; drawn from the seed when `None`.
    pub straight_phase: Option<u32>,
    pub left_phase: Option<u32>,
    pub left_shape: LeftShape,
    /// Chance that a frame's light box is hidden behind an occluder.
    pub occlusion_prob: f64,
    /// Top-left corner of the light box; a fixed default when `None`.
    pub light_box: Option<(usize, usize)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scenario: Scenario::Day,
            num_frames: 30,
            width: 128,
            height: 64,
            straight_cycle: Cycle {
                green: 6,
                yellow: 2,
                red: 6,
            },
            left_cycle: Cycle {
                green: 5,
                yellow: 2,
                red: 4,
            },
            straight_phase: None,
            left_phase: None,
            left_shape: LeftShape::Circle,
            occlusion_prob: 0.0,
            light_box: None,
        }
    }
}

/// Placement of the light box and its two indicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LightBoxGeometry {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub radius: usize,
    pub straight_centre: (usize, usize),
    pub left_centre: (usize, usize),
}

impl LightBoxGeometry {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        if cfg.width < 16 || cfg.height < 16 {
            return Err(Error::contract(format!(
                "scene size {}×{} is below the 16×16 minimum",
                cfg.width, cfg.height
            )));
        }
        let radius = (cfg.width.min(cfg.height) / 10).max(2);
        let width = 2 * radius + 4;
        let height = 4 * radius + 6;
        let (x, y) = cfg.light_box.unwrap_or((cfg.width * 5 / 8, cfg.height / 8));
        if x + width > cfg.width || y + height > cfg.height {
            return Err(Error::contract(format!(
                "light box {width}×{height} at ({x}, {y}) does not fit a {}×{} scene",
                cfg.width, cfg.height
            )));
        }
        let cx = x + width / 2;
        Ok(LightBoxGeometry {
            x,
            y,
            width,
            height,
            radius,
            straight_centre: (cx, y + 2 + radius),
            left_centre: (cx, y + height - 3 - radius),
        })
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }
}

/// Rendered frames with the generator's ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub frames: Vec<RgbImage>,
    /// `(straight, left)` per frame.
    pub lights: Vec<(LightState, LightState)>,
    pub occluded: Vec<bool>,
    /// Distractor blobs drawn across all frames.
    pub distractors: usize,
    pub geometry: LightBoxGeometry,
}

impl SynthScene {
    pub fn labels(&self) -> Vec<RightOfWayLabel> {
        self.lights.iter().map(|&(s, l)| label_from_lights(s, l)).collect()
    }
}

fn hash(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lamp_colour(state: LightState) -> [u8; 3] {
    match state {
        LightState::Green => [40, 230, 90],
        LightState::Yellow => [250, 200, 20],
        LightState::Red => [240, 30, 30],
        LightState::Off => [45, 45, 45],
    }
}

const HOUSING: [u8; 3] = [18, 18, 18];
const OCCLUDER: [u8; 3] = [110, 105, 100];
const DISTRACTOR_COLOURS: [[u8; 3]; 4] = [[255, 240, 200], [240, 60, 40], [250, 190, 40], [90, 220, 120]];

fn in_circle(dx: i64, dy: i64, r: i64) -> bool {
    dx * dx + dy * dy <= r * r
}

/// Left-pointing arrow: a triangular head with its tip at `dx = -r` and a
/// shaft to the right.
fn in_arrow(dx: i64, dy: i64, r: i64) -> bool {
    if dx < -r || dx > r || dy.abs() > r {
        return false;
    }
    if dx <= 0 {
        dy.abs() <= dx + r
    } else {
        dy.abs() <= (r / 3).max(1)
    }
}

fn paint(img: &mut RgbImage, centre: (usize, usize), r: usize, colour: [u8; 3], mask: fn(i64, i64, i64) -> bool) {
    let r = r as i64;
    let (cx, cy) = (centre.0 as i64, centre.1 as i64);
    for y in (cy - r).max(0)..=(cy + r).min(img.height() as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(img.width() as i64 - 1) {
            if mask(x - cx, y - cy, r) {
                img.set(x as usize, y as usize, colour);
            }
        }
    }
}

fn background(cfg: &SynthConfig, texture_seed: u64, frame: u64) -> Result<RgbImage> {
    let mut img = RgbImage::new(cfg.width, cfg.height)?;
    let (base, amplitude, grain, gradient) = match cfg.scenario {
        Scenario::Day => ([120u32, 150, 185], 70u64, 9u64, 40u32),
        Scenario::Night => ([16, 18, 30], 14, 4, 10),
    };
    for y in 0..cfg.height {
        // Brighter towards the top of the frame.
        let shade = (cfg.height - y) as u32 * gradient / cfg.height as u32;
        for x in 0..cfg.width {
            let h = hash(texture_seed ^ ((y as u64) << 32 | x as u64));
            let g = hash(h ^ frame.wrapping_mul(0x2545_F491_4F6C_DD1D));
            let mut px = [0u8; 3];
            for c in 0..3 {
                let tex = ((h >> (16 * c)) & 0xFFFF) % (amplitude + 1);
                let jitter = ((g >> (16 * c)) & 0xFFFF) % (grain + 1);
                let v = base[c] + shade + tex as u32 + jitter as u32;
                px[c] = v.saturating_sub((amplitude / 2 + grain / 2) as u32).min(255) as u8;
            }
            img.set(x, y, px);
        }
    }
    Ok(img)
}

/// Renders `cfg.num_frames` frames of one drive.
pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<SynthScene> {
    if cfg.num_frames == 0 {
        return Err(Error::contract("a scene needs at least one frame"));
    }
    if !(0.0..=1.0).contains(&cfg.occlusion_prob) {
        return Err(Error::config("occlusion_prob", "must lie in [0, 1]"));
    }
    for cycle in [cfg.straight_cycle, cfg.left_cycle] {
        if cycle.period() == 0 {
            return Err(Error::config("cycle", "a light cycle needs at least one frame"));
        }
    }
    let geom = LightBoxGeometry::new(cfg)?;
    let mut events = rng::stream(seed, "synth.events");
    let straight_phase = cfg
        .straight_phase
        .unwrap_or_else(|| events.random_range(0..cfg.straight_cycle.period()));
    let left_phase = cfg
        .left_phase
        .unwrap_or_else(|| events.random_range(0..cfg.left_cycle.period()));
    let texture_seed = hash(seed ^ 0x0074_6578_7475_7265);

    let mut scene = SynthScene {
        frames: Vec::with_capacity(cfg.num_frames),
        lights: Vec::with_capacity(cfg.num_frames),
        occluded: Vec::with_capacity(cfg.num_frames),
        distractors: 0,
        geometry: geom,
    };
    let left_mask = match cfg.left_shape {
        LeftShape::Circle => in_circle,
        LeftShape::Arrow => in_arrow,
    };
    for t in 0..cfg.num_frames {
        let straight = cfg.straight_cycle.state_at(t as u32 + straight_phase);
        let left = cfg.left_cycle.state_at(t as u32 + left_phase);
        let mut img = background(cfg, texture_seed, t as u64)?;

        if cfg.scenario == Scenario::Night {
            let count = events.random_range(1..=3usize);
            let mut drawn = 0;
            for _ in 0..count {
                let r = geom.radius.saturating_sub(1).max(1) + events.random_range(0..3usize);
                let colour = DISTRACTOR_COLOURS[events.random_range(0..DISTRACTOR_COLOURS.len())];
                // Blobs keep clear of the light box; give up after a few draws.
                let placed = (0..64).find_map(|_| {
                    let (cx, cy) = (events.random_range(0..cfg.width), events.random_range(0..cfg.height));
                    let clear = cx + r + 1 < geom.x
                        || cx > geom.x + geom.width + r
                        || cy + r + 1 < geom.y
                        || cy > geom.y + geom.height + r;
                    clear.then_some((cx, cy))
                });
                if let Some(centre) = placed {
                    paint(&mut img, centre, r, colour, in_circle);
                    drawn += 1;
                }
            }
            scene.distractors += drawn;
        }

        for y in geom.y..geom.y + geom.height {
            for x in geom.x..geom.x + geom.width {
                img.set(x, y, HOUSING);
            }
        }
        paint(&mut img, geom.straight_centre, geom.radius, lamp_colour(straight), in_circle);
        paint(&mut img, geom.left_centre, geom.radius, lamp_colour(left), left_mask);

        let occluded = cfg.occlusion_prob > 0.0 && events.random_bool(cfg.occlusion_prob);
        if occluded {
            for y in geom.y.saturating_sub(1)..(geom.y + geom.height + 1).min(cfg.height) {
                for x in geom.x.saturating_sub(1)..(geom.x + geom.width + 1).min(cfg.width) {
                    img.set(x, y, OCCLUDER);
                }
            }
        }

        scene.frames.push(img);
        scene.lights.push((straight, left));
        scene.occluded.push(occluded);
    }
    Ok(scene)
}
