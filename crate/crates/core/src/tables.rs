//! Reference tables used by tests, benches and the CLI.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::geometry::{
    build_table, AmbientKind, ComponentDescription, GeometryError, Table, TableDescription,
};
use crate::vec2::Vec2;

fn seg(a: [f64; 2], b: [f64; 2]) -> ComponentDescription {
    ComponentDescription::Segment { a, b }
}

pub fn square_description() -> TableDescription {
    TableDescription {
        ambient: AmbientKind::Plane,
        rectangle: None,
        components: vec![
            seg([0.0, 0.0], [1.0, 0.0]),
            seg([1.0, 0.0], [1.0, 1.0]),
            seg([1.0, 1.0], [0.0, 1.0]),
            seg([0.0, 1.0], [0.0, 0.0]),
        ],
    }
}

/// Unit square billiard: four flat sides, no expansion.
pub fn square() -> Table {
    build_table(&square_description()).expect("square is valid")
}

pub fn torus_disk_description(width: f64, height: f64, center: Vec2, radius: f64) -> TableDescription {
    TableDescription {
        ambient: AmbientKind::Torus,
        rectangle: Some([width, height]),
        components: vec![ComponentDescription::Arc {
            center: center.into(),
            radius,
            from_angle: 0.0,
            to_angle: TAU,
            convex_inward: true,
        }],
    }
}

pub fn torus_disk(width: f64, height: f64, center: Vec2, radius: f64) -> Result<Table, GeometryError> {
    build_table(&torus_disk_description(width, height, center, radius))
}

pub fn sinai_description() -> TableDescription {
    torus_disk_description(1.0, 1.0, Vec2::new(0.5, 0.5), 0.4)
}

/// Unit torus with a disk of radius 0.4 at its center.
pub fn sinai() -> Table {
    build_table(&sinai_description()).expect("sinai table is valid")
}

/// Radius of the quarter-circle pocket cut out of the square's top-right corner.
pub const POCKET_RADIUS: f64 = 0.3;

pub fn pocket_description() -> TableDescription {
    let r = POCKET_RADIUS;
    TableDescription {
        ambient: AmbientKind::Plane,
        rectangle: None,
        components: vec![
            seg([0.0, 0.0], [1.0, 0.0]),
            seg([1.0, 0.0], [1.0, 1.0 - r]),
            ComponentDescription::Arc {
                center: [1.0, 1.0],
                radius: r,
                from_angle: -FRAC_PI_2,
                to_angle: -PI,
                convex_inward: true,
            },
            seg([1.0 - r, 1.0], [0.0, 1.0]),
            seg([0.0, 1.0], [0.0, 0.0]),
        ],
    }
}

/// Unit square whose top-right corner is replaced by a dispersing
/// quarter circle centered at (1, 1).
pub fn pocket() -> Table {
    build_table(&pocket_description()).expect("pocket table is valid")
}

/// Looks up a reference table by name.
pub fn by_name(name: &str) -> Option<Table> {
    match name {
        "square" => Some(square()),
        "sinai" => Some(sinai()),
        "pocket" => Some(pocket()),
        _ => None,
    }
}
