//! Press-count arithmetic: how many presses of a flat sensor are needed to
//! cover a fabric sample that the roller covers in a single pass.

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageNote {
    pub fabric_mm: [f64; 2],
    pub sensing_area_mm: [f64; 2],
    /// Presses across and along the fabric, best sensor orientation.
    pub grid: [u64; 2],
    pub presses: u64,
    pub rolls: u64,
    pub text: String,
}

fn ceil_div(total: f64, step: f64) -> u64 {
    // tolerate float noise in exact multiples
    ((total / step) - 1e-9).ceil().max(1.0) as u64
}

/// Presses needed to tile `fabric_mm` with a `sensing_area_mm` window,
/// taking the better of the two sensor orientations.
pub fn coverage_note(fabric_mm: [f64; 2], sensing_area_mm: [f64; 2]) -> CoverageNote {
    let [fw, fl] = fabric_mm;
    let [sw, sl] = sensing_area_mm;
    let upright = [ceil_div(fw, sw), ceil_div(fl, sl)];
    let turned = [ceil_div(fw, sl), ceil_div(fl, sw)];
    let grid = if turned[0] * turned[1] < upright[0] * upright[1] { turned } else { upright };
    let (along_w, along_l) = if grid == upright { (sw, sl) } else { (sl, sw) };
    let presses = grid[0] * grid[1];
    let text = format!(
        "{fw} x {fl} mm fabric with a {sw} x {sl} mm flat sensor: ceil({fw}/{along_w}) * ceil({fl}/{along_l}) \
         = {} * {} = {presses} presses; the roller covers it in 1 roll",
        grid[0], grid[1]
    );
    CoverageNote { fabric_mm, sensing_area_mm, grid, presses, rolls: 1, text }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fabric_needs_49_presses() {
        let n = coverage_note([80.0, 110.0], [16.0, 12.0]);
        assert_eq!(n.presses, 49);
        assert_eq!(n.grid, [7, 7]);
    }

    #[test]
    fn sensor_as_large_as_fabric() {
        assert_eq!(coverage_note([80.0, 110.0], [80.0, 110.0]).presses, 1);
    }

    #[test]
    fn square_centimetre_sensor() {
        assert_eq!(coverage_note([80.0, 110.0], [10.0, 10.0]).presses, 88);
    }
}
