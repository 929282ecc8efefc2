//! Conversions between pipeline fields and f32 raster planes.
//!
//! Invalid flow is stored as NaN. Depth is valid when finite, positive and
//! within the configured `z_max`.

use crate::geometry::{DepthMap, FlowField};
use crate::grid::Grid;
use crate::error::Result;

pub fn flow_planes(flow: &FlowField) -> [Grid<f32>; 2] {
    let plane = |g: &Grid<f64>| {
        Grid::from_fn(g.width(), g.height(), |c, r| {
            if *flow.valid.get(c, r) { *g.get(c, r) as f32 } else { f32::NAN }
        })
    };
    [plane(&flow.u), plane(&flow.v)]
}

pub fn flow_from_planes(u: &Grid<f32>, v: &Grid<f32>, dt: f64) -> Result<FlowField> {
    v.ensure_dims(u.dims())?;
    let valid = Grid::from_fn(u.width(), u.height(), |c, r| u.get(c, r).is_finite() && v.get(c, r).is_finite());
    let widen = |g: &Grid<f32>| g.map(|&x| if x.is_finite() { x as f64 } else { 0.0 });
    FlowField::new(widen(u), widen(v), valid, dt)
}

pub fn depth_plane(depth: &DepthMap) -> Grid<f32> {
    Grid::from_fn(depth.z.width(), depth.z.height(), |c, r| {
        if *depth.valid.get(c, r) { *depth.z.get(c, r) as f32 } else { f32::NAN }
    })
}

pub fn depth_from_plane(z: &Grid<f32>, z_max: f64) -> DepthMap {
    DepthMap::from_depths(z.map(|&d| d as f64), z_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_pixels_become_nan_and_back() {
        let mut flow = FlowField::constant(4, 3, 1.25, -0.5, 0.025);
        *flow.valid.get_mut(2, 1) = false;
        let [u, v] = flow_planes(&flow);
        assert!(u.get(2, 1).is_nan() && v.get(2, 1).is_nan());
        let back = flow_from_planes(&u, &v, 0.025).unwrap();
        assert_eq!(back.valid, flow.valid);
        assert_eq!(*back.u.get(0, 0), 1.25);
        assert_eq!(*back.u.get(2, 1), 0.0);

        let depth = DepthMap::from_depths(Grid::from_fn(4, 3, |c, _| c as f64), 2.5);
        let z = depth_plane(&depth);
        assert!(z.get(0, 0).is_nan() && z.get(3, 0).is_nan());
        assert_eq!(depth_from_plane(&z, 2.5).valid, depth.valid);
    }
}
