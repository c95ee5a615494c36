//! Layer-adapted tensor mesh for the axisymmetric domain.
//!
//! The axial mesh is piecewise uniform: every layer boundary coincides with a
//! node, and the RPE gets an even interval count (at least two) so that a
//! node falls exactly on its mid-depth — the peak-temperature location.
//! Interval counts are distributed proportionally to the square root of
//! segment thickness, which resolves the micrometer layers without starving
//! the bulk. The radial mesh is uniform and must
//! place a node exactly on the beam radius so that the beam-average output
//! quadrature has a clean support.

use crate::error::{Error, Result};

/// Axial segment kind, in beam order (the beam enters through the retina).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    MarginTop,
    Retina,
    Rpe,
    Unpigmented,
    Choroid,
    Sclera,
    MarginBottom,
}

#[derive(Clone, Debug)]
pub struct SegmentInfo {
    pub layer: Layer,
    /// Index of the node at the anterior boundary of the segment.
    pub first: usize,
    pub intervals: usize,
    pub thickness: f64,
    /// Uniform spacing inside the segment.
    pub h: f64,
    /// Physical coordinate of the anterior boundary.
    pub start: f64,
}

/// Axial mesh: nodes from z = 0 (anterior boundary, ahead of the retina) to
/// z = total extent, increasing along the beam.
#[derive(Clone, Debug)]
pub struct AxialMesh {
    pub z: Vec<f64>,
    pub segments: Vec<SegmentInfo>,
    /// Node sitting exactly at the RPE mid-depth.
    pub rpe_mid_node: usize,
}

impl AxialMesh {
    pub fn n_nodes(&self) -> usize {
        self.z.len()
    }

    pub fn segment(&self, layer: Layer) -> Option<&SegmentInfo> {
        self.segments.iter().find(|s| s.layer == layer)
    }

    /// Layer owning node `j`: segments own the half-open node range
    /// [first, first + intervals), and the last segment also owns its end.
    pub fn layer_of_node(&self, j: usize) -> Layer {
        for s in &self.segments {
            if j >= s.first && j < s.first + s.intervals {
                return s.layer;
            }
        }
        self.segments.last().expect("mesh has segments").layer
    }
}

/// Distribute `total` intervals over segments with given minimum counts,
/// extra capacity proportional to sqrt(thickness) by largest remainder.
fn allocate_intervals(lengths: &[f64], mins: &[usize], total: usize) -> Result<Vec<usize>> {
    let min_sum: usize = mins.iter().sum();
    if total < min_sum {
        return Err(Error::InvalidGrid(format!(
            "axial mesh needs at least {min_sum} intervals for the layer minimums, got {total}"
        )));
    }
    let extra = total - min_sum;
    let weights: Vec<f64> = lengths.iter().map(|l| l.sqrt()).collect();
    let wsum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| extra as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|x| x.floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    // Largest fractional remainder; ties resolved by segment order.
    let mut rema: Vec<(usize, f64)> = ideal
        .iter()
        .enumerate()
        .map(|(k, x)| (k, x - x.floor()))
        .collect();
    rema.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let mut cursor = 0;
    while assigned < extra {
        counts[rema[cursor % rema.len()].0] += 1;
        assigned += 1;
        cursor += 1;
    }
    Ok(mins.iter().zip(&counts).map(|(m, c)| m + c).collect())
}

/// Build the axial mesh. `margins = (above retina, below sclera)`; tissue
/// thicknesses in beam order `(retina, rpe, unpigmented, choroid, sclera)`.
pub fn build_axial(
    tissue: (f64, f64, f64, f64, f64),
    margins: (f64, f64),
    n_z: usize,
) -> Result<AxialMesh> {
    let (d_retina, d_rpe, d_up, d_ch, d_sc) = tissue;
    let mut layers: Vec<(Layer, f64, usize)> = Vec::new();
    if margins.0 > 0.0 {
        layers.push((Layer::MarginTop, margins.0, 1));
    }
    layers.push((Layer::Retina, d_retina, 1));
    layers.push((Layer::Rpe, d_rpe, 2));
    layers.push((Layer::Unpigmented, d_up, 1));
    layers.push((Layer::Choroid, d_ch, 1));
    layers.push((Layer::Sclera, d_sc, 1));
    if margins.1 > 0.0 {
        layers.push((Layer::MarginBottom, margins.1, 1));
    }

    if n_z < 2 {
        return Err(Error::InvalidGrid(format!("n_z = {n_z} too small")));
    }
    let lengths: Vec<f64> = layers.iter().map(|l| l.1).collect();
    let mins: Vec<usize> = layers.iter().map(|l| l.2).collect();
    let mut counts = allocate_intervals(&lengths, &mins, n_z - 1)?;

    // The RPE needs an even interval count for an exact mid-depth node.
    let rpe_pos = layers
        .iter()
        .position(|l| l.0 == Layer::Rpe)
        .expect("RPE segment present");
    if counts[rpe_pos] % 2 == 1 {
        // Steal one interval from the most-populated other segment that can
        // spare it; otherwise give one up from the RPE itself.
        let donor = counts
            .iter()
            .enumerate()
            .filter(|&(k, &c)| k != rpe_pos && c > mins[k])
            .max_by_key(|&(_, &c)| c)
            .map(|(k, _)| k);
        match donor {
            Some(k) => {
                counts[k] -= 1;
                counts[rpe_pos] += 1;
            }
            None => counts[rpe_pos] -= 1,
        }
    }

    // Lay out nodes.
    let mut z = vec![0.0_f64];
    let mut segments = Vec::with_capacity(layers.len());
    let mut start = 0.0_f64;
    let mut first = 0usize;
    for (k, &(layer, length, _)) in layers.iter().enumerate() {
        let m = counts[k];
        let h = length / m as f64;
        let end = start + length;
        for t in 1..=m {
            let zt = if t == m { end } else { start + h * t as f64 };
            z.push(zt);
        }
        segments.push(SegmentInfo {
            layer,
            first,
            intervals: m,
            thickness: length,
            h,
            start,
        });
        first += m;
        start = end;
    }
    debug_assert_eq!(z.len(), n_z);
    if z.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("non-monotone axial mesh".into()));
    }

    let rpe = &segments[rpe_pos];
    let rpe_mid_node = rpe.first + rpe.intervals / 2;
    Ok(AxialMesh {
        z,
        segments,
        rpe_mid_node,
    })
}

/// Uniform radial mesh with nodes i * h, i = 0..n_r-1, h = radius/(n_r - 1).
#[derive(Clone, Debug)]
pub struct RadialMesh {
    pub h: f64,
    pub n_r: usize,
    /// Index of the node sitting exactly on the beam radius.
    pub beam_node: usize,
}

pub fn build_radial(radius: f64, beam_radius: f64, n_r: usize) -> Result<RadialMesh> {
    if n_r < 3 {
        return Err(Error::InvalidGrid(format!("n_r = {n_r} must be >= 3")));
    }
    if !(beam_radius > 0.0 && beam_radius < radius) {
        return Err(Error::InvalidGrid(format!(
            "beam radius {beam_radius} must lie strictly inside the domain radius {radius}"
        )));
    }
    let h = radius / (n_r - 1) as f64;
    let k = (beam_radius / h).round() as usize;
    if k == 0 || (k as f64 * h - beam_radius).abs() > 1e-9 * radius {
        return Err(Error::InvalidGrid(format!(
            "beam radius {beam_radius} must coincide with a radial node (spacing {h}); \
             choose n_r so that (n_r - 1) * beam_radius / radius is an integer"
        )));
    }
    Ok(RadialMesh {
        h,
        n_r,
        beam_node: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TISSUE: (f64, f64, f64, f64, f64) = (190e-6, 6e-6, 4e-6, 400e-6, 139e-6);

    #[test]
    fn axial_mesh_hits_layer_boundaries() {
        let mesh = build_axial(TISSUE, (200e-6, 200e-6), 81).unwrap();
        assert_eq!(mesh.n_nodes(), 81);
        // Total extent: tissue stack plus both margins.
        let extent = 190e-6 + 6e-6 + 4e-6 + 400e-6 + 139e-6 + 2.0 * 200e-6;
        let last = *mesh.z.last().unwrap();
        assert!((last - extent).abs() < 1e-12);
        // Every segment boundary is a node and interval counts respect minimums.
        let mut acc = 0.0;
        for s in &mesh.segments {
            assert!((mesh.z[s.first] - acc).abs() < 1e-12, "{:?}", s.layer);
            acc += s.thickness;
            let min = match s.layer {
                Layer::Rpe => 2,
                _ => 1,
            };
            assert!(s.intervals >= min, "{:?} has {} intervals", s.layer, s.intervals);
        }
        // RPE: even interval count, exact mid node.
        let rpe = mesh.segment(Layer::Rpe).unwrap();
        assert_eq!(rpe.intervals % 2, 0);
        let mid = mesh.z[mesh.rpe_mid_node];
        let expect = mesh.z[rpe.first] + rpe.thickness / 2.0;
        assert!((mid - expect).abs() < 1e-12);
    }

    #[test]
    fn node_membership_is_half_open() {
        let mesh = build_axial(TISSUE, (50e-6, 50e-6), 41).unwrap();
        let rpe = mesh.segment(Layer::Rpe).unwrap();
        // Node at the RPE anterior boundary belongs to the RPE...
        assert_eq!(mesh.layer_of_node(rpe.first), Layer::Rpe);
        // ...and the node at its posterior boundary to the next layer.
        assert_eq!(
            mesh.layer_of_node(rpe.first + rpe.intervals),
            Layer::Unpigmented
        );
    }

    #[test]
    fn too_few_nodes_is_rejected() {
        assert!(matches!(
            build_axial(TISSUE, (200e-6, 200e-6), 8),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn radial_mesh_alignment() {
        let r = build_radial(1e-3, 1e-4, 31).unwrap();
        assert_eq!(r.beam_node, 3);
        // Misaligned beam radius is rejected.
        assert!(matches!(
            build_radial(1e-3, 1e-4, 32),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn zero_margins_are_skipped() {
        let mesh = build_axial(TISSUE, (0.0, 0.0), 33).unwrap();
        assert!(mesh.segment(Layer::MarginTop).is_none());
        assert!(mesh.segment(Layer::MarginBottom).is_none());
        assert_eq!(mesh.segments.first().unwrap().layer, Layer::Retina);
    }
}
