use std::sync::Arc;

use mfao::cascade::PairingDensity;
use mfao::coefficients::{phantom_library, PhantomParams};
use mfao::error::Component;
use mfao::functional::{h_hat_from_boundary, h_oracle, h_recover, QLattice};
use mfao::geometry::{AngularGrid, BoundaryMesh, Discretization, Domain, SpatialGrid};
use mfao::reconstruct::{run_point_pipeline, OracleProvider, PointDesign};
use mfao::stats::rel_linf;
use mfao::transport::field::{read_field, write_radiance};
use mfao::transport::{BoundaryField, FieldData, Provenance, SolveOptions, SpatialProfile, Transport};

fn setup(n: usize, m: usize) -> Transport {
    let d = Domain::unit_box(2);
    let disc = Arc::new(Discretization::new(d, SpatialGrid::cubic(&d, n).unwrap(), AngularGrid::circle(m).unwrap()).unwrap());
    let ph = phantom_library("gaussian-bumps", &PhantomParams::default(), &d).unwrap();
    Transport::new(disc, &ph).unwrap()
}

fn gaussian(t: &Transport, component: Component, center: [f64; 3]) -> BoundaryField<f64> {
    BoundaryField::Separable {
        component,
        angular: vec![1.0; t.disc.directions()],
        spatial: SpatialProfile::Gaussian { center, width: 0.5 },
    }
}

#[test]
fn boundary_data_recovers_the_internal_functional() {
    let t = setup(25, 16);
    let opts = SolveOptions::default();
    let f = gaussian(&t, Component::Incoming, [0.0, 0.3, 0.0]);
    let g = gaussian(&t, Component::Outgoing, [1.0, 0.7, 0.0]);
    let u00 = t.solve_rte(&f, &opts).unwrap().field;
    let mesh = Arc::new(BoundaryMesh::new(&t.disc.domain, &t.disc.grid, 2));
    let dens = PairingDensity::new(&t, &u00, &g, &mesh, &opts).unwrap();
    let lattice = QLattice::for_grid(&t.disc.grid);
    let coeffs = h_hat_from_boundary(&dens.pairings(&lattice.points(), 0.5)).unwrap();
    let h = h_recover(&coeffs, &lattice, &t.disc.grid).unwrap();
    assert_eq!(h.provenance, Provenance::FourierRecovered);

    let oracle = h_oracle(&t, &f, &g, &opts).unwrap();
    let grid = &t.disc.grid;
    let err = rel_linf(&h.real(), &oracle.real(), |n| grid.boundary_layer(n) >= 3);
    assert!(err < 0.05, "interior mismatch {err}");
}

#[test]
fn radiance_survives_the_field_format() {
    let t = setup(17, 16);
    let u = t.solve_rte(&gaussian(&t, Component::Incoming, [0.0, 0.5, 0.0]), &SolveOptions::default()).unwrap().field;
    let mut buf = Vec::new();
    write_radiance(&mut buf, &u).unwrap();
    let (header, data) = read_field(&mut buf.as_slice()).unwrap();
    assert_eq!(header.provenance, Provenance::Radiance);
    assert_eq!(header.directions as usize, t.disc.directions());
    let FieldData::Real(values) = data else { panic!("complex payload") };
    for n in [0, 40, t.disc.nodes() - 1] {
        for j in 0..t.disc.directions() {
            assert_eq!(values[n * t.disc.directions() + j], u.get(n, j));
        }
    }
}

#[test]
fn point_pipeline_runs_on_a_coarse_grid() {
    let t = setup(33, 32);
    let opts = SolveOptions::default();
    let r = run_point_pipeline(&t, &OracleProvider { opts }, &PointDesign::default(), &opts).unwrap();
    assert_eq!(r.provenance, Provenance::Oracle);
    assert_eq!(r.sigma.len(), t.disc.grid.len());
    assert!(r.metrics.sigma_rel_linf.unwrap() < 0.1);
}
