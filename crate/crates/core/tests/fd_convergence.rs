//! Finite-difference jets against exact jets under grid halving.

use isojet::combinatorics::MultiIndex;
use isojet::grid::{FdOrder, GridField, GridPatch};
use isojet::expr::{Expr, Trig, TrigKind};
use isojet::jet::AnalyticMap;
use isojet::poly::int;

/// `(sin x + x²·sin y, cos y + x y⁴)`: the mixed partials are not
/// reproduced exactly by any stencil.
fn test_map() -> AnalyticMap {
    let mut a = Expr::trig(2, TrigKind::Sin, 0);
    a.add_atom(vec![2, 0], Some(Trig { kind: TrigKind::Sin, axis: 1 }), int(1));
    let b = Expr::trig(2, TrigKind::Cos, 1).add(&Expr::monomial(vec![1, 4], int(1)));
    AnalyticMap::new(2, vec![a, b]).unwrap()
}

fn max_error(grid: &GridPatch, order: FdOrder, idx: &[usize]) -> f64 {
    let f = test_map();
    let field = GridField::from_fn(grid.clone(), f.q(), |x| f.eval(x));
    let mut d = field.clone();
    for &a in idx {
        d = d.derivative_with(a, order);
    }
    let exact = f.derivative(&MultiIndex::new(idx.to_vec()));
    // The centre point is interior at every level.
    let c = grid.center_index();
    let x = grid.point(c);
    d.values[c].iter().zip(&exact).map(|(v, e)| (v - e.eval(&x)).abs()).fold(0.0, f64::max)
}

fn ratios(order: FdOrder, idx: &[usize]) -> Vec<f64> {
    let mut grid = GridPatch::centered(&[0.3, -0.2], 0.1, 8).unwrap();
    let mut errs = Vec::new();
    for _ in 0..3 {
        errs.push(max_error(&grid, order, idx));
        grid = grid.refined();
    }
    errs.windows(2).map(|w| w[0] / w[1]).collect()
}

#[test]
fn second_order_stencils_converge_quadratically() {
    for idx in [vec![0], vec![1], vec![0, 1], vec![1, 1]] {
        for r in ratios(FdOrder::Second, &idx) {
            assert!((3.5..=4.5).contains(&r), "{idx:?}: {r}");
        }
    }
}

#[test]
fn fourth_order_stencils_converge_quartically() {
    for idx in [vec![0], vec![0, 1]] {
        for r in ratios(FdOrder::Fourth, &idx) {
            assert!((13.0..=19.0).contains(&r), "{idx:?}: {r}");
        }
    }
}

