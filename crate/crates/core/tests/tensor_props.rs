use attn_hessian::tensor::{commutation, kron, unvecr, vecr};
use attn_hessian::Mat;
use proptest::prelude::*;

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Mat::from_vec(rows, cols, v).unwrap())
}

fn dims() -> impl Strategy<Value = usize> {
    1usize..4
}

fn close(a: &Mat, b: &Mat) -> bool {
    a.shape() == b.shape() && (a - b).max_abs() <= 1e-12 * (1.0 + a.max_abs())
}

proptest! {
    #[test]
    fn kron_mixed_product((a, b, c, d) in (dims(), dims(), dims(), dims(), dims(), dims())
        .prop_flat_map(|(m, n, p, q, r, s)| (mat(m, n), mat(p, q), mat(n, r), mat(q, s))))
    {
        let lhs = kron(&a, &b).unwrap().dot(&kron(&c, &d).unwrap());
        let rhs = kron(&a.dot(&c), &b.dot(&d)).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn kron_transpose((a, b) in (dims(), dims(), dims(), dims()).prop_flat_map(|(m, n, p, q)| (mat(m, n), mat(p, q)))) {
        let lhs = kron(&a, &b).unwrap().transpose();
        let rhs = kron(&a.transpose(), &b.transpose()).unwrap();
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn vecr_of_triple_product((a, x, b) in (dims(), dims(), dims(), dims())
        .prop_flat_map(|(m, n, p, q)| (mat(m, n), mat(n, p), mat(p, q))))
    {
        let lhs = vecr(&a.dot(&x).dot(&b));
        let rhs = kron(&a, &b.transpose()).unwrap().dot(&vecr(&x));
        prop_assert!(close(&lhs, &rhs));
    }

    #[test]
    fn vecr_through_identity(a in (dims(), dims()).prop_flat_map(|(m, n)| mat(m, n))) {
        let n = a.cols();
        let lhs = vecr(&a);
        let rhs = kron(&a, &Mat::identity(n)).unwrap().dot(&vecr(&Mat::identity(n)));
        prop_assert!(close(&lhs, &rhs));
        prop_assert_eq!(unvecr(&lhs, a.rows(), n).unwrap(), a);
    }

    #[test]
    fn commutation_transposes(a in (dims(), dims()).prop_flat_map(|(m, n)| mat(m, n))) {
        let (m, n) = a.shape();
        let k = commutation(n, m).unwrap();
        prop_assert_eq!(k.dot(&vecr(&a)), vecr(&a.transpose()));
    }

    #[test]
    fn commutation_is_a_permutation(m in 1usize..6, n in 1usize..6) {
        let k = commutation(n, m).unwrap();
        for i in 0..m * n {
            let row = k.row_slice(i);
            prop_assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
        }
        prop_assert!(k.dot(&k.transpose()) == Mat::identity(m * n));
        prop_assert!(k.transpose() == commutation(m, n).unwrap());
    }
}
